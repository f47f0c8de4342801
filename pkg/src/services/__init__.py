"""
services package - Noise filtering, detection, configuration and reporting services
"""
