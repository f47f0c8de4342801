"""
src package - Source code modules for the AFC spin-wave memory simulator
"""
