"""
tools.py - CLI Utilities for the AFC spin-wave memory simulator

This file provides command-line tools for:
- Exporting a comb profile or an echo trace for inspection
- Printing the noise budget attenuation table
- Checking the configuration

Usage:
    python tools.py <command> [options]
"""

import argparse
import sys

import numpy as np

import config
import main as afcsim
from afc_lib import SpectralError, default_echo_halfwidth, extract_echo
from src.services.experiment_config import ConfigError, load_config
from src.services.reporting import format_budget_table, write_table


def _load(args):
    try:
        return load_config(args.config)
    except ConfigError as e:
        print("✗ Invalid configuration:")
        for violation in e.violations:
            print(f"  - {violation}")
        return None


def cmd_export_comb(args):
    """Export the configured comb profile as CSV."""
    print("\n" + "=" * 80)
    print("Comb Profile Export")
    print("=" * 80)

    cfg = _load(args)
    if cfg is None:
        return 2

    try:
        run = afcsim.simulate_optics(cfg)
    except SpectralError as e:
        print(f"\n✗ Error: {e}")
        return 3

    write_table(
        args.out, ["detuning_mhz", "optical_depth"],
        np.column_stack([run.grid.frequencies, run.profile.depth]),
        afcsim.preset_metadata(cfg, "export-comb"),
    )
    print(f"\nPeriod: {run.comb.period * 1e3:.2f} kHz, finesse {run.comb.finesse:.3f}")
    print(f"Tooth FWHM: {run.comb.tooth_width * 1e3:.2f} kHz, peak depth {run.profile.peak_depth:.3f}")
    print(f"\n✓ Wrote {args.out}")
    return 0


def cmd_export_echo(args):
    """Export the AFC output trace and print the echo report."""
    print("\n" + "=" * 80)
    print("Echo Trace Export")
    print("=" * 80)

    cfg = _load(args)
    if cfg is None:
        return 2

    try:
        run = afcsim.simulate_optics(cfg)
        report = extract_echo(
            run.bare, run.timeline.bare_echo_time,
            default_echo_halfwidth(cfg.input.fwhm_us, run.grid.dt),
            input_envelope=run.pulse,
        )
    except SpectralError as e:
        print(f"\n✗ Error: {e}")
        return 3

    times = run.grid.times
    mask = (times >= args.start) & (times <= args.end)
    write_table(
        args.out, ["time_us", "intensity"],
        np.column_stack([times[mask], run.bare.intensity[mask]]),
        afcsim.preset_metadata(cfg, "export-echo"),
    )
    print(f"\nEcho time: {report.echo_time:.3f} us")
    print(f"Echo efficiency: {report.echo_efficiency:.4f}")
    print(f"Transmitted fraction: {report.transmitted_fraction:.4f}")
    print(f"\n✓ Wrote {args.out}")
    return 0


def cmd_noise_budget(args):
    """Print the per-source, per-stage noise budget."""
    print("\n" + "=" * 80)
    print("Noise Budget")
    print("=" * 80)

    cfg = _load(args)
    if cfg is None:
        return 2

    run = afcsim.simulate_optics(cfg)
    target = cfg.detection.noise_floor_target if args.calibrate else None
    _, budget, _ = afcsim.build_noise(cfg, run, target_floor=target)
    window = budget.window
    print(f"\nEcho window: [{window[0]:.2f}, {window[1]:.2f}] us")
    print(format_budget_table(budget.to_dict()))
    return 0


def cmd_config_check(args):
    """Check configuration."""
    print("\n" + "=" * 80)
    print("Configuration Check")
    print("=" * 80)

    print(f"\nLog level: {config.LOG_LEVEL}")
    print(f"Log file: {config.LOG_FILE}")
    print(f"Output directory: {config.OUTPUT_DIR}")
    print(f"Default seed: {config.DEFAULT_SEED}")

    cfg = _load(args)
    if cfg is None:
        return 2

    grid = cfg.spectral_grid()
    print(f"\nGrid: {grid.span:g} MHz, {grid.n_points} points, {grid.resolution * 1e3:.3f} kHz resolution")
    print(f"Time window: {grid.time_window:g} us")
    print(f"Content hash: {cfg.content_hash()}")
    print("\n✓ Configuration is valid")
    return 0


def main():
    """Main entry point for tools CLI."""
    parser = argparse.ArgumentParser(
        description='AFC Memory Simulator - CLI Tools',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    # Export comb
    parser_comb = subparsers.add_parser('export-comb', help='Export the comb profile')
    parser_comb.add_argument('--config', default=None, help='JSON config file')
    parser_comb.add_argument('--out', default='comb_profile.csv', help='Output CSV')

    # Export echo
    parser_echo = subparsers.add_parser('export-echo', help='Export the AFC output trace')
    parser_echo.add_argument('--config', default=None, help='JSON config file')
    parser_echo.add_argument('--out', default='echo_trace.csv', help='Output CSV')
    parser_echo.add_argument('--start', type=float, default=-5.0, help='First time (us)')
    parser_echo.add_argument('--end', type=float, default=20.0, help='Last time (us)')

    # Noise budget
    parser_budget = subparsers.add_parser('noise-budget', help='Print the noise budget')
    parser_budget.add_argument('--config', default=None, help='JSON config file')
    parser_budget.add_argument('--calibrate', action='store_true', help='Calibrate to the noise floor target')

    # Config check
    parser_config = subparsers.add_parser('config-check', help='Check configuration')
    parser_config.add_argument('--config', default=None, help='JSON config file')

    args = parser.parse_args()

    if not args.command:
        parser.print_help()
        return 1

    # Route to command handler
    commands = {
        'export-comb': cmd_export_comb,
        'export-echo': cmd_export_echo,
        'noise-budget': cmd_noise_budget,
        'config-check': cmd_config_check
    }

    handler = commands[args.command]

    try:
        return handler(args)
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        return 1


if __name__ == "__main__":
    sys.exit(main())
