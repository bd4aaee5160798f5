#!/usr/bin/env python3
"""
Differential K-theory desk engine - command-line entry point
"""

import sys
import argparse
from typing import List, Optional

from config import config
from manifest import create_operation_tools, SCHEMA_VERSION
from runner import EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, run_manifest
from selftest import run_selftest


def print_operations():
    """List the operations a manifest request may name."""
    print("=" * 60)
    print(f"🔧 AVAILABLE OPERATIONS ({SCHEMA_VERSION}):")
    for tool in create_operation_tools():
        print(f"   • {tool['name']}: {tool['description']}")
    print("=" * 60)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Differential K-theory desk engine")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="Execute a computation manifest and write a report")
    run.add_argument("manifest", type=str, help="Path to the manifest YAML file")
    run.add_argument("--out", type=str, help="Report path (default: reports/<manifest>_report.yaml)")
    run.add_argument("--grid", type=int, help="Circle points and sphere order")
    run.add_argument("--quad", type=int, help="Interval, transgression and simplex quadrature order")
    run.add_argument("--tol", type=float, help="Acceptance tolerance for residuals")
    run.add_argument("--threads", type=int, help="Worker threads (overrides DKDESK_THREADS)")

    selftest = sub.add_parser("selftest", help="Run the built-in acceptance battery")
    selftest.add_argument("--filter", type=str, help="Only run categories or checks containing this text")
    selftest.add_argument("--grid", type=int, help="Circle points and sphere order for the battery")
    selftest.add_argument("--threads", type=int, help="Worker threads")
    selftest.add_argument("--out", type=str, help="Where to write the battery results")

    sub.add_parser("operations", help="List the manifest operations")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "run":
        return run_manifest(args.manifest, out=args.out, grid=args.grid, quad=args.quad,
                            tol=args.tol, threads=args.threads)

    if args.command == "selftest":
        print(f"🧪 Acceptance battery (config: {config.config_path.name})")
        try:
            return run_selftest(filter_text=args.filter, grid=args.grid, threads=args.threads, out=args.out)
        except ValueError as e:
            print(f"❌ Invalid numerics: {e}")
            return EXIT_VALIDATION

    if args.command == "operations":
        print_operations()
        return EXIT_OK

    parser.print_help()
    return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
