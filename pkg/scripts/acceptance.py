#!/usr/bin/env python3
"""Run the acceptance suite and print one PASS/FAIL line per criterion."""
import argparse
import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fast", action="store_true",
                    help="skip the desk-scale experiments (criteria 4, 6 and 7)")
    args = ap.parse_args()
    cmd = [str(Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"), "-q"]
    if args.fast:
        cmd += ["-m", "not slow"]
    sys.exit(pytest.main(cmd))
