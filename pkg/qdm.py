#!/usr/bin/env python3
"""
Launcher for the simulator CLI.

Usage:
    python qdm.py sweep --dt 0:450:1
    python qdm.py --out report reproduce-paper
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
