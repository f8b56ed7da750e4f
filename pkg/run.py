#!/usr/bin/env python3
"""
GS-TAP Lab - Entry Point
Run one batch command of the spin-glass laboratory

Usage:
    python run.py certificate --S 1 --beta 0.25
    python run.py solve --S 1 --beta 0.2 --D 0 --h 0.3 --format json
    python run.py tap --S 1 --beta 0.15 --h 0.3 --n 10 --output tap.csv
    python run.py scaling --which conc_r12 --n-grid 6,8,10,12

Optional Environment Variables (or a .env file):
    GS_TAP_WORKERS - default worker-process count
    GS_TAP_MASTER_SEED - default master seed
    GS_TAP_QUADRATURE_ORDER - default Gauss-Hermite order
"""
import sys

from gs_tap_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
