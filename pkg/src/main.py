"""Main entry point for AFT Sieve."""

import sys
import os

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.cli import main

if __name__ == '__main__':
    if len(sys.argv) > 1:
        sys.exit(main())
    else:
        print("AFT Sieve - Sieve MLE for the accelerated failure time model")
        print("\nUsage:")
        print("  python src/main.py fit <data.csv> [--transform log10|ln|identity] [--out report.json]")
        print("  python src/main.py simulate --dist a..f --n N [--reps R] [--seed S] --out summary.csv")
        print("  python src/main.py bound --dist a..f --n N")
        print("\nExample:")
        print("  python src/main.py simulate --dist a --n 200 --reps 20 --out results/a200.csv --emit-data results/a200_data.csv")
