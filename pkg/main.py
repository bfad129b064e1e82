"""
mitadml - mita consumption effects by regression discontinuity and double machine learning

Runs the command-line interface; see `python main.py --help`.
"""

import sys

from mitadml.cli import main

if __name__ == "__main__":
    sys.exit(main())
