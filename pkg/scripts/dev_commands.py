#!/usr/bin/env python
"""
Development commands for the mitadml package.

Prints the commands used for day-to-day work on the repository.
"""

import sys


def main():
    """Display available development commands."""
    commands = [
        ("Install development dependencies", "pip install -e '.[dev]'"),
        ("Run unit tests", "pytest tests/unit"),
        ("Run all tests, including slow Monte Carlo checks", "pytest"),
        ("Skip slow tests", "pytest -m 'not slow'"),
        ("Run tests with coverage", "pytest --cov=mitadml"),
        ("Run type checking", "mypy mitadml"),
        ("Format code", "python scripts/format_code.py"),
        ("Check network gradients", "mitadml --out out/gradcheck gradcheck"),
        ("Simulate a dataset", "mitadml --out out/sim simulate --n 5000"),
        ("Replicate the OLS grid", "mitadml --out out/table2 replicate out/sim/synthetic.csv"),
    ]

    print("mitadml Development Commands\n")
    for i, (description, command) in enumerate(commands, 1):
        print(f"{i}. {description}")
        print(f"   $ {command}")
        print()

    print("Integration tests against the household survey need its path:")
    print("   MITADML_FIXTURE=/path/to/households.csv pytest tests/integration")
    return 0


if __name__ == "__main__":
    sys.exit(main())
