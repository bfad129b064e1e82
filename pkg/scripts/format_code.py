#!/usr/bin/env python3
"""
Format the mitadml sources with Black and isort.

Usage:
    python scripts/format_code.py          # rewrite files in place
    python scripts/format_code.py --check  # report only, non-zero exit on changes
"""

import argparse
import subprocess
import sys
from pathlib import Path

TARGETS = ["mitadml", "tests", "scripts", "main.py"]


def run_tool(cmd, cwd):
    print(f"Running: {' '.join(cmd)}")
    result = subprocess.run(
        cmd,
        cwd=cwd,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
        encoding="utf-8",
        errors="replace",
    )
    print(result.stdout)
    return result.returncode


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--check", action="store_true", help="Do not write, only report")
    args = parser.parse_args(argv)

    repo_root = Path(__file__).resolve().parent.parent
    black = ["black", "--check"] if args.check else ["black"]
    isort = ["isort", "--check-only"] if args.check else ["isort"]
    return max(run_tool(black + TARGETS, repo_root), run_tool(isort + TARGETS, repo_root))


if __name__ == "__main__":
    sys.exit(main())
