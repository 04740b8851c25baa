#!/usr/bin/env python3
"""
Command-line entry point: python flowcount.py <command> [flags]
"""
from src.harness.cli import main


if __name__ == "__main__":
    main()
