#!/usr/bin/env python
"""Command-line utility for simulator tasks."""
import sys


def main():
    """Run simulator tasks."""
    try:
        from cli.main import main as run
    except ImportError as exc:
        raise ImportError(
            "Couldn't import the simulator. Are numpy, scipy and torch installed "
            "and available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
