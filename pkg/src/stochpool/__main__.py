#!/usr/bin/env python3
"""
Entry point for `python -m stochpool`.
"""

import sys
from pathlib import Path

# running from a source checkout without installing
src_path = Path(__file__).resolve().parent.parent
if (src_path / "stochpool").is_dir() and str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))


def main():
    """Main entry point for the CLI."""
    from stochpool.cli import main as cli_main
    cli_main()


if __name__ == "__main__":
    main()
