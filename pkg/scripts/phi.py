#!/usr/bin/env python3
"""Launcher for running the CLI from a source checkout.

  python3 scripts/phi.py sweep --config config/sweep.conf.example
  python3 scripts/phi.py graph queries.txt
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from causalphi.cli import main  # noqa: E402

if __name__ == "__main__":
    main()
