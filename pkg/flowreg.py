#!/usr/bin/env -S uv run --script
# /// script
# requires-python = ">=3.12"
# dependencies = [
#     "numpy>=1.26,<3",
#     "scipy>=1.11,<2",
#     "pydantic>=2.11.10,<3",
#     "python-dotenv>=1.1.1,<2",
#     "pyyaml>=6.0.1,<7",
#     "psutil>=6.1.1,<7",
# ]
# ///

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
