"""
Allows `python -m flowlens`
"""

import sys
from pathlib import Path

sys.path.append(str(Path(__file__).resolve().parent.parent))

# pylint: disable=wrong-import-position
from flowlens.cli import main

if __name__ == "__main__":
    sys.exit(main())
