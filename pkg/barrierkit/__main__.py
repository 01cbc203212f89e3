"""Main CLI entry point for barrierkit utility scripts"""

import sys

from .cmd.main import main

sys.argv[0] = "barrierkit"
sys.exit(main())
