"""Allow `python -m eplab` to behave like the installed entry point."""

import sys

from .cli import main

sys.exit(main(sys.argv[1:]))
