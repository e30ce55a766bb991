#!/usr/bin/env python3
"""
crossnet command-line runner
"""

import sys

from crossnet.main import main

if __name__ == "__main__":
    sys.exit(main())
