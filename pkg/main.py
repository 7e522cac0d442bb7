# main.py

#!/usr/bin/env python3
"""
Profile Sphere - Main Entry Point

Runs the command-line interface, e.g. ``python main.py demo --out bundle``.
"""

import sys

from profile_sphere.cli import main

if __name__ == "__main__":
    sys.exit(main())
