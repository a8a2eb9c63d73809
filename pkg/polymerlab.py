#!/usr/bin/env python3
"""polymerlab command line launcher; see `python polymerlab.py --list`."""

import sys

sys.path.insert(0, 'src')

from plab_experiments import main

if __name__ == '__main__':
    sys.exit(main())
