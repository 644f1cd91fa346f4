#!/usr/bin/env python3
"""Run the six-cell simulation study with default settings.

Equivalent to `nwacal study`; kept as a script so the experiment is one
command from a fresh checkout. Expect a few minutes at the default 10,000
replicates per cell; pass --threads to parallelize.
"""

import sys

from nwacal.cli import main

if __name__ == "__main__":
    sys.exit(main(["study", *sys.argv[1:]]))
