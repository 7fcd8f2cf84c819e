import sys

from mvsweep.harness.cli import main

sys.exit(main())
