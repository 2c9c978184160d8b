import sys

from qpot.cli import main

sys.exit(main())
