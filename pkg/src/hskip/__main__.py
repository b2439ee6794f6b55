import sys

from hskip.cli import main

sys.exit(main())
