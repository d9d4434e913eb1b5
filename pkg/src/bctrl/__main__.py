import sys

from bctrl.cli import main

sys.exit(main())
