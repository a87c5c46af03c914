import sys

from fedcontrib.cli import main

sys.exit(main())
