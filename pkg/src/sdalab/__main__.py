import sys

from sdalab.cli import main

sys.exit(main())
