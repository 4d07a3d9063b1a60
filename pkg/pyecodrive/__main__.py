import sys

from pyecodrive.cli import main

sys.exit(main())
