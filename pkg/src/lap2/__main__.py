import sys

from lap2.cli import main

sys.exit(main())
