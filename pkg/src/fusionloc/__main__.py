import sys

from fusionloc.cli import main

sys.exit(main())
