import sys

from vcp.cli import main

sys.exit(main())
