import sys

from afpnet.cli import main

sys.exit(main())
