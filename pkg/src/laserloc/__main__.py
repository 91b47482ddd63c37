import sys

from laserloc.cli import main

sys.exit(main())
