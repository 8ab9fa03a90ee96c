import sys

from mtpose.cli import main

sys.exit(main())
