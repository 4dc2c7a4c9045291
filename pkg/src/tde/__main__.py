import sys

from tde.cli import main

sys.exit(main())
