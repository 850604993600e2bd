import sys

from hesm.cli import main

sys.exit(main())
