import sys

from smoothkomlos.cli import main

sys.exit(main())
