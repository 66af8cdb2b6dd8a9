import sys

from deam.cli import main

sys.exit(main())
