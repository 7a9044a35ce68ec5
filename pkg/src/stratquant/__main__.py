import sys

from stratquant.cli import main

sys.exit(main())
