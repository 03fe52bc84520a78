import sys

from hsonet.cli import main

sys.exit(main())
