import sys

from bubblealarm.cli import main

sys.exit(main())
