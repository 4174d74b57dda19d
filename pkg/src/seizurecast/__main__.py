import sys

from seizurecast.harness.cli import main

sys.exit(main())
