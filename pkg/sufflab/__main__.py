import sys

from sufflab.main import main

sys.exit(main())
