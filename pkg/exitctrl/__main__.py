import sys

from exitctrl.main import main

sys.exit(main())
