import sys

from msfusion.main import main

sys.exit(main())
