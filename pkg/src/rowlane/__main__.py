from rowlane.cli import main
import sys

sys.exit(main())
