import sys

from url_transformer.cli import main

sys.exit(main())
