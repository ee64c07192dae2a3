#  Copyright (c) 2024. VulBin Authors
import sys

from vulbin.cli import main

sys.exit(main())
