import os, sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from platoon.cli import main

# Same as: python -m platoon verify [check] [options]; runs every check when none is named
args = sys.argv[1:]
if not args or args[0].startswith("-"):
    args = ["all"] + args
sys.exit(main(["verify"] + args))
