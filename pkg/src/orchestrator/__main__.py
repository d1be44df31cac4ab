"""
Allows `python -m src.orchestrator ...` as an alias of `python -m src.main ...`.
"""
import sys

from ..main import main


if __name__ == "__main__":
    sys.exit(main())
