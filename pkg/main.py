"""Entry point for maxstable: `python main.py fit --config configs/example_censored.json`."""
import sys

from dotenv import load_dotenv

from maxstable.cli import main

if __name__ == "__main__":
    load_dotenv()  # MAXSTABLE_SETTINGS / MAXSTABLE_THREADS may come from .env
    sys.exit(main())
