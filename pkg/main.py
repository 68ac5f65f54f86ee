#!/usr/bin/env python3
"""
🚀 Main entry point for the comateformer command line
Loads .env, configures logging and Sentry, then dispatches to cli.main
"""
import sys

from dotenv import load_dotenv

from cli import main as cli_main
from sentry_config import configure_logging, init_sentry


def run() -> int:
    load_dotenv()
    configure_logging()
    init_sentry()
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(run())
