"""
Dataset ingestion: reads the feeds named in config.json, balances and splits
them and writes the train/validation TSVs plus the vocabulary to the run's
output directory.

    python ingest.py [config.json] [--out DIR]
"""

import sys

from url_transformer.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    config_path = "config.json"
    if args and not args[0].startswith("--"):
        config_path, args = args[0], args[1:]
    sys.exit(main(["prepare", "--config", config_path, *args]))
