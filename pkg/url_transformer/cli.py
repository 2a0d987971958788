"""
Command line entry point.

    python -m url_transformer prepare  --config config.json [--out DIR]
    python -m url_transformer train    --config config.json [--seed N] [--out DIR]
    python -m url_transformer evaluate --checkpoint CKPT --data TSV [--out DIR]
    python -m url_transformer compare  --checkpoint CKPT --data TSV [--baselines CSV] [--out DIR]
    python -m url_transformer predict  --checkpoint CKPT (--url URL | --input FILE)
    python -m url_transformer tokenize --vocab VOCAB --url URL
    python -m url_transformer serve    --checkpoint CKPT [--host H] [--port N]

Exit codes: 0 success, 2 configuration / checkpoint / vocabulary error,
3 data error, 4 training diverged.
"""

import argparse
import json
import os
import sys
from itertools import islice
from typing import Iterable, Iterator, List, Optional

from dotenv import load_dotenv

from url_transformer.checkpoint import load_checkpoint
from url_transformer.config import (
    OUTPUT_FILES,
    SERVE_CONFIG,
    RunConfig,
    config_digest,
    load_run_config,
    parse_run_config,
)
from url_transformer.data import decode_line, prepare_dataset, read_dataset_tsv, write_dataset_tsv
from url_transformer.errors import (
    ConfigError,
    CorruptionError,
    DataError,
    FormatError,
    TrainingDivergence,
    UsageError,
)
from url_transformer.evaluation import (
    comparison_report,
    confusion_csv,
    evaluate_model,
    load_external_reports,
    render_confusion,
)
from url_transformer.model import predict_batch
from url_transformer.plots import plot_history
from url_transformer.run_logging import console_logger, setup_run_logger
from url_transformer.tokenizer import MAX_LEN, build_vocab, encode, load_vocab, save_vocab
from url_transformer.training import TrainConfig, Trainer, select_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

PREDICT_CHUNK = 256
CHECKPOINT_ERRORS = (FormatError, CorruptionError, OSError)
DATA_ERRORS = (DataError, FormatError, UsageError, OSError)


def _resolve_config(args) -> RunConfig:
    config = load_run_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    if not updates:
        return config
    return parse_run_config({**config.model_dump(mode="json"), **updates})


def _echo_config(config: RunConfig, out_dir) -> None:
    path = os.path.join(out_dir, OUTPUT_FILES["resolved_config"])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(config.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")


def _write_splits(split, out_dir) -> None:
    write_dataset_tsv(split.train, os.path.join(out_dir, OUTPUT_FILES["train_set"]))
    write_dataset_tsv(split.test, os.path.join(out_dir, OUTPUT_FILES["validation_set"]))
    if split.holdout:
        write_dataset_tsv(split.holdout, os.path.join(out_dir, OUTPUT_FILES["holdout_set"]))


def _load_config_or_exit(args, run_name):
    try:
        return _resolve_config(args), None
    except ConfigError as e:
        console_logger(run_name).error(f"Configuration error: {e}")
        return None, EXIT_CONFIG


def cmd_prepare(args) -> int:
    """Assembles the dataset and vocabulary without training."""
    config, code = _load_config_or_exit(args, "prepare")
    if config is None:
        return code
    os.makedirs(config.out_dir, exist_ok=True)
    logger, _ = setup_run_logger(config.out_dir, "prepare")
    _echo_config(config, config.out_dir)
    try:
        split = prepare_dataset(config.data, config.seed, logger)
        vocab = build_vocab([r.url for r in split.train], config.model.max_vocab)
        _write_splits(split, config.out_dir)
    except DATA_ERRORS as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    save_vocab(vocab, os.path.join(config.out_dir, OUTPUT_FILES["vocab"]))
    logger.info(f"Wrote dataset splits and a {vocab.size}-id vocabulary to {config.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    """data -> vocabulary -> training -> plots -> checkpoint selection."""
    config, code = _load_config_or_exit(args, "train")
    if config is None:
        return code
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    logger, log_file = setup_run_logger(out_dir, "train")
    logger.info(f"Log file: {log_file}")
    _echo_config(config, out_dir)

    try:
        split = prepare_dataset(config.data, config.seed, logger)
        vocab = build_vocab([r.url for r in split.train], config.model.max_vocab)
        _write_splits(split, out_dir)
    except DATA_ERRORS as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    save_vocab(vocab, os.path.join(out_dir, OUTPUT_FILES["vocab"]))

    try:
        train_config = TrainConfig.from_run_config(config, vocab.size, out_dir, config_digest(config))
        result = Trainer(train_config, logger).train(split, vocab)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except TrainingDivergence as e:
        logger.error(f"Training diverged: {e}")
        return EXIT_DIVERGED
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA

    plot_history(result.history, out_dir, logger)
    selected = select_checkpoint(result.history)
    with open(os.path.join(out_dir, OUTPUT_FILES["selected_epoch"]), "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{selected}\n")
    logger.info(f"Selected checkpoint: epoch {selected} "
                f"(val acc {result.history[selected - 1].val_accuracy:.4f})")
    return EXIT_OK


def _chunked(items: Iterable[str], size: int) -> Iterator[List[str]]:
    iterator = iter(items)
    while True:
        chunk = list(islice(iterator, size))
        if not chunk:
            return
        yield chunk


def _read_url_lines(path, counter: dict, logger) -> Iterator[str]:
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                url = decode_line(raw, path, line_no).strip()
            except DataError:
                url = ""
            if not url or any(ch.isspace() for ch in url):
                counter["skipped"] += 1
                logger.warning(f"{path}:{line_no}: malformed input line skipped")
                continue
            yield url


def cmd_predict(args) -> int:
    """Prints ``<label>\\t<score>\\t<url>`` per URL."""
    logger = console_logger("predict")
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CHECKPOINT_ERRORS as e:
        logger.error(f"Cannot load checkpoint: {e}")
        return EXIT_CONFIG
    params, vocab = ckpt.model_params(), ckpt.vocab

    counter = {"skipped": 0}
    urls = [args.url] if args.url is not None else _read_url_lines(args.input, counter, logger)
    try:
        for chunk in _chunked(urls, PREDICT_CHUNK):
            for url, (label, score) in zip(chunk, predict_batch(params, vocab, chunk)):
                print(f"{label}\t{score:.6f}\t{url}")
    except OSError as e:
        logger.error(f"Cannot read input: {e}")
        return EXIT_DATA
    if counter["skipped"]:
        logger.warning(f"Skipped {counter['skipped']} malformed input line(s)")
    return EXIT_OK


def _evaluate_checkpoint(args, run_name):
    os.makedirs(args.out, exist_ok=True)
    logger, _ = setup_run_logger(args.out, run_name)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CHECKPOINT_ERRORS as e:
        logger.error(f"Cannot load checkpoint: {e}")
        return logger, None, EXIT_CONFIG
    try:
        records = read_dataset_tsv(args.data)
        cm, report = evaluate_model(ckpt.model_params(), ckpt.vocab, records)
    except DATA_ERRORS as e:
        logger.error(f"Data error: {e}")
        return logger, None, EXIT_DATA
    logger.info(f"Evaluated epoch-{ckpt.epoch} checkpoint on {cm.total} records")
    return logger, (cm, report), EXIT_OK


def cmd_evaluate(args) -> int:
    """Confusion matrix and metrics of a checkpoint on a labelled TSV."""
    logger, outcome, code = _evaluate_checkpoint(args, "evaluate")
    if outcome is None:
        return code
    cm, report = outcome
    table = comparison_report([(args.name, report)])
    print(render_confusion(cm))
    print()
    print(table.to_text())
    with open(os.path.join(args.out, OUTPUT_FILES["report"]), "w", encoding="utf-8", newline="\n") as f:
        f.write(table.to_csv())
    with open(os.path.join(args.out, OUTPUT_FILES["confusion"]), "w", encoding="utf-8", newline="\n") as f:
        f.write(confusion_csv(cm))
    return EXIT_OK


def cmd_compare(args) -> int:
    """Ranks the checkpoint against externally produced baseline metrics by F1."""
    logger, outcome, code = _evaluate_checkpoint(args, "compare")
    if outcome is None:
        return code
    _, report = outcome
    entries = [(args.name, report)]
    if args.baselines:
        try:
            entries.extend(load_external_reports(args.baselines))
        except DATA_ERRORS as e:
            logger.error(f"Cannot read baselines: {e}")
            return EXIT_DATA
    table = comparison_report(entries)
    print(table.to_text())
    with open(os.path.join(args.out, OUTPUT_FILES["comparison"]), "w", encoding="utf-8", newline="\n") as f:
        f.write(table.to_csv())
    return EXIT_OK


def cmd_tokenize(args) -> int:
    """Prints the comma-separated id array of one URL."""
    logger = console_logger("tokenize")
    try:
        vocab = load_vocab(args.vocab)
    except (FormatError, OSError) as e:
        logger.error(f"Cannot load vocabulary: {e}")
        return EXIT_CONFIG
    seq = encode(args.url, vocab, args.max_len)
    print(",".join(str(token) for token in seq.ids.tolist()))
    return EXIT_OK


def cmd_serve(args) -> int:
    from url_transformer.server import serve

    logger = console_logger("serve")
    try:
        serve(args.checkpoint, host=args.host, port=args.port)
    except CHECKPOINT_ERRORS as e:
        logger.error(f"Cannot load checkpoint: {e}")
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="url_transformer",
                                     description="Character-level transformer for malicious URL detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="sample, split and write the dataset and vocabulary")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train with a checkpoint per epoch")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("evaluate", cmd_evaluate, "confusion matrix and metrics on a labelled TSV"),
                                  ("compare", cmd_compare, "rank the model against baseline metrics")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--name", default="Transformer")
        p.add_argument("--out", default=name)
        if name == "compare":
            p.add_argument("--baselines")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="score URLs with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--url")
    source.add_argument("--input")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("tokenize", help="print the token ids of a URL")
    p.add_argument("--vocab", required=True)
    p.add_argument("--url", required=True)
    p.add_argument("--max-len", type=int, default=MAX_LEN)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default=os.getenv("URLT_HOST", SERVE_CONFIG["host"]))
    p.add_argument("--port", type=int, default=int(os.getenv("URLT_PORT", SERVE_CONFIG["port"])))
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
