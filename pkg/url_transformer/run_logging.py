import datetime
import logging
import os
import uuid

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_run_logger(out_dir, run_name, level=None):
    """
    Sets up the logger for one command run, logging to a uniquely named file
    under ``<out_dir>/logs`` and to the console.

    Args:
        out_dir (str | Path): The run's output directory.
        run_name (str): Command name, used as logger name and file prefix.
        level (str | int, optional): Log level; defaults to $URLT_LOG_LEVEL or INFO.

    Returns:
        tuple: (logging.Logger, str path of the log file)
    """
    log_dir = os.path.join(out_dir, 'logs')
    os.makedirs(log_dir, exist_ok=True)

    timestamp = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
    unique_id = str(uuid.uuid4())[:8]
    log_file = os.path.join(log_dir, f'{run_name}_{timestamp}_{unique_id}.log')

    logger = logging.getLogger(f"url_transformer.run.{run_name}")
    logger.setLevel(level or os.getenv("URLT_LOG_LEVEL", "INFO"))
    logger.propagate = False
    # Remove existing handlers to avoid duplicate logs
    if logger.hasHandlers():
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)
    handler = logging.FileHandler(log_file, mode='w', encoding='utf-8')
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    return logger, log_file


def console_logger(run_name, level=None):
    """Console-only logger for commands that have no output directory."""
    logger = logging.getLogger(f"url_transformer.run.{run_name}")
    logger.setLevel(level or os.getenv("URLT_LOG_LEVEL", "INFO"))
    logger.propagate = False
    logger.handlers.clear()
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(stream_handler)
    return logger
