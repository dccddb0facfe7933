#coding=utf8
import numpy as np
import sys, os, logging, random, torch
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.serialization import check_writable


LOGGER_NAME = 'prosr'


def set_logger(exp_path, subcommand, verbose=False):
    logFormatter = logging.Formatter('%(asctime)s - %(message)s')
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False
    close_logger(logger)
    fileHandler = logging.FileHandler(os.path.join(exp_path, f'log_{subcommand}.txt'), mode='w')
    fileHandler.setFormatter(logFormatter)
    logger.addHandler(fileHandler)
    # stdout is kept for --summary
    consoleHandler = logging.StreamHandler(sys.stderr)
    consoleHandler.setFormatter(logFormatter)
    logger.addHandler(consoleHandler)
    return logger


def close_logger(logger=None):
    logger = logging.getLogger(LOGGER_NAME) if logger is None else logger
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)


def set_random_seed(random_seed=999):
    random.seed(random_seed)
    np.random.seed(random_seed % (2 ** 32))
    torch.manual_seed(random_seed)


def prepare_output_dir(out_dir, outputs, force=False):
    """ Create out_dir and refuse to clobber any of the named output files unless force. """
    os.makedirs(out_dir, exist_ok=True)
    check_writable([os.path.join(out_dir, name) for name in outputs], force)
    return out_dir


def initialization_wrapper(args, outputs):
    exp_path = prepare_output_dir(args.out, outputs, args.force)
    logger = set_logger(exp_path, args.subcommand, args.verbose)
    seed = 999 if args.seed is None else args.seed
    set_random_seed(seed)
    logger.info("Initialization finished ...")
    logger.info(f"Output path: {exp_path}")
    logger.info(f"Random seed: {seed}")
    logger.info(f"Workers: {args.workers:d}")
    logger.info("Entropy unit: nats, token_probs taken as the full logged distribution")
    return exp_path, logger
