# -*- coding: utf-8 -*-

"""
    The snmdp-lab command.

    snmdp-lab <subcommand> --config <document> [--seed N] [--workers N] [--out DIR]

    Exit codes: 0 all checks pass, 1 configuration error, 2 a property or
    acceptance check failed, 3 any other failure.
"""

import argparse
import logging
import os
import sys

from snmdpLab.lab.document import SUBCOMMANDS, ExperimentDocumentReader
from snmdpLab.lab.runners import emitPlotData
from snmdpLab.objects.error import ConfigurationError, LabError, PropertyFailure

EXIT_OK = 0
EXIT_CONFIGURATION = 1
EXIT_CHECK_FAILED = 2
EXIT_RUNTIME = 3

PLOT_DATA = "plot-data"


def buildParser():
    parser = argparse.ArgumentParser(prog="snmdp-lab",
                                     description="Robustness experiments for state-noisy MDPs")
    parser.add_argument("subcommand", choices=SUBCOMMANDS + (PLOT_DATA,), help="what to run")
    parser.add_argument("--config", required=True, help="experiment document (.snmdp)")
    parser.add_argument("--seed", type=int, default=None, help="master seed, overrides the document")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="size of the worker pool")
    parser.add_argument("--out", default="snmdp-out", help="folder for reports and the log")
    return parser


def _plotData(config, outputFolder):
    path = os.path.join(outputFolder, "train-episodes.csv")
    if not os.path.exists(path):
        raise ConfigurationError("no episode log in the output folder", path)
    smoothing = config["train"]["smoothing"] if "train" in config else 10
    return emitPlotData(path, outputFolder, config, smoothing)


def main(argv=None):
    """
    Run one subcommand. Returns the exit code.
    ::

        >>> main(["influence", "--config", "/nonexistent/experiment.snmdp", "--out", "/nonexistent/out"])
        1
    """
    args = buildParser().parse_args(argv)
    logger = logging.getLogger("snmdpLab")
    try:
        if args.workers < 1:
            raise ConfigurationError("workers must be positive", args.workers)
        if not os.path.exists(args.config):
            raise ConfigurationError("experiment document not found", args.config)
        if not os.path.exists(args.out):
            os.makedirs(args.out)
        reader = ExperimentDocumentReader(args.config, seed=args.seed, verbose=True,
                                          logPath=os.path.join(args.out, "snmdpLab.log"))
        config = reader.read()
        if args.subcommand == PLOT_DATA:
            for path in _plotData(config, args.out):
                print(path)
            return EXIT_OK
        summary = reader.process(args.out, [args.subcommand], workers=args.workers)[args.subcommand]
        for line in summary.lines():
            print(line)
        return EXIT_OK if summary.passed else EXIT_CHECK_FAILED
    except ConfigurationError as error:
        print("snmdp-lab: configuration error: %s" % error, file=sys.stderr)
        return EXIT_CONFIGURATION
    except PropertyFailure as error:
        print("snmdp-lab: check failed: %s" % error, file=sys.stderr)
        return EXIT_CHECK_FAILED
    except LabError as error:
        logger.error("%s failed: %s", args.subcommand, error)
        print("snmdp-lab: %s" % error, file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        logger.exception("%s failed", args.subcommand)
        print("snmdp-lab: unexpected failure, see the log", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
