#!/usr/bin/env python

import sys
import logging
import os

import argparse

import numpy as np
import yaml

from zzaloha import __version__ as VERSION
from zzaloha.model import ValidationError, NumericalError, ALL_VARIANTS

logging.basicConfig(format='[%(asctime)s] %(process)d  %(name)s  %(levelname)s  %(message)s',
                    datefmt='%m-%d %H:%M:%S',
                    level=os.environ.get('ZZ_LOGLEVEL', logging.INFO),
                    handlers=[
                        logging.StreamHandler(),  # Logs go to stderr, results go to files
                    ])

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

VARIANT_NAMES = ", ".join(v.value for v in ALL_VARIANTS)


def do_solve(*args, **kwargs):
    from zzaloha.commands import cmd_solve
    return cmd_solve(*args, **kwargs)


def do_sweep(*args, **kwargs):
    from zzaloha.commands import cmd_sweep
    return cmd_sweep(*args, **kwargs)


def do_simulate(*args, **kwargs):
    from zzaloha.commands import cmd_simulate
    return cmd_simulate(*args, **kwargs)


def do_stability(*args, **kwargs):
    from zzaloha.commands import cmd_stability
    return cmd_stability(*args, **kwargs)


def do_optimize(*args, **kwargs):
    from zzaloha.commands import cmd_optimize
    return cmd_optimize(*args, **kwargs)


def add_model_args(parser, with_qr=True, with_variant=True):
    parser.add_argument("-c", "--config", help="YAML or JSON file whose keys mirror the long flag names")
    parser.add_argument("-o", "--output", help="Output file (default: under $ZZ_OUTDIR or the working directory)")
    parser.add_argument("-u", "--users", help="Number of users M", type=int)
    parser.add_argument("-pa", "--pa", help="New packet transmission probability p_a", type=float)
    if with_qr:
        parser.add_argument("-qr", "--qr", help="Retransmission probability q_r", type=float)
    if with_variant:
        parser.add_argument("-v", "--variant", help=f"Model variant, one of: {VARIANT_NAMES}")


def add_run_args(parser):
    parser.add_argument("-t", "--threads", help="Number of processes to use", type=int)
    parser.add_argument("-np", "--no-progress", help="Turn off progress bars", action='store_true', default=None)


def build_parser():
    parser = argparse.ArgumentParser(description='Slotted Aloha with ZigZag decoding: analytic models and simulation')
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subparser = parser.add_subparsers()

    solveparser = subparser.add_parser("solve", help="Solve one model and report pi, metrics, drift and stability")
    add_model_args(solveparser)
    solveparser.add_argument("-m", "--method", help="Stationary solver: direct or power-iteration", default=None)
    solveparser.add_argument("--matrix-csv", help="Also write the transition matrix to this CSV file")
    solveparser.set_defaults(func=do_solve)

    sweepparser = subparser.add_parser("sweep", help="Sweep p_a or q_r and write metrics for each variant as CSV")
    add_model_args(sweepparser, with_variant=False)
    sweepparser.add_argument("-a", "--axis", help="Swept parameter, p_a or q_r")
    sweepparser.add_argument("--start", help="First axis value", type=float)
    sweepparser.add_argument("--stop", help="Last axis value", type=float)
    sweepparser.add_argument("--step", help="Axis increment", type=float)
    sweepparser.add_argument("-vs", "--variants", help=f"Comma separated variants (default all of: {VARIANT_NAMES})")
    add_run_args(sweepparser)
    sweepparser.set_defaults(func=do_sweep)

    simparser = subparser.add_parser("simulate", help="Monte Carlo simulation of the ZigZag receiver")
    add_model_args(simparser, with_variant=False)
    simparser.add_argument("-f", "--frames", help="Frames per replication, warmup included", type=int)
    simparser.add_argument("-w", "--warmup", help="Warmup frames discarded before measuring (default 10%% of frames)", type=int)
    simparser.add_argument("-s", "--seed", help="64-bit master seed", type=int)
    simparser.add_argument("-r", "--replications", help="Independent replications", type=int)
    simparser.add_argument("--accounting", help="Time unit for throughput: per-frame or per-slot")
    simparser.add_argument("--analytic-compare", help="Compare against both ZigZag chains", action='store_true', default=None)
    simparser.add_argument("--histogram-csv", help="Also write occupancy and outcome histograms to this CSV file")
    add_run_args(simparser)
    simparser.set_defaults(func=do_simulate)

    stabparser = subparser.add_parser("stability", help="Drift curves, equilibria and stability verdicts")
    add_model_args(stabparser, with_qr=False, with_variant=False)
    stabparser.add_argument("-qr", "--qr", help="Comma separated retransmission probabilities")
    stabparser.add_argument("-vs", "--variants", help=f"Comma separated variants (default all of: {VARIANT_NAMES})")
    stabparser.set_defaults(func=do_stability)

    optparser = subparser.add_parser("optimize", help="Throughput-maximizing retransmission probability")
    add_model_args(optparser, with_qr=False)
    optparser.add_argument("-g", "--grid-step", help="q_r grid spacing, in [1e-4, 0.1] (default 0.01)", type=float)
    add_run_args(optparser)
    optparser.set_defaults(func=do_optimize)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if len(vars(args)) == 0 or not hasattr(args, 'func'):
        parser.print_help()
        return EXIT_USAGE
    logger.debug("Turning on DEBUG log level")
    logger.info(f"zzaloha version {VERSION}, numpy version {np.__version__}")
    kwargs = vars(args).copy()
    func = kwargs.pop('func')
    kwargs['cmdline'] = " ".join(sys.argv[1:] if argv is None else argv)
    try:
        return func(**kwargs)
    except (ValidationError, OSError, yaml.YAMLError) as ex:
        logger.error(f"{type(ex).__name__}: {ex}")
        return EXIT_USAGE
    except NumericalError as ex:
        logger.error(f"Numerical failure, {type(ex).__name__}: {ex}")
        return EXIT_NUMERICAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
