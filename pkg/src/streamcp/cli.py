"""Command-line interface: ``fit``, ``synth`` and ``complete``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.  Every failure prints a single line on standard error.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .exceptions import NumericalError, StreamCPError
from .io import (
    parse_slice_file,
    read_truth_sidecar,
    slice_paths,
    write_dense_slice,
    write_metrics_csv,
    write_slice_file,
    write_truth_sidecar,
)
from .metrics import SliceScore, outlier_scores
from .model import save_state
from .streaming import StreamDriver, predict_slice
from .synthetic import make_stream

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("streamcp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so :func:`main` owns the exit code."""

    def error(self, message):
        raise UsageError(message)


def _shape(text):
    try:
        dims = tuple(int(tok) for tok in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected I1xI2x..., got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {text!r}")
    return dims


def build_parser():
    parser = _Parser(prog="streamcp", description="Streaming robust Bayesian CP factorization and completion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="stream slice files through the model and score each slice")
    fit.add_argument("source", help="directory of *.txt slice files or a file listing them")
    fit.add_argument("--config", help="key = value configuration file (defaults when omitted)")
    fit.add_argument("--truth", help="ground-truth sidecar written by synth")
    fit.add_argument("--out", default="metrics.csv", help="per-slice metrics CSV (default: %(default)s)")
    fit.add_argument("--checkpoint", help="write the final model state to this .npz file")

    synth = sub.add_parser("synth", help="write a synthetic slice stream and its ground truth")
    synth.add_argument("--shape", type=_shape, required=True, help="slice shape such as 16x16")
    synth.add_argument("--rank", type=int, required=True)
    synth.add_argument("--slices", type=int, required=True)
    synth.add_argument("--outliers", type=float, default=0.0, help="outlier fraction per slice")
    synth.add_argument("--magnitude", type=float, default=5.0, help="outlier size in stream standard deviations")
    synth.add_argument("--noise", type=float, default=0.0, help="Gaussian noise standard deviation")
    synth.add_argument("--sample", type=float, default=1.0, help="observed fraction per slice")
    synth.add_argument("--smoothness", type=float, default=0.1, help="temporal random-walk step")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output directory")

    complete = sub.add_parser("complete", help="fit a stream and write dense completed slices")
    complete.add_argument("source", help="directory of *.txt slice files or a file listing them")
    complete.add_argument("--config", help="key = value configuration file (defaults when omitted)")
    complete.add_argument("--emit-dense", required=True, dest="emit_dense", help="directory for completed slices")
    complete.add_argument("--out", help="optional per-slice metrics CSV")
    return parser


def _driver(args):
    config = parse_config(args.config) if args.config else RunConfig()
    return StreamDriver(config)


def _score(k, result, driver, truth):
    precision = recall = None
    error = result.observed_error
    if truth is not None and not result.skipped:
        error = result.relative_error
        if truth.outliers and k < len(truth.outliers):
            precision, recall = outlier_scores(result.sparse, truth.outliers[k][0], driver.state.tau.mean)
    return SliceScore(
        t=k,
        relative_error=error,
        estimated_rank=result.estimated_rank,
        precision=precision,
        recall=recall,
        burn_in=k < driver.config.burn_in,
    )


def _run(args, emit_dir=None):
    truth = read_truth_sidecar(args.truth) if getattr(args, "truth", None) else None
    driver = _driver(args)
    paths = slice_paths(args.source)
    if truth is not None and len(paths) > truth.factors[-1].shape[0]:
        raise StreamCPError(f"{len(paths)} slices but the sidecar describes {truth.factors[-1].shape[0]}")
    if emit_dir is not None:
        Path(emit_dir).mkdir(parents=True, exist_ok=True)
    scores = []
    for k, path in enumerate(paths):
        y = parse_slice_file(path)
        dense = None
        if truth is not None:
            dense = truth.data[k] if k < len(truth.data) else truth.clean_slice(k)
        result = driver.ingest_slice(y, truth=dense)
        scores.append(_score(k, result, driver, truth))
        log.info("%s: rank %d, error %s", path.name, result.estimated_rank, scores[-1].relative_error)
        if emit_dir is not None and driver.state is not None:
            write_dense_slice(predict_slice(driver.state, driver.current_slot), Path(emit_dir) / path.name)
    return driver, scores


def cmd_fit(args):
    driver, scores = _run(args)
    write_metrics_csv(scores, args.out)
    if args.checkpoint and driver.state is not None:
        save_state(driver.state, args.checkpoint)


def cmd_complete(args):
    _, scores = _run(args, emit_dir=args.emit_dense)
    if args.out:
        write_metrics_csv(scores, args.out)


def cmd_synth(args):
    if args.rank < 1 or args.slices < 1:
        raise UsageError("--rank and --slices must be >= 1")
    try:
        stream = make_stream(args.shape, args.rank, args.slices, outliers=args.outliers, magnitude=args.magnitude,
                             noise=args.noise, sample=args.sample, seed=args.seed,
                             temporal_smoothness=args.smoothness)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(args.slices - 1)))
    for t, obs in enumerate(stream.observations()):
        write_slice_file(obs, out / f"slice_{t:0{width}d}.txt")
    write_truth_sidecar(stream.truth, out / "truth.json")


COMMANDS = {"fit": cmd_fit, "synth": cmd_synth, "complete": cmd_complete}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"streamcp: usage error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="streamcp: %(message)s")
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"streamcp: usage error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"streamcp: numerical failure: {_one_line(exc)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (StreamCPError, OSError, ValueError) as exc:
        print(f"streamcp: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _one_line(exc):
    return " ".join(str(exc).split()) or type(exc).__name__
