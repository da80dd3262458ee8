"""Command-line entry point.

Exit codes: 0 success, 1 invalid arguments or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext

import numpy as np

from poinhier import __version__
from poinhier.config import TrainConfig, resolve, stream
from poinhier.data import SynthConfig, generate_synthetic, read_dataset, write_dataset
from poinhier.evaluation import compute_eer, score_dataset, write_scores_csv
from poinhier.io import atomic_write
from poinhier.model import load_model, save_model
from poinhier.training import train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_json(path):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


def _overrides(args):
    sets = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        sets.append(f"seed={args.seed}")
    return sets


def _thread_limit(args):
    threads = args.threads
    if threads is None and os.environ.get("PHN_THREADS"):
        try:
            threads = int(os.environ["PHN_THREADS"])
        except ValueError as exc:
            raise ValueError("PHN_THREADS must be an integer") from exc
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise ValueError("--threads must be at least 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def cmd_gen_synth(args):
    cfg = resolve(SynthConfig, _load_json(args.config), _overrides(args))
    ds = generate_synthetic(cfg)
    write_dataset(ds, args.out)
    print(f"wrote {ds.n} samples (d_in={ds.d_in}) to {args.out}")


def cmd_train(args):
    cfg = resolve(TrainConfig, _load_json(args.config), _overrides(args))
    ds = read_dataset(args.data)
    result = train(cfg, ds)
    save_model(result.params, args.model, cfg)
    if args.metrics:
        with atomic_write(args.metrics, "w", encoding="utf-8") as fh:
            fh.write(result.log_json())
    if args.curves and result.log:
        from poinhier.plotting import render_training_curves
        render_training_curves(result.log, args.curves)
    last = result.log[-1] if result.log else None
    if last:
        print(f"epochs: {last['epoch']} loss: {last['loss_all']:.6f} train EER: {100 * last['train_eer']:.4f}%")
    print(f"model written to {args.model}")


def cmd_eval(args):
    params, _ = load_model(args.model)
    ds = read_dataset(args.data)
    records = score_dataset(params, ds)
    if args.scores:
        write_scores_csv(records, args.scores)
    eer, threshold = compute_eer(records)
    if args.histogram:
        from poinhier.plotting import render_score_histogram
        render_score_histogram([r.score for r in records], [r.label for r in records],
                               args.histogram, eer)
    print(f"EER: {100 * eer:.4f}%")
    print(f"threshold: {threshold:.6g}")


def cmd_gradcheck(args):
    from poinhier.selfcheck import run_suite, suite_lines
    results = run_suite(seed=args.seed or 0, n_states=args.states, h=args.h,
                        tolerance=args.tolerance, c=args.curvature)
    for line in suite_lines(results):
        print(line)
    ok = all(rep.passed for rep in results.values())
    print(f"overall: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_plot(args):
    from poinhier.plotting import render_disk_svg
    params, _ = load_model(args.model)
    if args.data:
        ds = read_dataset(args.data)
        idx = np.arange(ds.n)
        if args.max_samples is not None and ds.n > args.max_samples:
            idx = np.sort(stream(args.seed or 0, "split").choice(ds.n, args.max_samples, replace=False))
        X, labels = ds.features[idx], ds.labels[idx]
    else:
        X, labels = np.zeros((0, params.d_in)), np.zeros(0, dtype=int)
    snap = render_disk_svg(params, X, labels, args.out)
    print(f"drew {len(snap.samples)} samples, {len(snap.prototypes)} prototypes, "
          f"{len(snap.tops)} top prototypes to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poinhier", description="Hyperbolic prototype learning for spoof detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration values")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration value (dotted keys, JSON values); repeatable")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="BLAS thread limit (default: $PHN_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic PHE1 dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--metrics", help="output JSON metrics log")
    p.add_argument("--curves", help="output figure of per-epoch losses and EER")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a dataset and report the EER")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scores", help="output CSV of per-sample scores")
    p.add_argument("--histogram", help="output figure of the score distributions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all loss terms")
    p.add_argument("--states", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--curvature", type=float, default=0.01)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", parents=[common], help="draw a 2-D model in the Poincare disk (SVG)")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--max-samples", type=int)
    p.set_defaults(func=cmd_plot)
    return parser


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"poinhier: error: {_one_line(exc)}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with _thread_limit(args):
            code = args.func(args)
    except ValueError as exc:  # configuration, dataset and format errors
        print(f"poinhier: error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (OSError, ArithmeticError, RuntimeError) as exc:
        print(f"poinhier: failed: {_one_line(exc)}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
