"""Command line entry point.

Five verbs: ``generate`` a dataset, ``train`` a strategy on it,
``evaluate`` a run directory, ``sweep`` the seeds x strategies x sigmas
cross product, and ``verify`` one of the property suites.  Exit codes are
part of the contract so sweeps can triage failures mechanically:

    0  success
    1  a verify suite found failing properties
    2  config problem (bad file, unknown key, hash mismatch, bad arguments)
    3  divergence while generating data or evaluating
    4  training aborted on a non-finite loss
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import (ConfigError, cmd_evaluate, cmd_generate, cmd_sweep,
                          cmd_train, load_config)
from .seqops import DivergedRunError
from .training import TrainingAbortError
from .verify import SUITES, format_report, run_suite

EXIT_OK = 0
EXIT_SUITE_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ABORTED = 4


def _seed_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--seeds wants comma-separated integers, got {text!r}") from None


def _fmt_metric(value) -> str:
    return "nan" if value is None else f"{value:.6g}"


def _do_generate(args) -> int:
    cfg = load_config(args.config)
    info = cmd_generate(cfg, args.out)
    print(info["dataset_hash"])
    return EXIT_OK


def _do_train(args) -> int:
    cfg = load_config(args.config)
    report = cmd_train(cfg, args.dataset, args.out)
    print(f"final loss {report['final_loss']:.6g} after "
          f"{report['epochs_run']} epochs "
          f"(diverged trajectories: {report['divergence_count']})")
    return EXIT_OK


def _do_evaluate(args) -> int:
    cfg = load_config(args.config)
    run_dir = os.path.dirname(os.path.abspath(args.config))
    metrics = cmd_evaluate(cfg, run_dir, args.out)
    print("ol_mse=" + _fmt_metric(metrics["ol_mse"])
          + " cl_mse=" + _fmt_metric(metrics["cl_mse"])
          + " ol_r2=" + _fmt_metric(metrics["ol_r2"])
          + " cl_r2=" + _fmt_metric(metrics["cl_r2"])
          + f" diverged_ol={metrics['diverged_ol']}"
          + f" diverged_cl={metrics['diverged_cl']}")
    return EXIT_OK


def _do_sweep(args) -> int:
    cfg = load_config(args.config)
    rows = cmd_sweep(cfg, args.out, seeds=args.seeds)
    print(f"wrote {len(rows)} rows to {os.path.join(args.out, 'results.csv')}")
    return EXIT_OK


def _do_verify(args) -> int:
    report = run_suite(args.suite)
    print(format_report(report))
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"verify_{args.suite}.json")
        with open(path, "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return EXIT_OK if report["passed"] else EXIT_SUITE_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ici",
        description="Closed-loop identification with a stabilizing controller "
                    "in the loop: data generation, training, evaluation and "
                    "self-verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="collect a dataset from the true loop")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.set_defaults(func=_do_generate)

    p = sub.add_parser("train", help="fit one strategy on a stored dataset")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory to write")
    p.set_defaults(func=_do_train)

    p = sub.add_parser("evaluate", help="evaluate a run directory's checkpoint")
    p.add_argument("--config", required=True,
                   help="config.json of the run (checkpoint.json sits next to it)")
    p.add_argument("--out", help="where to write metrics (default: run directory)")
    p.set_defaults(func=_do_evaluate)

    p = sub.add_parser("sweep",
                       help="train and evaluate seeds x strategies x sigmas")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="directory for results.csv")
    p.add_argument("--seeds", type=_seed_list,
                   help="comma-separated seed list overriding the config "
                        "(worker count comes from ICI_THREADS)")
    p.set_defaults(func=_do_sweep)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True, choices=sorted(SUITES),
                   help="which suite to run")
    p.add_argument("--out", help="directory for the JSON report")
    p.set_defaults(func=_do_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedRunError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except TrainingAbortError as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
