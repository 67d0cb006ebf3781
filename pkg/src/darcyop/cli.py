"""Command-line driver.

    darcyop gen-data --config cfg.json --out data/ --num 200 --seed 0 --phase single --dim 2
    darcyop train --data data/ --model aronet --feature trans --sampler gmm --init 100 \\
        --events 5 --per-event 20 --interval 200 --seed 0 --out model/
    darcyop evaluate --model model/ --data test/ --report report.json
    darcyop report --inputs a.json b.json --out summary.csv
    darcyop run --config experiment.json --out runs/a

Failures exit with status 1 and print one JSON line ``{"error": ..., "message": ...}``
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import torch

from . import experiment as ex
from .errors import DarcyOpError
from .storage import atomic_write_text, canonical_json, dataset_digest, read_dataset

REPORT_COLUMNS = ("source", "status", "model", "feature", "sampler", "seed", "train_size",
                  "num_test", "mre", "well_block_mre", "mse")


def _load_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DarcyOpError(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise DarcyOpError(f"config file {path} is not valid JSON: {err}") from None


def _write_timings(path: Path, timings: dict):
    atomic_write_text(path, canonical_json(timings) + "\n")


def cmd_gen_data(args):
    t0 = time.perf_counter()
    cfg = _load_config(args.config)
    ex.generate_dataset(cfg, args.num, args.seed, args.phase, args.dim, args.out)
    _write_timings(Path(args.out) / "timings.json", {"simulation": time.perf_counter() - t0})


def cmd_train(args):
    t0 = time.perf_counter()
    data = read_dataset(args.data)
    req = ex.TrainRequest(args.model, args.feature, args.sampler, args.init, args.events,
                          args.per_event, args.interval, args.seed)
    *_, log = ex.train_on_dataset(data, req, _load_config(args.config), args.out,
                                  dataset_digest(args.data))
    total = time.perf_counter() - t0
    _write_timings(Path(args.out) / "timings.json",
                   {"training": total - log.sampling_seconds, "sampling": log.sampling_seconds})


def cmd_evaluate(args):
    t0 = time.perf_counter()
    report = ex.evaluate_dirs(args.model, args.data)
    ex.dump_report(report, args.report)
    _write_timings(Path(args.report).with_suffix(".timings"),
                   {"evaluation": time.perf_counter() - t0})


def report_row(source, report: dict) -> dict:
    req = report.get("model", {}).get("request", {})
    row = {"source": str(source), "status": report.get("status", "ok"),
           "train_size": report.get("model", {}).get("train_size")}
    row.update({k: req.get(k) for k in ("model", "feature", "sampler", "seed")})
    row.update({k: report.get(k) for k in ("num_test", "mre", "well_block_mre", "mse")})
    return row


def cmd_report(args):
    rows = []
    for path in args.inputs:
        try:
            report = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise DarcyOpError(f"cannot read report {path}: {err}") from None
        rows.append(report_row(path, report))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in REPORT_COLUMNS})


def cmd_run(args):
    report, _ = ex.run_experiment(_load_config(args.config), args.out)
    if report["status"] != "ok":
        raise DarcyOpError(f"stage {report['stage']} failed: {report['error']}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darcyop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a labeled dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phase", choices=("single", "two"), default="single")
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an operator, optionally with adaptive sampling")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("aronet", "arunet"), default="aronet")
    p.add_argument("--feature", choices=("trans", "perm"), default="trans")
    p.add_argument("--sampler", choices=("random", "rar", "gmm"), default="random")
    p.add_argument("--init", type=int, required=True)
    p.add_argument("--events", type=int, default=0)
    p.add_argument("--per-event", type=int, default=20)
    p.add_argument("--interval", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON overrides for network/training/sampling")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="collect reports into a CSV table")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="generate, train and evaluate from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)  # fixed reduction order across machines
    try:
        args.func(args)
    except (DarcyOpError, ArithmeticError, ValueError, OSError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
