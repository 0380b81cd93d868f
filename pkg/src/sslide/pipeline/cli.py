"""Command-line entry point.

    sslide gen --config exp.txt --out data/
    sslide train --config exp.txt --data data/ [--ablate] [--out runs/full]
    sslide test --checkpoint runs/full/model.ckpt --data data/ [--baselines]
    sslide baseline --data data/ --method {music,srp-phat}

``SSLIDE_THREADS`` caps the BLAS/OpenMP thread pools.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from .config import ExperimentConfig
from .dataset import generate_dataset
from .experiment import BASELINE_METHODS, run_baseline, run_eval, run_training

THREADS_ENV = "SSLIDE_THREADS"


def thread_limit() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sslide", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="simulate and persist a dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--ablate", action="store_true", help="train without the multipath decoder")
    t.add_argument("--out", default=None)

    e = sub.add_parser("test", help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--baselines", action="store_true", help="also score MUSIC and SRP-PHAT")
    e.add_argument("--out", default=None)

    b = sub.add_parser("baseline", help="score a classical DOA estimator")
    b.add_argument("--data", required=True)
    b.add_argument("--method", required=True, choices=BASELINE_METHODS)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", default=None)
    return p


def _run(args) -> int:
    if args.command == "gen":
        m = generate_dataset(ExperimentConfig.load(args.config), args.out, workers=args.workers)
        print(f"wrote {m.record_count} records ({m.T} datapoints x {m.S} snapshots) to {args.out}")
    elif args.command == "train":
        res = run_training(ExperimentConfig.load(args.config), args.data, args.out, ablate=args.ablate)
        r = res["result"]
        print(f"checkpoint {res['checkpoint']} best epoch {r.best_epoch} "
              f"val loss {min(r.val_losses):.5f} ({r.seconds:.0f} s)")
    elif args.command == "test":
        rep = run_eval(args.checkpoint, args.data, args.out, baselines=args.baselines)
        print(f"test MAE {rep.mae:.3f} m, DOA MAE {rep.doa_mae_deg:.2f} deg, "
              f"naive MAE {rep.extras['naive_mae_m']:.3f} m")
        for m in BASELINE_METHODS:
            if f"{m}_doa_mae_deg" in rep.extras:
                print(f"{m} DOA MAE {rep.extras[f'{m}_doa_mae_deg']:.2f} deg")
    elif args.command == "baseline":
        print(json.dumps(run_baseline(args.data, args.method, seed=args.seed, out_path=args.out), indent=1))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        n = thread_limit()
        if n is None:
            return _run(args)
        with threadpool_limits(limits=n):
            return _run(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"sslide: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
