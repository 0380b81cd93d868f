"""Desk-scale experiment: generate, train full and ablated models, evaluate.

    python3 scripts/desk_run.py --config configs/desk.txt --work runs/desk [--seeds 0 1 2]
"""

import argparse
import json
import logging
from pathlib import Path

from sslide.evaluation import ablation_compare
from sslide.pipeline import ExperimentConfig, generate_dataset, run_eval, run_training


def one_seed(config: ExperimentConfig, work: Path, baselines: bool) -> dict:
    data = work / "data"
    if not (data / "manifest.txt").exists():
        generate_dataset(config, data)
    out = {}
    for ablate in (False, True):
        tag = "ablated" if ablate else "full"
        run = work / tag
        if not (run / "model.ckpt").exists():
            run_training(config, data, run, ablate=ablate)
        out[tag] = run_eval(run / "model.ckpt", data, run, baselines=baselines and not ablate)
    summary = ablation_compare(out["full"], out["ablated"])
    full = out["full"]
    summary.update(naive_mae_m=full.extras["naive_mae_m"], sslide_doa_mae_deg=full.doa_mae_deg,
                   **{k: v for k, v in full.extras.items() if k.endswith("_doa_mae_deg")})
    return summary


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", required=True)
    p.add_argument("--work", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--no-baselines", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = ExperimentConfig.load(args.config)
    results = {}
    for seed in args.seeds:
        results[seed] = one_seed(base.replace(seed=seed), Path(args.work) / f"seed{seed}", not args.no_baselines)
        print(f"seed {seed}: {json.dumps(results[seed], sort_keys=True)}", flush=True)
    wins = sum(r["mae_ablated_m"] >= r["mae_full_m"] for r in results.values())
    print(f"ablated >= full in {wins}/{len(results)} seeds")


if __name__ == "__main__":
    main()
