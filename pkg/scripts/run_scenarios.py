"""Run several experiment configs (optionally over several seeds) and tabulate accuracies.

    python scripts/run_scenarios.py configs/frfr.yaml configs/fvfr.yaml configs/crfv.yaml --seeds 0 1 2
    python scripts/run_scenarios.py configs/frfr*.yaml --out runs   # undefended vs defenses

Trained models are shared between runs through the model cache ($MMIA_CACHE or
--cache), so scenarios that reuse a target or shadow do not retrain it.
"""

import argparse
import json
import logging
import os

from mmia import pipeline
from mmia.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--seeds", type=int, nargs="*", default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--cache", default=None, help="model cache directory")
    ap.add_argument("--json", default=None, help="also write the rows to this file")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.cache:
        os.environ[pipeline.CACHE_ENV] = args.cache

    rows = []
    for path in args.configs:
        for seed in args.seeds if args.seeds else [None]:
            cfg = load_config(path)
            if seed is not None and seed != cfg.seed:
                cfg.seed = seed
                cfg.name = f"{cfg.name}-seed{seed}"
            s = pipeline.read_summary(pipeline.run_scenario(cfg, args.out))
            rows.append(s)

    print(f"\n{'run':<20} {'code':<5} {'class':<13} {'MB acc':>7} {'MB auc':>7} "
          f"{'FB acc':>7} {'FB auc':>7} {'utility':>8}")
    for s in rows:
        mb, fb = s.get("mb", {}), s.get("fb", {})
        print(f"{s['name']:<20} {s['scenario']:<5} {s['scenario_class']:<13} "
              f"{mb.get('accuracy', float('nan')):7.3f} {mb.get('auc', float('nan')):7.3f} "
              f"{fb.get('accuracy', float('nan')):7.3f} {fb.get('auc', float('nan')):7.3f} "
              f"{s['target_heldout_rouge_l']:8.3f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
