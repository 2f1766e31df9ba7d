"""Shuffled-label sanity check on a finished run.

Refits the MB margin classifier and the FB attack MLP on permuted shadow labels
and reports their accuracy on the target evaluation set. A sound pipeline gives
values near 0.5; anything far from it points at leakage between splits.

    python scripts/shuffled_null.py runs/frfr --seeds 5
"""

import argparse
from pathlib import Path

import numpy as np

from mmia import evalkit, fb_attack, mb_attack


def null_accuracies(rd, seeds):
    shadow = mb_attack.read_scores(rd / "scores" / "shadow_scores.csv")
    target = mb_attack.read_scores(rd / "scores" / "target_scores.csv")
    pred = evalkit.read_predictions(rd / "reports" / "fb" / "predictions.csv")
    truth = dict(zip(pred["ids"], pred["truths"]))
    ids, z, labels = fb_attack.read_features(rd / "features" / "shadow_features.csv")
    tids, tz, _ = fb_attack.read_features(rd / "features" / "target_features.csv")
    out = []
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        perm = rng.permutation([r.label for r in shadow])
        fake = [mb_attack.ScoreRecord(r.sample_id, r.scores, lab) for r, lab in zip(shadow, perm)]
        clf = mb_attack.fit_margin_classifier(fake, seed=seed)
        mb_pred = [int(mb_attack.infer_mb(clf, r.scores) == mb_attack.MEMBER) for r in target]
        mb_acc = evalkit.attack_accuracy(mb_pred, [truth[r.sample_id] for r in target])
        ds = fb_attack.AttackDataset(ids, z, rng.permutation(np.asarray(labels, dtype=np.float32)))
        mlp, _ = fb_attack.train_attack(fb_attack.build_attack_mlp(z.shape[1], seed), ds,
                                        fb_attack.AttackConfig(seed=seed))
        fb_pred = (fb_attack.predict_proba(mlp, tz).reshape(-1) > 0.5).astype(int)
        fb_acc = evalkit.attack_accuracy(fb_pred, [truth[i] for i in tids])
        out.append((mb_acc, fb_acc))
    return out


def main():
    ap = argparse.ArgumentParser(description="shuffled-label null accuracies for a run")
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    for seed, (mb, fb) in enumerate(null_accuracies(args.run_dir, range(args.seeds))):
        print(f"seed {seed}: MB {mb:.3f}  FB {fb:.3f}")


if __name__ == "__main__":
    main()
