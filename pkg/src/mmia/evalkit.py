"""Attack evaluation: accuracy, ROC/AUC, exact t-SNE and report files."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PerplexityError, SingleClassError

log = logging.getLogger(__name__)

LOG_FPR_FLOOR = 1e-3
TSNE_MAX_POINTS = 2000


@dataclass
class RocCurve:
    thresholds: list
    fpr: list
    tpr: list
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr, self.tpr))


@dataclass
class AttackReport:
    """Per-sample decisions plus summary metrics for one attack run.

    ``truths`` and ``preds`` hold 1 for member and 0 for non-member.
    """
    attack: str
    ids: list
    values: list
    preds: list
    truths: list
    value_name: str = "score"
    scenario: str = ""
    accuracy: float = float("nan")
    roc: RocCurve = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.ids) == len(self.values) == len(self.preds) == len(self.truths)):
            raise ValueError("report columns have different lengths")
        if self.truths and all(t is not None for t in self.truths):
            self.accuracy = attack_accuracy(self.preds, self.truths)
            if len(set(self.truths)) == 2:
                self.roc = roc_curve(self.values, self.truths)


def attack_accuracy(preds, truths):
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(truths)} truths")
    if len(preds) == 0:
        raise ValueError("no predictions")
    return float(np.mean(np.asarray(preds) == np.asarray(truths)))


def roc_curve(values, truths):
    """ROC over every distinct decision value; ``value >= threshold`` means member.

    Tied values move together, so the trapezoid AUC equals the Mann-Whitney
    statistic with ties counted one half.
    """
    v = np.asarray(values, dtype=float)
    y = np.asarray(truths).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs both members and non-members")
    order = np.argsort(-v, kind="mergesort")
    v, y = v[order], y[order]
    # last index of each run of tied values
    ends = np.r_[np.nonzero(np.diff(v))[0], len(v) - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    fpr = np.r_[0.0, fp / n_neg, 1.0]
    tpr = np.r_[0.0, tp / n_pos, 1.0]
    thresholds = [float("inf"), *v[ends].tolist(), float("-inf")]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(thresholds, fpr.tolist(), tpr.tolist(), auc)


def mann_whitney_auc(values, truths):
    """O(n_pos * n_neg) pairwise AUC, ties counted 1/2."""
    v = np.asarray(values, dtype=float)
    y = np.asarray(truths).astype(bool)
    pos, neg = v[y], v[~y]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassError("need both classes")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


# -- t-SNE ---------------------------------------------------------------------

def _conditional_p(d2_row, beta):
    p = np.exp(-(d2_row - d2_row.min()) * beta)
    s = p.sum()
    h = np.log(s) + beta * np.sum((d2_row - d2_row.min()) * p) / s
    return p / s, h


def input_affinities(x, perplexity, tol=1e-5, max_tries=100):
    """Symmetrised Gaussian affinities with per-point bandwidths found by bisection."""
    n = x.shape[0]
    sq = (x ** 2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_tries):
            pi, h = _conditional_p(row, beta)
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if np.isinf(hi) else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        p[i, np.arange(n) != i] = pi
    p = (p + p.T) / (2 * n)
    return np.maximum(p, 1e-12)


def tsne_2d(features, perplexity=30.0, iters=1000, seed=0, learning_rate=200.0,
            exaggeration=12.0, exaggeration_iters=250):
    """Exact O(n^2) t-SNE into two dimensions."""
    x = np.asarray(features, dtype=float)
    n = x.shape[0]
    if n < 4 * perplexity:
        raise PerplexityError(f"{n} points is too few for perplexity {perplexity}")
    if n > TSNE_MAX_POINTS:
        raise PerplexityError(f"exact t-SNE is limited to {TSNE_MAX_POINTS} points, got {n}")
    p = input_affinities(x, perplexity)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, (n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(iters):
        exag = exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        sq = (y ** 2).sum(axis=1)
        num = 1.0 / (1.0 + sq[:, None] + sq[None, :] - 2 * y @ y.T)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        pq = (exag * p - q) * num
        grad = 4 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2).clip(min=0.01)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    return y


# -- report files --------------------------------------------------------------

def _label(v):
    return "member" if v == 1 else "nonmember" if v == 0 else "unknown"


def write_predictions(report, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", report.value_name, "pred", "truth"])
        for row in zip(report.ids, report.values, report.preds, report.truths):
            w.writerow([row[0], repr(float(row[1])), _label(row[2]), _label(row[3])])


def read_predictions(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    code = {"member": 1, "nonmember": 0, "unknown": None}
    body = rows[1:]
    return dict(value_name=rows[0][1], ids=[r[0] for r in body],
                values=[float(r[1]) for r in body], preds=[code[r[2]] for r in body],
                truths=[code[r[3]] for r in body])


def write_roc(roc, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for row in zip(roc.thresholds, roc.fpr, roc.tpr):
            w.writerow([repr(float(x)) for x in row])
        f.write(f"# auc={roc.auc!r}\n")


def read_roc(path):
    lines = Path(path).read_text().splitlines()
    auc = float(lines[-1].split("=", 1)[1])
    rows = list(csv.reader(lines[1:-1]))
    cols = list(zip(*rows))
    return RocCurve(*[list(map(float, c)) for c in cols], auc)


def summary(report):
    out = {"attack": report.attack, "scenario": report.scenario, "n": len(report.ids),
           "accuracy": report.accuracy, "auc": report.roc.auc if report.roc else None}
    out.update(report.extra)
    return out


def _plot_roc(roc, path, log_scale):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    fpr = np.asarray(roc.fpr)
    if log_scale:
        fpr = np.clip(fpr, LOG_FPR_FLOOR, 1.0)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlim(LOG_FPR_FLOOR, 1)
        ax.set_ylim(LOG_FPR_FLOOR, 1.05)
        grid = np.logspace(np.log10(LOG_FPR_FLOOR), 0, 50)
        ax.plot(grid, grid, ":", color="gray")
    else:
        ax.plot([0, 1], [0, 1], ":", color="gray")
    ax.plot(fpr, np.clip(roc.tpr, LOG_FPR_FLOOR if log_scale else 0, 1), lw=1.5,
            label=f"AUC = {roc.auc:.3f}")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _plot_features(points, truths, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.asarray(truths)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(*points[t == 0].T, s=4, c="tab:blue", label="non-member")
    ax.scatter(*points[t == 1].T, s=4, c="tab:red", label="member")
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(loc="best", markerscale=3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def emit_report(report, out_dir, features=None, plots=True, perplexity=30.0, tsne_iters=1000,
                seed=0):
    """Write predictions, ROC table, summary and plots into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(report, out / "predictions.csv")
    if report.roc is not None:
        write_roc(report.roc, out / "roc.csv")
    (out / "summary.json").write_text(json.dumps(summary(report), indent=2, sort_keys=True) + "\n")
    if not plots:
        return out
    if report.roc is not None:
        _plot_roc(report.roc, out / "roc_linear.png", log_scale=False)
        _plot_roc(report.roc, out / "roc_log.png", log_scale=True)
    if features is not None and len(features) >= 4 * perplexity and None not in report.truths:
        pts = tsne_2d(features, perplexity=perplexity, iters=tsne_iters, seed=seed)
        np.savetxt(out / "features_2d.csv", pts, delimiter=",", fmt="%.8g")
        _plot_features(pts, report.truths, out / "features_2d.png")
    return out
