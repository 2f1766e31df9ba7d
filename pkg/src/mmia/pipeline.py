"""End-to-end experiment pipeline, one function per stage.

Every stage reads its inputs from and writes its outputs to the run directory::

    <root>/<name>/
        config.yaml
        corpora/<family>/...      corpora/splits.json
        checkpoints/              target, shadow, mfe, attack models (+ *_train.json)
        scores/                   metric-based score tables and decisions
        features/                 feature dumps and feature-based decisions
        reports/{mb,fb}/          predictions.csv, roc.csv, summary.json, plots
        reports/summary.json

A stage whose outputs already exist is skipped, so an interrupted run resumes
where it stopped. Running the stages one by one gives the same files as
:func:`run_scenario`.
"""

import csv
import hashlib
import json
import logging
import os
import shutil
from pathlib import Path

import numpy as np
import yaml

from . import captioner as cap
from . import evalkit, fb_attack, mb_attack, mfe as mfe_mod
from .config import dump_config, to_dict
from .defenses import DpConfig
from .errors import ConfigError, DependencyError, StageError
from .synthdata import CorpusSpec, DatasetBundle, generate_corpus, load_corpus, save_corpus, \
    split_corpus
from .textsim import rouge_l

log = logging.getLogger(__name__)

STAGES = ("gen-data", "train-target", "train-shadow", "train-mfe", "attack-mb", "attack-fb",
          "evaluate", "report")
RUNS_ENV = "MMIA_RUNS"
CACHE_ENV = "MMIA_CACHE"

# offsets keep the seeds of different components apart
SEED_TARGET, SEED_SHADOW, SEED_MFE, SEED_MLP, SEED_SVM, SEED_DP = 1, 2, 3, 4, 5, 6


def default_root():
    return Path(os.environ.get(RUNS_ENV, "runs"))


def run_dir(cfg, root=None):
    return Path(root if root is not None else default_root()) / cfg.name


def sub_seed(cfg, offset):
    return cfg.seed * 100 + offset


def _require(*paths):
    for p in paths:
        if not Path(p).exists():
            raise DependencyError(str(p))


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    _require(path)
    return json.loads(Path(path).read_text())


# -- data ------------------------------------------------------------------------

def families(cfg):
    spec = cfg.spec
    return sorted({spec.shadow[0], spec.target[0]})


def stage_gen_data(cfg, rd):
    splits = {}
    for fam in families(cfg):
        corpus = generate_corpus(CorpusSpec(fam, cfg.corpus.size, cfg.seed))
        bundle = split_corpus(corpus, cfg.splits.n_member, cfg.splits.n_shadow, cfg.seed)
        bundle.check_disjoint()
        save_corpus(corpus, rd / "corpora" / fam)
        splits[fam] = bundle.id_sets()
    _write_json(rd / "corpora" / "splits.json", splits)


def load_bundles(rd):
    splits = _read_json(rd / "corpora" / "splits.json")
    bundles = {}
    for fam, ids in splits.items():
        _require(rd / "corpora" / fam / "manifest.jsonl")
        by_id = {p.id: p for p in load_corpus(rd / "corpora" / fam)}
        bundles[fam] = DatasetBundle(*[[by_id[i] for i in ids[s]] for s in DatasetBundle.SPLITS])
    return bundles


def target_eval_set(cfg, bundles):
    b = bundles[cfg.spec.target[0]]
    pairs = b.member + b.nonmember
    return pairs, [1] * len(b.member) + [0] * len(b.nonmember)


# -- model cache -------------------------------------------------------------------

def _cache_dir(cfg):
    d = cfg.cache_dir or os.environ.get(CACHE_ENV, "")
    return Path(d) if d else None


def _cache_key(kind, inputs):
    blob = json.dumps({"kind": kind, "inputs": inputs}, sort_keys=True).encode()
    return f"{kind}-{hashlib.sha256(blob).hexdigest()[:20]}"


def _cached(cfg, kind, inputs, outputs, build):
    """Produce ``outputs`` via ``build()`` unless a cached copy keyed by ``inputs`` exists."""
    cache = _cache_dir(cfg)
    key = _cache_key(kind, inputs)
    if cache is not None and all((cache / key / Path(o).name).exists() for o in outputs):
        for o in outputs:
            Path(o).parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(cache / key / Path(o).name, o)
        log.info("%s: reused cached %s", kind, key)
        return
    build()
    if cache is not None:
        (cache / key).mkdir(parents=True, exist_ok=True)
        for o in outputs:
            shutil.copyfile(o, cache / key / Path(o).name)


# -- captioners ----------------------------------------------------------------------

def _train_captioner(cfg, rd, role):
    spec = cfg.spec
    fam, arch = spec.target if role == "target" else spec.shadow
    section = cfg.target if role == "target" else cfg.shadow
    seed = sub_seed(cfg, SEED_TARGET if role == "target" else SEED_SHADOW)
    d = cfg.defense if role == "target" else None
    tcfg = cap.TrainConfig(
        epochs=section.epochs, batch_size=section.batch_size, learning_rate=section.learning_rate,
        weight_decay=d.l2 if d else 0.0, augment=bool(d and d.augment),
        dp=DpConfig(d.clip_norm, d.noise_multiplier, sub_seed(cfg, SEED_DP)) if d and d.dp else None,
        seed=seed)
    ckpt = rd / "checkpoints" / f"{role}.ckpt"
    info = rd / "checkpoints" / f"{role}_train.json"
    inputs = {"family": fam, "arch": arch, "corpus": to_dict(cfg.corpus),
              "splits": to_dict(cfg.splits), "data_seed": cfg.seed, "role": role,
              "train": {k: v for k, v in vars(tcfg).items() if k != "dp"},
              "dp": vars(tcfg.dp) if tcfg.dp else None,
              "utility_samples": cfg.eval.utility_samples}

    def build():
        bundle = load_bundles(rd)[fam]
        pairs = bundle.member if role == "target" else bundle.shadow_member
        vocab = cap.Vocab.from_captions([p.caption for p in pairs])
        model = cap.build_model(arch, vocab, seed)
        model, history = cap.train(model, pairs, tcfg)
        cap.save_checkpoint(model, ckpt)
        held_out = bundle.public[:cfg.eval.utility_samples]
        outs = cap.caption_batch(model, [p.image for p in held_out])
        util = [max(rouge_l(o, r) for r in p.captions) if o else 0.0
                for o, p in zip(outs, held_out)]
        _write_json(info, {"role": role, "family": fam, "arch": arch, "loss_history": history,
                           "heldout_rouge_l": float(np.mean(util)) if util else None,
                           "defense": to_dict(cfg.defense) if role == "target" else None})

    _cached(cfg, f"{role}-captioner", inputs, [ckpt, info], build)


def stage_train_target(cfg, rd):
    _require(rd / "corpora" / "splits.json")
    _train_captioner(cfg, rd, "target")


def stage_train_shadow(cfg, rd):
    _require(rd / "corpora" / "splits.json")
    _train_captioner(cfg, rd, "shadow")


# -- feature extractor ---------------------------------------------------------------------

def stage_train_mfe(cfg, rd):
    _require(rd / "corpora" / "splits.json")
    fam = cfg.spec.shadow[0]
    seed = sub_seed(cfg, SEED_MFE)
    mcfg = mfe_mod.MfeConfig(epochs=cfg.mfe.epochs, batch_size=cfg.mfe.batch_size,
                             learning_rate=cfg.mfe.learning_rate, train_text=cfg.mfe.train_text,
                             seed=seed)
    ckpt, info = rd / "checkpoints" / "mfe.ckpt", rd / "checkpoints" / "mfe_train.json"
    inputs = {"family": fam, "corpus": to_dict(cfg.corpus), "splits": to_dict(cfg.splits),
              "data_seed": cfg.seed, "mfe": to_dict(cfg.mfe), "seed": seed}

    def build():
        public = load_bundles(rd)[fam].public
        vocab = cap.Vocab.from_captions([p.caption for p in public])
        model = mfe_mod.build_mfe(vocab, seed, cfg.mfe.feature_dim)
        model, history = mfe_mod.pretrain_mfe(model, public, mcfg)
        mfe_mod.save_mfe(model, ckpt)
        _write_json(info, {"family": fam, "n_public": len(public), "loss_history": history})

    _cached(cfg, "mfe", inputs, [ckpt, info], build)


# -- attacks ---------------------------------------------------------------------------------

def stage_attack_mb(cfg, rd):
    _require(rd / "checkpoints" / "shadow.ckpt", rd / "checkpoints" / "target.ckpt")
    bundles = load_bundles(rd)
    sb = bundles[cfg.spec.shadow[0]]
    shadow = cap.load_checkpoint(rd / "checkpoints" / "shadow.ckpt")
    target = cap.load_checkpoint(rd / "checkpoints" / "target.ckpt")
    records = (mb_attack.collect_scores(shadow, sb.shadow_member, mb_attack.MEMBER)
               + mb_attack.collect_scores(shadow, sb.shadow_nonmember, mb_attack.NONMEMBER))
    mb_attack.write_scores(records, rd / "scores" / "shadow_scores.csv")
    attacker = mb_attack.fit_attacker(records, cfg.attack.mb_classifier, cfg.attack.svm_c,
                                      cfg.attack.mb_metric, sub_seed(cfg, SEED_SVM))
    _write_json(rd / "checkpoints" / "mb_attacker.json",
                {**mb_attack.attacker_to_dict(attacker),
                 "shadow_accuracy": mb_attack.shadow_accuracy(attacker, records)})
    pairs, _ = target_eval_set(cfg, bundles)
    target_records = mb_attack.collect_scores(target, pairs)
    mb_attack.write_scores(target_records, rd / "scores" / "target_scores.csv")
    _write_decisions(rd / "scores" / "mb_decisions.csv", "decision",
                     [(r.sample_id, attacker.decision(r.scores),
                       int(mb_attack.infer_mb(attacker, r.scores) == mb_attack.MEMBER))
                      for r in target_records])


def stage_attack_fb(cfg, rd):
    _require(rd / "checkpoints" / "shadow.ckpt", rd / "checkpoints" / "target.ckpt",
             rd / "checkpoints" / "mfe.ckpt")
    bundles = load_bundles(rd)
    sb = bundles[cfg.spec.shadow[0]]
    shadow = cap.load_checkpoint(rd / "checkpoints" / "shadow.ckpt")
    target = cap.load_checkpoint(rd / "checkpoints" / "target.ckpt")
    extractor = mfe_mod.load_mfe(rd / "checkpoints" / "mfe.ckpt")
    ds = fb_attack.build_attack_dataset(extractor, shadow, sb.shadow_member, sb.shadow_nonmember)
    fb_attack.write_features(ds.ids, ds.z, ds.labels.astype(int).tolist(),
                             rd / "features" / "shadow_features.csv")
    acfg = fb_attack.AttackConfig(cfg.attack.epochs, cfg.attack.batch_size,
                                  cfg.attack.learning_rate, sub_seed(cfg, SEED_MLP))
    mlp = fb_attack.build_attack_mlp(ds.z.shape[1], acfg.seed)
    mlp, history = fb_attack.train_attack(mlp, ds, acfg)
    fb_attack.save_attack_mlp(mlp, rd / "checkpoints" / "attack_mlp.ckpt")
    _write_json(rd / "checkpoints" / "attack_mlp_train.json", {"loss_history": history})
    pairs, _ = target_eval_set(cfg, bundles)
    report, z = fb_attack.run_fb_attack(extractor, target, pairs, mlp)
    fb_attack.write_features(report.ids, z, [None] * len(z), rd / "features" / "target_features.csv")
    _write_decisions(rd / "features" / "fb_decisions.csv", "prob",
                     list(zip(report.ids, report.values, report.preds)))


def _write_decisions(path, value_name, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", value_name, "pred"])
        for sid, value, pred in rows:
            w.writerow([sid, repr(float(value)), pred])


def _read_decisions(path):
    _require(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0][1], [(r[0], float(r[1]), int(r[2])) for r in rows[1:]]


def attacks(cfg):
    mode = cfg.attack.mode
    return ["mb", "fb"] if mode == "both" else [mode]


DECISIONS = {"mb": ("scores", "mb_decisions.csv"), "fb": ("features", "fb_decisions.csv")}


def build_report(cfg, rd, kind):
    bundles = load_bundles(rd)
    pairs, truths = target_eval_set(cfg, bundles)
    truth = {p.id: t for p, t in zip(pairs, truths)}
    value_name, rows = _read_decisions(rd.joinpath(*DECISIONS[kind]))
    return evalkit.AttackReport(kind, [r[0] for r in rows], [r[1] for r in rows],
                                [r[2] for r in rows], [truth[r[0]] for r in rows],
                                value_name=value_name, scenario=cfg.spec.code)


def stage_evaluate(cfg, rd):
    for kind in attacks(cfg):
        report = build_report(cfg, rd, kind)
        report.extra["scenario_class"] = cfg.spec.scenario_class
        evalkit.emit_report(report, rd / "reports" / kind, plots=False)


def stage_report(cfg, rd):
    overall = {"name": cfg.name, "scenario": cfg.spec.code,
               "scenario_class": cfg.spec.scenario_class, "seed": cfg.seed,
               "defense": to_dict(cfg.defense)}
    target_info = _read_json(rd / "checkpoints" / "target_train.json")
    overall["target_heldout_rouge_l"] = target_info["heldout_rouge_l"]
    for kind in attacks(cfg):
        _require(rd / "reports" / kind / "summary.json")
        report = build_report(cfg, rd, kind)
        report.extra["scenario_class"] = cfg.spec.scenario_class
        features = None
        if kind == "fb" and cfg.eval.plots:
            ids, z, _ = fb_attack.read_features(rd / "features" / "target_features.csv")
            order = {sid: i for i, sid in enumerate(ids)}
            features = z[[order[i] for i in report.ids]]
        evalkit.emit_report(report, rd / "reports" / kind, features=features,
                            plots=cfg.eval.plots, perplexity=cfg.eval.tsne_perplexity,
                            tsne_iters=cfg.eval.tsne_iters, seed=cfg.seed)
        overall[kind] = {"accuracy": report.accuracy,
                         "auc": report.roc.auc if report.roc else None, "n": len(report.ids)}
    _write_json(rd / "reports" / "summary.json", overall)


STAGE_FUNCS = {
    "gen-data": stage_gen_data,
    "train-target": stage_train_target,
    "train-shadow": stage_train_shadow,
    "train-mfe": stage_train_mfe,
    "attack-mb": stage_attack_mb,
    "attack-fb": stage_attack_fb,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def stage_outputs(cfg, rd, stage):
    c = rd / "checkpoints"
    return {
        "gen-data": [rd / "corpora" / "splits.json"],
        "train-target": [c / "target.ckpt", c / "target_train.json"],
        "train-shadow": [c / "shadow.ckpt", c / "shadow_train.json"],
        "train-mfe": [c / "mfe.ckpt", c / "mfe_train.json"],
        "attack-mb": [rd / "scores" / "mb_decisions.csv"],
        "attack-fb": [rd / "features" / "fb_decisions.csv"],
        "evaluate": [rd / "reports" / k / "summary.json" for k in attacks(cfg)],
        "report": [rd / "reports" / "summary.json"],
    }[stage]


def needed_stages(cfg):
    skip = set()
    if "fb" not in attacks(cfg):
        skip |= {"train-mfe", "attack-fb"}
    if "mb" not in attacks(cfg):
        skip.add("attack-mb")
    return [s for s in STAGES if s not in skip]


def _pin_config(cfg, rd):
    # a run directory belongs to exactly one config; resuming with another is an error
    path = rd / "config.yaml"
    if path.exists():
        if yaml.safe_load(path.read_text()) != to_dict(cfg):
            raise ConfigError(f"{rd} was created with a different config; pick a new name")
    else:
        dump_config(cfg, path)


def run_stage(cfg, stage, root=None, force=False):
    if stage not in STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    rd = run_dir(cfg, root)
    rd.mkdir(parents=True, exist_ok=True)
    _pin_config(cfg, rd)
    if not force and all(p.exists() for p in stage_outputs(cfg, rd, stage)):
        log.info("[%s] outputs present, skipping", stage)
        return rd
    log.info("[%s] running", stage)
    try:
        STAGE_FUNCS[stage](cfg, rd)
    except DependencyError:
        raise
    except Exception as e:
        raise StageError(stage, e) from e
    return rd


def run_scenario(cfg, root=None, force=False):
    """Run every stage needed by ``cfg``; returns the run directory."""
    rd = run_dir(cfg, root)
    for stage in needed_stages(cfg):
        try:
            run_stage(cfg, stage, root, force)
        except DependencyError as e:
            raise StageError(stage, e) from e
    return rd


def read_summary(rd):
    return _read_json(Path(rd) / "reports" / "summary.json")
