"""Evaluation and the end-to-end experiment pipeline behind the command line.

A run directory holds one artifact directory per stage::

    data/        train.jsonl, val_seen.jsonl, val_unseen.jsonl
    pretrain/    navigator.ckpt, reference_encoder.ckpt, log.jsonl
    meta/<method>/seed<s>/   encoder.ckpt (+ at.ckpt), log.jsonl
    adapt/seed<s>/           <split>.ckpt
    eval/<method>/seed<s>/   report.json, report.csv

Every stage directory carries ``stage.json`` with a digest of the configuration
it was built from; a stage is rebuilt whenever that digest differs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .diffcore import ParamSet
from .episodes import Dataset, generate_splits, load_dataset, render_pairs, save_dataset
from .meta import (ATTrainConfig, FrameBatch, MAMLConfig, TaskDistribution, adapt_at_test,
                   at_train, maml_train, mean_feature_loss)
from .metrics import METRIC_NAMES, MetricsRecord, aggregate, compute_metrics
from .navigator import PretrainConfig, navigator_kind, pretrain, rollout_batch
from .perception import AT_USAGE
from .world import CameraConfig

SPLITS = ("val_seen", "val_unseen")
METHODS = ("baseline", "maml", "at")
REPORT_VERSION = 1
SUCCESS_NOTE = ("success requires an explicit Stop within the threshold distance of the goal; "
                "episodes ending at the step limit never count as successes")


class StageError(RuntimeError):
    def __init__(self, stage: str, seed, cause: Exception):
        super().__init__(f"stage {stage} (seed {seed}) failed: {type(cause).__name__}: {cause}")
        self.stage, self.seed, self.cause = stage, seed, cause


# ---------------------------------------------------------------------------
# evaluation


def evaluate(nav: Mapping, enc: Mapping, dataset: Dataset, cam: CameraConfig,
             threshold: float | None = None, step_limit: int = 200) -> MetricsRecord:
    """Greedy rollouts of every episode, aggregated in episode-id order."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty split")
    threshold = dataset.threshold if threshold is None else threshold
    worlds = [dataset.world(ep.world_id) for ep in dataset.episodes]
    trajs = rollout_batch(nav, enc, dataset.episodes, worlds, cam, step_limit)
    return aggregate(compute_metrics(t, ep, threshold) for t, ep in zip(trajs, dataset.episodes))


def evaluate_policy(policy: Callable, dataset: Dataset, threshold: float | None = None,
                    step_limit: int = 200) -> MetricsRecord:
    """Evaluate a state-feedback policy ``policy(episode, world, state) -> Action``."""
    threshold = dataset.threshold if threshold is None else threshold
    eps = dataset.episodes
    worlds = [dataset.world(ep.world_id) for ep in eps]
    trajs = rollout_batch({}, {}, eps, worlds, None, step_limit,
                          action_override=lambda i, s: policy(eps[i], worlds[i], s))
    return aggregate(compute_metrics(t, ep, threshold) for t, ep in zip(trajs, eps))


# ---------------------------------------------------------------------------
# configuration helpers


def cam_from(d: Mapping) -> CameraConfig:
    return CameraConfig.from_dict(d)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _stage_ok(path: Path, stamp: dict, files) -> bool:
    meta = path / "stage.json"
    if not meta.exists() or not all((path / f).exists() for f in files):
        return False
    return json.loads(meta.read_text()) == stamp


def _write_stamp(path: Path, stamp: dict):
    (path / "stage.json").write_text(json.dumps(stamp, sort_keys=True, indent=1) + "\n")


def _jsonl_logger(path: Path):
    fh = open(path, "w")

    def log(rec: dict):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

    return log, fh


def _data_stamp(cfg):
    return {"stage": "data", "seed": cfg["seed"], "data": cfg["data"], "threshold": cfg["threshold"]}


def _pretrain_stamp(cfg):
    return {"stage": "pretrain", "seed": cfg["seed"], "navigator": cfg["navigator"],
            "ref_cam": cfg["ref_cam"], "pretrain": cfg["pretrain"], "data": _digest(_data_stamp(cfg))}


def _meta_stamp(cfg, method, seed):
    return {"stage": f"meta-{method}", "seed": seed, "train_cams": cfg["train_cams"],
            "params": cfg[method], "pretrain": _digest(_pretrain_stamp(cfg))}


def _adapt_stamp(cfg, seed):
    return {"stage": "adapt", "seed": seed, "test_cam": cfg["test_cam"], "adapt": cfg["adapt"],
            "maml": cfg["maml"], "meta": _digest(_meta_stamp(cfg, "maml", seed))}


def maml_config(cfg) -> MAMLConfig:
    return MAMLConfig(**cfg["maml"])


def at_config(cfg) -> ATTrainConfig:
    return ATTrainConfig(**cfg["at"])


# ---------------------------------------------------------------------------
# stages


def stage_data(cfg: dict, out: Path, force: bool = False) -> dict[str, Dataset]:
    path = out / "data"
    stamp = _data_stamp(cfg)
    files = [f"{s}.jsonl" for s in ("train",) + SPLITS]
    if not force and _stage_ok(path, stamp, files):
        return {s: load_dataset(path / f"{s}.jsonl") for s in ("train",) + SPLITS}
    d = cfg["data"]
    splits = generate_splits(
        seed=cfg["seed"], n_train_worlds=d["train_worlds"], n_unseen_worlds=d["unseen_worlds"],
        n_train=d["train"], n_val_seen=d["val_seen"], n_val_unseen=d["val_unseen"],
        size=d["world_size"], threshold=cfg["threshold"])
    path.mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        save_dataset(ds, path / f"{name}.jsonl")
    _write_stamp(path, stamp)
    return splits


def stage_pretrain(cfg: dict, out: Path, force: bool = False) -> tuple[ParamSet, ParamSet]:
    path = out / "pretrain"
    stamp = _pretrain_stamp(cfg)
    if not force and _stage_ok(path, stamp, ["navigator.ckpt", "reference_encoder.ckpt"]):
        return ParamSet.load(path / "navigator.ckpt"), ParamSet.load(path / "reference_encoder.ckpt")
    data = stage_data(cfg, out)
    path.mkdir(parents=True, exist_ok=True)
    log, fh = _jsonl_logger(path / "log.jsonl")
    try:
        nav, enc, _ = pretrain(cfg["navigator"], data["train"], cam_from(cfg["ref_cam"]),
                               PretrainConfig(**cfg["pretrain"]), seed=cfg["seed"], log=log)
    finally:
        fh.close()
    nav.save(path / "navigator.ckpt")
    enc.save(path / "reference_encoder.ckpt")
    _write_stamp(path, stamp)
    return nav, enc


def task_distribution(cfg: dict, train: Dataset) -> TaskDistribution:
    return TaskDistribution([cam_from(c) for c in cfg["train_cams"]], train, cam_from(cfg["ref_cam"]))


def stage_meta(cfg: dict, out: Path, method: str, seed: int, force: bool = False):
    """Meta-train encoders; returns the encoder ParamSet (and AT params for ``at``)."""
    if method not in ("maml", "at"):
        raise ValueError(f"meta-training needs method maml or at, got {method!r}")
    path = out / "meta" / method / f"seed{seed}"
    stamp = _meta_stamp(cfg, method, seed)
    files = ["encoder.ckpt"] + (["at.ckpt"] if method == "at" else [])
    if not force and _stage_ok(path, stamp, files):
        enc = ParamSet.load(path / "encoder.ckpt")
        return (enc, ParamSet.load(path / "at.ckpt")) if method == "at" else enc
    data = stage_data(cfg, out)
    _, ref_enc = stage_pretrain(cfg, out)
    dist = task_distribution(cfg, data["train"])
    path.mkdir(parents=True, exist_ok=True)
    log, fh = _jsonl_logger(path / "log.jsonl")
    try:
        if method == "maml":
            result = maml_train(ref_enc, dist, maml_config(cfg), seed, log)
            result.save(path / "encoder.ckpt")
        else:
            enc, at = at_train(ref_enc, dist, at_config(cfg), seed, log)
            enc.save(path / "encoder.ckpt")
            at.save(path / "at.ckpt")
            result = (enc, at)
    finally:
        fh.close()
    _write_stamp(path, stamp)
    return result


def adaptation_batch(dataset: Dataset, ref_cam: CameraConfig, tgt_cam: CameraConfig,
                     n_frames: int, seed) -> FrameBatch:
    """One random state from each of ``n_frames`` distinct random episodes."""
    rng = np.random.default_rng(seed)
    n = len(dataset)
    picks = rng.choice(n, size=min(n_frames, n), replace=False)
    pairs = []
    for i in picks:
        ep = dataset.episodes[int(i)]
        world = dataset.world(ep.world_id)
        states = ep.states(world)
        pairs += render_pairs(world, [states[int(rng.integers(len(states)))]], ref_cam, tgt_cam)
    return FrameBatch.from_pairs(pairs, ref_cam, tgt_cam)


def stage_adapt(cfg: dict, out: Path, seed: int, force: bool = False) -> dict[str, ParamSet]:
    """k-shot adaptation of the MAML encoder at the test camera, once per split."""
    path = out / "adapt" / f"seed{seed}"
    stamp = _adapt_stamp(cfg, seed)
    if not force and _stage_ok(path, stamp, [f"{s}.ckpt" for s in SPLITS]):
        return {s: ParamSet.load(path / f"{s}.ckpt") for s in SPLITS}
    data = stage_data(cfg, out)
    _, ref_enc = stage_pretrain(cfg, out)
    meta_enc = stage_meta(cfg, out, "maml", seed)
    mcfg = maml_config(cfg)
    ref_cam, test_cam = cam_from(cfg["ref_cam"]), cam_from(cfg["test_cam"])
    path.mkdir(parents=True, exist_ok=True)
    adapted, summary = {}, {}
    for k, split in enumerate(SPLITS):
        batch = adaptation_batch(data[split], ref_cam, test_cam, mcfg.k, [seed, 404, k])
        enc = adapt_at_test(meta_enc, batch, mcfg, ref_enc, cfg["adapt"]["steps"])
        enc.save(path / f"{split}.ckpt")
        adapted[split] = enc
        summary[split] = {"loss_before": mean_feature_loss(meta_enc, batch, ref_enc),
                          "loss_after": mean_feature_loss(enc, batch, ref_enc)}
    (path / "adapt.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    _write_stamp(path, stamp)
    return adapted


def _encoders_for(cfg, out, method, seed) -> dict[str, ParamSet]:
    if method == "baseline":
        _, ref_enc = stage_pretrain(cfg, out)
        return {s: ref_enc for s in SPLITS}
    if method == "maml":
        return stage_adapt(cfg, out, seed)
    enc, _ = stage_meta(cfg, out, "at", seed)
    return {s: enc for s in SPLITS}


def _record_json(rec: MetricsRecord) -> dict:
    return {**rec.summary(), "per_episode": [r.row() for r in rec.episodes]}


def stage_eval(cfg: dict, out: Path, method: str, seed: int, cam: CameraConfig | None = None) -> dict:
    """Evaluate one method at one camera (default: the test camera) on both val splits."""
    data = stage_data(cfg, out)
    nav, _ = stage_pretrain(cfg, out)
    nav_digest = nav.digest()
    encs = _encoders_for(cfg, out, method, seed)
    cam = cam or cam_from(cfg["test_cam"])
    before = AT_USAGE.calls
    result = {}
    for split in SPLITS:
        rec = evaluate(nav, encs[split], data[split], cam, cfg["threshold"], cfg["step_limit"])
        result[split] = _record_json(rec)
    nav_after = ParamSet.load(out / "pretrain" / "navigator.ckpt").digest()
    return {
        "method": method,
        "seed": seed,
        "camera": cam.to_dict(),
        "at_layers_used": AT_USAGE.calls != before,
        "navigator_digest": nav_digest,
        "navigator_unchanged": nav_after == nav_digest,
        "splits": result,
    }


# ---------------------------------------------------------------------------
# reports


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def table_rows(rows: list[dict]) -> str:
    """CSV mirroring the comparison table: TL/NE/OR/SR/SPL for seen and unseen."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "camera", "seeds"]
               + [f"{s}_{m}" for s in ("seen", "unseen") for m in METRIC_NAMES])
    for r in rows:
        w.writerow([r["method"], r["camera"], r["seeds"]]
                   + [_fmt(r[split][m]) for split in SPLITS for m in METRIC_NAMES])
    return buf.getvalue()


def _cam_label(cam: Mapping) -> str:
    return f"{cam['height']:g}m/{cam['hfov']:g}deg"


def _mean_rows(evals: list[dict]) -> dict:
    row = {"method": evals[0]["method"], "camera": _cam_label(evals[0]["camera"]),
           "seeds": " ".join(str(e["seed"]) for e in evals)}
    for split in SPLITS:
        row[split] = {m: float(np.mean([e["splits"][split][m] for e in evals])) for m in METRIC_NAMES}
    return row


def write_report(path: Path, report: dict):
    path.mkdir(parents=True, exist_ok=True)
    (path / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    (path / "report.csv").write_text(table_rows(report["table"]))


def _seeds(cfg) -> list[int]:
    return [cfg["seed"] + i for i in range(cfg["meta_seeds"])]


def run_experiment(cfg: dict, out: Path, method: str | None = None) -> dict:
    """Full pipeline for one method; rows are averaged over the meta seeds.

    ``baseline`` yields two rows (reference and test camera); ``maml`` and
    ``at`` yield one row at the test camera.
    """
    method = method or cfg["method"]
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    out = Path(out)
    stage = "setup"
    try:
        stage = "gen-data"
        stage_data(cfg, out)
        stage = "pretrain"
        stage_pretrain(cfg, out)
        evals = []
        if method == "baseline":
            stage = "eval"
            ref = stage_eval(cfg, out, "baseline", cfg["seed"], cam_from(cfg["ref_cam"]))
            test = stage_eval(cfg, out, "baseline", cfg["seed"])
            rows = [_mean_rows([ref]), _mean_rows([test])]
            evals = [ref, test]
        else:
            for seed in _seeds(cfg):
                stage = "meta-train"
                stage_meta(cfg, out, method, seed)
                if method == "maml":
                    stage = "adapt"
                    stage_adapt(cfg, out, seed)
                stage = "eval"
                evals.append(stage_eval(cfg, out, method, seed))
            rows = [_mean_rows(evals)]
    except Exception as exc:
        raise StageError(stage, cfg["seed"], exc) from exc
    return {"rows": rows, "evals": evals}


def build_report(cfg: dict, out: Path, methods=None) -> dict:
    methods = list(methods or cfg["report_methods"])
    table, details = [], {}
    for m in methods:
        res = run_experiment(cfg, out, m)
        table += res["rows"]
        details[m] = res["evals"]
    report = {
        "report_version": REPORT_VERSION,
        "threshold": cfg["threshold"],
        "step_limit": cfg["step_limit"],
        "success_rule": SUCCESS_NOTE,
        "config_digest": _digest(cfg),
        "table": table,
        "runs": details,
    }
    write_report(Path(out), report)
    return report
