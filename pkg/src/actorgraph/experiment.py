"""Pipeline glue shared by the CLI and the acceptance suite: prediction, evaluation,
graph snapshots and the variant ablation."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .association import EmbedderConfig, EmbedderModel, train_embedder
from .checkpoint import Checkpoint, save_checkpoint
from .domain import Box, ClipSample
from .evaluation import EvalReport, ScoredPrediction, report, write_report
from .train import VARIANTS, PreparedClip, TrainConfig, TrainedModel, TrainLog, forward, prepare_clip, train

log = logging.getLogger(__name__)


def predict(model: TrainedModel, clips: list[ClipSample], zero_objects: bool = False,
            prepared: list[PreparedClip] | None = None) -> list[ScoredPrediction]:
    preds = []
    for k, clip in enumerate(clips):
        prep = prepared[k] if prepared is not None else model.prepare(clip)
        probs = model.predict_prepared(prep, zero_objects=zero_objects)
        preds.extend(ScoredPrediction(clip.clip_id, b, p) for b, p in zip(prep.actor_boxes, probs))
    return preds


def oracle_predictions(clips: list[ClipSample]) -> list[ScoredPrediction]:
    """Ground-truth boxes scored with their own labels."""
    return [ScoredPrediction(c.clip_id, a.box, np.asarray(a.labels, dtype=float))
            for c in clips for a in c.gt_actors]


def predictions_to_jsonl(preds: list[ScoredPrediction]) -> str:
    return "".join(json.dumps({"clip_id": p.clip_id, "box": p.box.as_list(),
                               "scores": [float(s) for s in p.scores]}, separators=(",", ":")) + "\n"
                   for p in preds)


def predictions_from_jsonl(text: str) -> list[ScoredPrediction]:
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out.append(ScoredPrediction(d["clip_id"], Box.from_list(d["box"]), d["scores"]))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"predictions line {n}: {exc}") from exc
    return out


def graph_snapshot(model: TrainedModel, clip: ClipSample) -> dict:
    """Actor and object boxes with the soft relation weights (self-edges dropped)."""
    if model.variant != "tubelet+soft":
        raise ValueError(f"graph snapshots need a tubelet+soft checkpoint, got {model.variant!r}")
    prep = model.prepare(clip)
    n = prep.n_actors
    snap = {"clip_id": clip.clip_id, "actor_boxes": [b.as_list() for b in prep.actor_boxes],
            "object_boxes": [b.as_list() for b in prep.object_boxes],
            "object_weights": [], "actor_weights": [], "actor_partners": [], "probabilities": []}
    if n == 0:
        return snap
    out = forward(prep, model.tensors(), model.variant)
    snap["object_weights"] = out.weights.object_matrix(n).tolist()
    snap["actor_weights"] = out.weights.actor_matrix(n).tolist()
    snap["actor_partners"] = [[k for k in range(n) if k != i] for i in range(n)]
    snap["probabilities"] = model.predict_prepared(prep).tolist()
    return snap


def embedder_checkpoint(model: EmbedderModel, cfg: EmbedderConfig) -> Checkpoint:
    return Checkpoint(params=model.params, seed=cfg.seed,
                      meta={"kind": "embedder", "embedder_config": dataclasses.asdict(cfg)})


def embedder_from_checkpoint(ckpt: Checkpoint) -> EmbedderModel:
    params = {k: v for k, v in ckpt.params.items() if k.startswith("embedder.")}
    if not params:
        raise ValueError("checkpoint holds no embedder tensors")
    return EmbedderModel(params)


# -- ablation --------------------------------------------------------------------

@dataclass
class AblationResult:
    reports: dict[str, EvalReport]
    checkpoints: dict[str, Checkpoint]
    logs: dict[str, TrainLog]
    embedder: EmbedderModel
    embedder_config: EmbedderConfig
    zero_objects: EvalReport | None = None
    wall_time_s: dict[str, float] = field(default_factory=dict)


def train_variant(train_clips, embedder, cfg: TrainConfig, cache: dict) -> tuple[Checkpoint, TrainLog]:
    # preparation depends only on the tracker and pooling settings, shared across variants
    key = (cfg.person_threshold, cfg.object_threshold, cfg.tracker_iou, cfg.label_iou, cfg.object_window)
    if key not in cache:
        cache[key] = [prepare_clip(c, embedder, cfg) for c in train_clips]
    return train(train_clips, embedder, cfg, prepared=cache[key])


def run_ablation(train_clips: list[ClipSample], eval_clips: list[ClipSample], embedder_cfg: EmbedderConfig,
                 train_cfg: TrainConfig, variants=VARIANTS, min_gt: int = 5, iou_thresh: float = 0.5,
                 embedder: EmbedderModel | None = None) -> AblationResult:
    if embedder is None:
        embedder, _ = train_embedder(train_clips, embedder_cfg)
    cache: dict = {}
    eval_cache: dict = {}
    result = AblationResult({}, {}, {}, embedder, embedder_cfg)
    for variant in variants:
        cfg = dataclasses.replace(train_cfg, variant=variant)
        ckpt, tlog = train_variant(train_clips, embedder, cfg, cache)
        model = TrainedModel.from_checkpoint(ckpt, variant)
        key = (cfg.person_threshold, cfg.object_threshold, cfg.tracker_iou, cfg.label_iou, cfg.object_window)
        if key not in eval_cache:
            eval_cache[key] = [model.prepare(c) for c in eval_clips]
        preds = predict(model, eval_clips, prepared=eval_cache[key])
        result.reports[variant] = report(preds, eval_clips, eval_clips[0].vocabulary, min_gt, iou_thresh)
        result.checkpoints[variant] = ckpt
        result.logs[variant] = tlog
        result.wall_time_s[variant] = tlog.wall_time_s
        if variant == "tubelet+soft":
            zero = predict(model, eval_clips, zero_objects=True, prepared=eval_cache[key])
            result.zero_objects = report(zero, eval_clips, eval_clips[0].vocabulary, min_gt, iou_thresh)
        log.info("%s: mAP %s", variant, result.reports[variant].mean_ap)
    return result


def comparison_rows(reports: dict[str, EvalReport]) -> list[dict]:
    rows = []
    for variant, rep in reports.items():
        row = {"variant": variant, "mean_ap": rep.mean_ap}
        row.update({f"{g}_ap": v for g, v in rep.group_ap.items()})
        rows.append(row)
    return rows


def comparison_table(reports: dict[str, EvalReport]) -> str:
    rows = comparison_rows(reports)
    if not rows:
        return ""
    cols = list(rows[0])
    width = max(len(r["variant"]) for r in rows) + 2
    lines = [f"{'variant':<{width}}" + "".join(f"{c:>20}" for c in cols[1:])]
    for r in rows:
        cells = "".join(f"{'-' if r[c] is None else format(r[c], '.4f'):>20}" for c in cols[1:])
        lines.append(f"{r['variant']:<{width}}" + cells)
    return "\n".join(lines) + "\n"


def write_ablation(result: AblationResult, out: Path) -> list[Path]:
    """Per-variant checkpoint, train log and report files plus the combined comparison."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    emb_path = out / "embedder.ckpt"
    save_checkpoint(emb_path, embedder_checkpoint(result.embedder, result.embedder_config))
    written.append(emb_path)
    for variant, rep in result.reports.items():
        vdir = out / variant.replace("+", "_")
        vdir.mkdir(exist_ok=True)
        save_checkpoint(vdir / "model.ckpt", result.checkpoints[variant])
        (vdir / "train_log.csv").write_text(result.logs[variant].to_csv())
        written += [vdir / "model.ckpt", vdir / "train_log.csv"]
        written += write_report(rep, vdir / "report")
    if result.zero_objects is not None:
        written += write_report(result.zero_objects, out / "tubelet_soft" / "report.zero_objects")
    (out / "comparison.txt").write_text(comparison_table(result.reports))
    (out / "comparison.json").write_text(json.dumps(comparison_rows(result.reports), indent=2, sort_keys=True)
                                         + "\n")
    written += [out / "comparison.txt", out / "comparison.json"]
    return written
