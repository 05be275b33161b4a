"""``actorgraph`` command line.

Subcommands::

    generate        synthetic dataset (JSONL) + dataset manifest
    train-embedder  appearance embedder checkpoint
    track           tubelet dumps for every clip
    train           head checkpoint + train log for one variant
    eval            report files from a checkpoint or a predictions file
    ablate          every variant on one train/eval pair + comparison table
    graph-dump      per-clip relation-graph JSON from a tubelet+soft checkpoint

Every command writes a ``run.json`` manifest next to its outputs. Failures exit
nonzero with one ``error: <kind>: <message>`` line on stderr. Relative output
paths resolve under ``$ACTORGRAPH_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .association import EmbedderConfig, TrackerConfig, association_accuracy, build_tubelets, tubelets_to_json, train_embedder
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, dataclass_from_mapping, load_ini
from .dataio import read_jsonl
from .evaluation import report, write_report
from .experiment import (embedder_checkpoint, embedder_from_checkpoint, graph_snapshot, predict,
                         predictions_from_jsonl, predictions_to_jsonl, run_ablation, write_ablation)
from .synthgen import generate_dataset, manifest_path, spec_from_mapping
from .train import VARIANTS, TrainConfig, TrainedModel, train

OUTPUT_ROOT_ENV = "ACTORGRAPH_OUTPUT_ROOT"
log = logging.getLogger("actorgraph")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_path(text: str) -> Path:
    p = Path(text)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / p if root and not p.is_absolute() else p


def _existing(text: str, what: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


class Run:
    """Collects what a command read and wrote, then writes the manifest atomically."""

    def __init__(self, command: str, args: argparse.Namespace, config: dict):
        self.command = command
        self.argv = {k: v for k, v in vars(args).items() if k != "func"}
        self.config = config
        self.seeds: dict[str, int] = {}
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.extra: dict = {}
        self.start = time.perf_counter()

    def read(self, path: Path):
        self.inputs[str(path)] = _sha256(path)

    def wrote(self, *paths: Path):
        for p in paths:
            self.outputs[str(p)] = _sha256(p)

    def finish(self, manifest: Path):
        doc = {"command": self.command, "arguments": self.argv, "config": self.config,
               "seeds": self.seeds, "inputs": self.inputs, "outputs": self.outputs,
               "tool_version": {"actorgraph": __version__, "numpy": np.__version__,
                                "python": platform.python_version()},
               "wall_time_s": round(time.perf_counter() - self.start, 3), **self.extra}
        tmp = manifest.with_name(manifest.name + ".tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        os.replace(tmp, manifest)


def _config(args) -> dict:
    return load_ini(getattr(args, "config", None), getattr(args, "set", None))


def _embedder_cfg(cfg: dict, seed: int | None) -> EmbedderConfig:
    ec = dataclass_from_mapping(EmbedderConfig, cfg["embedder"])
    return dataclasses.replace(ec, seed=seed) if seed is not None else ec


def _train_cfg(cfg: dict, seed: int | None, variant: str | None = None) -> TrainConfig:
    raw = dict(cfg["train"])
    if variant is not None:
        raw["variant"] = variant
    tc = dataclass_from_mapping(TrainConfig, raw)
    return dataclasses.replace(tc, seed=seed) if seed is not None else tc


def _eval_settings(cfg: dict) -> tuple[int, float]:
    e = cfg["eval"]
    unknown = set(e) - {"min_gt", "iou_thresh"}
    if unknown:
        raise ConfigError(f"unknown eval keys: {', '.join(sorted(unknown))}")
    return int(e.get("min_gt", 5)), float(e.get("iou_thresh", 0.5))


def _dataset(run: Run, text: str):
    path = _existing(text, "dataset")
    run.read(path)
    clips = read_jsonl(path)
    if not clips:
        raise ValueError(f"dataset {path} is empty")
    return clips


# -- commands ------------------------------------------------------------------------

def cmd_generate(args) -> None:
    cfg = _config(args)
    if args.n < 0:
        raise ValueError("--n must be >= 0")
    spec = spec_from_mapping(cfg["scenario"])
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run = Run("generate", args, {"scenario": spec.to_dict()})
    run.seeds["dataset"] = args.seed
    generate_dataset(spec, args.n, args.seed, out)
    run.wrote(out, manifest_path(out))
    run.finish(out.with_name(out.name + ".run.json"))


def cmd_train_embedder(args) -> None:
    cfg = _config(args)
    ec = _embedder_cfg(cfg, args.seed)
    run = Run("train-embedder", args, {"embedder": dataclasses.asdict(ec)})
    clips = _dataset(run, args.dataset)
    model, losses = train_embedder(clips, ec)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "embedder.ckpt", embedder_checkpoint(model, ec))
    (out / "embedder_loss.csv").write_text("iteration,loss\n" + "".join(f"{k},{v!r}\n" for k, v in enumerate(losses)))
    run.seeds["embedder"] = ec.seed
    run.wrote(out / "embedder.ckpt", out / "embedder_loss.csv")
    run.finish(out / "run.json")


def cmd_track(args) -> None:
    cfg = _config(args)
    tc = _train_cfg(cfg, None)
    tracker = TrackerConfig(iou_min=tc.tracker_iou, person_threshold=tc.person_threshold)
    run = Run("track", args, {"tracker": dataclasses.asdict(tracker)})
    clips = _dataset(run, args.dataset)
    emb_path = _existing(args.embedder, "embedder checkpoint")
    run.read(emb_path)
    model = embedder_from_checkpoint(load_checkpoint(emb_path))
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agree = total = 0
    lines = []
    for clip in clips:
        tubelets = build_tubelets(clip, model, tracker)
        a, n = association_accuracy(tubelets, clip.middle_frame)
        agree, total = agree + a, total + n
        lines.append(json.dumps(tubelets_to_json(clip, tubelets), separators=(",", ":")) + "\n")
    (out / "tubelets.jsonl").write_text("".join(lines))
    summary = {"linked": total, "agreeing": agree, "accuracy": agree / total if total else None}
    (out / "tracking.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.wrote(out / "tubelets.jsonl", out / "tracking.json")
    run.finish(out / "run.json")


def cmd_train(args) -> None:
    cfg = _config(args)
    tc = _train_cfg(cfg, args.seed, args.variant)
    ec = _embedder_cfg(cfg, args.seed)
    run = Run("train", args, {"train": tc.to_dict(), "embedder": dataclasses.asdict(ec)})
    clips = _dataset(run, args.dataset)
    if args.embedder:
        emb_path = _existing(args.embedder, "embedder checkpoint")
        run.read(emb_path)
        embedder = embedder_from_checkpoint(load_checkpoint(emb_path))
    else:
        embedder, _ = train_embedder(clips, ec)
        run.seeds["embedder"] = ec.seed
    ckpt, tlog = train(clips, embedder, tc)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", ckpt)
    (out / "train_log.csv").write_text(tlog.to_csv())
    run.seeds["train"] = tc.seed
    run.extra["train_wall_time_s"] = round(tlog.wall_time_s, 3)
    run.wrote(out / "model.ckpt", out / "train_log.csv")
    run.finish(out / "run.json")


def cmd_eval(args) -> None:
    cfg = _config(args)
    min_gt, iou_thresh = _eval_settings(cfg)
    run = Run("eval", args, {"eval": {"min_gt": min_gt, "iou_thresh": iou_thresh}})
    clips = _dataset(run, args.dataset)
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("give exactly one of --checkpoint and --predictions")
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        path = _existing(args.checkpoint, "checkpoint")
        run.read(path)
        model = TrainedModel.from_checkpoint(load_checkpoint(path), args.variant)
        preds = predict(model, clips, zero_objects=args.zero_objects)
        (out / "predictions.jsonl").write_text(predictions_to_jsonl(preds))
        run.wrote(out / "predictions.jsonl")
    else:
        path = _existing(args.predictions, "predictions file")
        run.read(path)
        preds = predictions_from_jsonl(path.read_text())
    rep = report(preds, clips, clips[0].vocabulary, min_gt, iou_thresh)
    run.wrote(*write_report(rep, out / "report"))
    run.finish(out / "run.json")


def cmd_ablate(args) -> None:
    cfg = _config(args)
    tc = _train_cfg(cfg, args.seed)
    ec = _embedder_cfg(cfg, args.seed)
    min_gt, iou_thresh = _eval_settings(cfg)
    raw = cfg["ablation"]
    unknown = set(raw) - {"variants"}
    if unknown:
        raise ConfigError(f"unknown ablation keys: {', '.join(sorted(unknown))}")
    variants = [v.strip() for v in raw.get("variants", ",".join(VARIANTS)).split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant {bad[0]!r}; choose from {', '.join(VARIANTS)}")
    run = Run("ablate", args, {"train": tc.to_dict(), "embedder": dataclasses.asdict(ec),
                               "eval": {"min_gt": min_gt, "iou_thresh": iou_thresh}, "variants": variants})
    train_clips = _dataset(run, args.dataset)
    eval_clips = _dataset(run, args.eval_dataset)
    result = run_ablation(train_clips, eval_clips, ec, tc, variants, min_gt, iou_thresh)
    out = _out_path(args.out)
    run.seeds.update({"embedder": ec.seed, "train": tc.seed})
    run.wrote(*write_ablation(result, out))
    run.extra["train_wall_time_s"] = {k: round(v, 3) for k, v in result.wall_time_s.items()}
    run.finish(out / "run.json")


def cmd_graph_dump(args) -> None:
    run = Run("graph-dump", args, {})
    clips = _dataset(run, args.dataset)
    path = _existing(args.checkpoint, "checkpoint")
    run.read(path)
    model = TrainedModel.from_checkpoint(load_checkpoint(path))
    by_id = {c.clip_id: c for c in clips}
    wanted = [s.strip() for s in args.clip_ids.split(",") if s.strip()] if args.clip_ids else list(by_id)
    missing = [c for c in wanted if c not in by_id]
    if missing:
        raise KeyError(f"clip id not in dataset: {missing[0]}")
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cid in wanted:
        p = out / f"{cid}.graph.json"
        p.write_text(json.dumps(graph_snapshot(model, by_id[cid]), indent=2, sort_keys=True) + "\n")
        run.wrote(p)
    run.finish(out / "run.json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actorgraph", description="Actor-centric relation graphs on synthetic clips.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, config=True, seed=True):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", help="INI run configuration")
            p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                           help="override one config value (repeatable)")
        if seed:
            p.add_argument("--seed", type=int, default=None if name != "generate" else 0)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of clips")
    p.add_argument("--out", required=True, help="output JSONL path")

    p = add("train-embedder", cmd_train_embedder, "train the appearance embedder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = add("track", cmd_track, "build tubelets for every clip", seed=False)
    p.add_argument("--dataset", required=True)
    p.add_argument("--embedder", required=True, help="embedder or head checkpoint")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the heads of one variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--embedder", help="frozen embedder checkpoint (trained on the dataset if omitted)")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate frame mAP", seed=False)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="JSONL of {clip_id, box, scores}")
    p.add_argument("--variant", choices=VARIANTS, help="assert the checkpoint's variant")
    p.add_argument("--zero-objects", action="store_true", help="zero object features before the graph")
    p.add_argument("--out", required=True)

    p = add("ablate", cmd_ablate, "train and evaluate every variant")
    p.add_argument("--dataset", required=True, help="training dataset")
    p.add_argument("--eval-dataset", required=True)
    p.add_argument("--out", required=True)

    p = add("graph-dump", cmd_graph_dump, "export soft relation graphs", config=False, seed=False)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip-ids", help="comma-separated clip ids (default: all)")
    p.add_argument("--out", required=True)
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:   # every failure becomes one parsable line
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
