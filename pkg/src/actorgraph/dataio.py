"""JSONL dataset format: one clip per line.

Line layout (``format_version`` 1)::

    {"format_version": 1,
     "clip_id": "clip-000000",
     "vocabulary": {"pose": [...], "manipulation": [...], "interaction": [...]},
     "frames": [[{"box": [x1, y1, x2, y2], "score": s, "kind": "person"|"object",
                  "feature": [D floats], "embedding": [E floats] | null,
                  "id_hint": "actor-0" | null}, ...],      # one list per frame
                ...],
     "gt_actors": [{"box": [x1, y1, x2, y2], "labels": [0/1 per class],
                    "actor_id": "actor-0"}, ...]}

``gt_actors`` describe the middle frame, index ``len(frames) // 2``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Iterator

from .domain import ActionVocabulary, Box, ClipSample, Detection, GroundTruthActor

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def detection_to_dict(det: Detection) -> dict:
    return {
        "box": det.box.as_list(),
        "score": det.score,
        "kind": det.kind,
        "feature": det.feature.tolist(),
        "embedding": None if det.embedding is None else det.embedding.tolist(),
        "id_hint": det.id_hint,
    }


def detection_from_dict(d: dict) -> Detection:
    return Detection(box=Box.from_list(d["box"]), score=float(d["score"]), kind=d["kind"],
                     feature=d["feature"], embedding=d.get("embedding"),
                     id_hint=d.get("id_hint"))


def clip_to_dict(clip: ClipSample) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "clip_id": clip.clip_id,
        "vocabulary": clip.vocabulary.to_dict(),
        "frames": [[detection_to_dict(d) for d in dets] for dets in clip.frames],
        "gt_actors": [{"box": a.box.as_list(), "labels": list(a.labels), "actor_id": a.actor_id}
                      for a in clip.gt_actors],
    }


def clip_from_dict(d: dict) -> ClipSample:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format_version {version!r}")
    return ClipSample(
        clip_id=d["clip_id"],
        frames=tuple(tuple(detection_from_dict(x) for x in dets) for dets in d["frames"]),
        gt_actors=tuple(GroundTruthActor(Box.from_list(a["box"]), tuple(int(v) for v in a["labels"]),
                                         a.get("actor_id"))
                        for a in d["gt_actors"]),
        vocabulary=ActionVocabulary.from_dict(d["vocabulary"]),
    )


def dumps_clip(clip: ClipSample) -> str:
    return json.dumps(clip_to_dict(clip), separators=(",", ":"))


def write_jsonl(path: str | Path, clips: Iterable[ClipSample]) -> int:
    """Write clips atomically; returns the number written."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    n = 0
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for clip in clips:
            fh.write(dumps_clip(clip))
            fh.write("\n")
            n += 1
    os.replace(tmp, path)
    return n


def iter_jsonl(path: str | Path) -> Iterator[ClipSample]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield clip_from_dict(json.loads(line))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc


def read_jsonl(path: str | Path) -> list[ClipSample]:
    return list(iter_jsonl(path))
