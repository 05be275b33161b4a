"""Boxes, detections, tubelets, clips and the action vocabulary.

All values are immutable once built. Boxes are half-open real rectangles,
so ``area = (x2 - x1) * (y2 - y1)``; zero-area boxes are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PERSON = "person"
OBJECT = "object"
KINDS = (PERSON, OBJECT)


class InvalidBox(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBox(f"non-finite box {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBox(f"degenerate box {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, coords) -> "Box":
        x1, y1, x2, y2 = (float(c) for c in coords)
        return cls(x1, y1, x2, y2)


def intersection(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    inter = intersection(a, b)
    if inter == 0.0:
        return 0.0
    if a == b:
        return 1.0
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True, eq=False)
class Detection:
    box: Box
    score: float
    kind: str
    feature: np.ndarray
    embedding: Optional[np.ndarray] = None
    # ground-truth identity, for audits only; inference code never reads it
    id_hint: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "feature", _frozen_vector(self.feature))
        if self.embedding is not None:
            object.__setattr__(self, "embedding", _frozen_vector(self.embedding))


def _frozen_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Tubelet:
    actor_index: int
    frames: tuple[int, ...]
    boxes: tuple[Box, ...]
    features: np.ndarray = field(compare=False)  # (len, D)
    detections: tuple[Detection, ...] = field(default=(), compare=False)
    match_distances: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.frames:
            raise ValueError("tubelet must hold at least one entry")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError(f"tubelet frames not strictly increasing: {self.frames}")
        if len(self.boxes) != len(self.frames) or len(self.features) != len(self.frames):
            raise ValueError("tubelet entries have mismatched lengths")

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class ActionVocabulary:
    pose: tuple[str, ...]
    manipulation: tuple[str, ...]
    interaction: tuple[str, ...]

    def __post_init__(self):
        for group, names in self.groups().items():
            if not names:
                raise ValueError(f"action group {group!r} is empty")
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate action names in vocabulary: {names}")

    def groups(self) -> dict[str, tuple[str, ...]]:
        return {"pose": self.pose, "manipulation": self.manipulation,
                "interaction": self.interaction}

    @property
    def names(self) -> tuple[str, ...]:
        return self.pose + self.manipulation + self.interaction

    def __len__(self):
        return len(self.pose) + len(self.manipulation) + len(self.interaction)

    def group_slice(self, group: str) -> slice:
        a, b = len(self.pose), len(self.pose) + len(self.manipulation)
        return {"pose": slice(0, a), "manipulation": slice(a, b),
                "interaction": slice(b, len(self))}[group]

    def group_of(self, class_index: int) -> str:
        for g in ("pose", "manipulation", "interaction"):
            s = self.group_slice(g)
            if s.start <= class_index < s.stop:
                return g
        raise IndexError(class_index)

    def to_dict(self) -> dict:
        return {"pose": list(self.pose), "manipulation": list(self.manipulation),
                "interaction": list(self.interaction)}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionVocabulary":
        return cls(tuple(d["pose"]), tuple(d["manipulation"]), tuple(d["interaction"]))


DEFAULT_VOCABULARY = ActionVocabulary(
    pose=("stand", "sit", "walk", "bend"),
    manipulation=("carry", "touch", "lift"),
    interaction=("talk_to", "hug", "hand_shake"),
)


@dataclass(frozen=True)
class GroundTruthActor:
    box: Box
    labels: tuple[int, ...]  # multi-hot over the vocabulary
    actor_id: Optional[str] = None


@dataclass(frozen=True)
class ClipSample:
    clip_id: str
    frames: tuple[tuple[Detection, ...], ...]
    gt_actors: tuple[GroundTruthActor, ...]
    vocabulary: ActionVocabulary = DEFAULT_VOCABULARY

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def middle_frame(self) -> int:
        return len(self.frames) // 2

    def label_matrix(self) -> np.ndarray:
        if not self.gt_actors:
            return np.zeros((0, len(self.vocabulary)))
        return np.array([a.labels for a in self.gt_actors], dtype=np.float64)


def validate_clip(clip: ClipSample, feature_dim: int, embedding_dim: int | None = None) -> list[str]:
    """Every invariant violation found in ``clip``; an empty list means valid."""
    errors: list[str] = []
    if clip.T < 1:
        errors.append("empty clip: no frames")
    n_classes = len(clip.vocabulary)
    for t, dets in enumerate(clip.frames):
        for k, det in enumerate(dets):
            where = f"frame {t} detection {k}"
            if det.kind not in KINDS:
                errors.append(f"{where}: unknown kind {det.kind!r}")
            if not 0.0 <= det.score <= 1.0:
                errors.append(f"{where}: score {det.score} outside [0, 1]")
            if len(det.feature) != feature_dim:
                errors.append(f"{where}: feature dimension {len(det.feature)} != {feature_dim}")
            elif not np.isfinite(det.feature).all():
                errors.append(f"{where}: non-finite feature value")
            if det.embedding is not None:
                if det.kind != PERSON:
                    errors.append(f"{where}: embedding on a non-person detection")
                if embedding_dim is not None and len(det.embedding) != embedding_dim:
                    errors.append(f"{where}: embedding dimension {len(det.embedding)} != {embedding_dim}")
    for k, actor in enumerate(clip.gt_actors):
        if len(actor.labels) != n_classes:
            errors.append(f"gt actor {k}: label length {len(actor.labels)} != {n_classes}")
        if any(v not in (0, 1) for v in actor.labels):
            errors.append(f"gt actor {k}: labels are not multi-hot")
    return errors
