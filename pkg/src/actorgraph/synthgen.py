"""Synthetic clips standing in for the video backbone and the box detector.

Each detection carries a D-dim RoI-feature surrogate laid out in blocks::

    [ pose | key | manipulation | interaction | free noise dims ]

* pose: a pose class c adds ``pose_amplitude * e_c * (1 + cos(2 pi (c+1) t / T))``
  at frame t. Its temporal mean is exactly ``pose_amplitude * e_c``, but a
  single frame is buried in feature noise, so the class is read reliably only
  after aggregating the actor's own boxes over time.
* key: a relation-binding code of two halves. The first half is unique per
  actor and copied onto the one object the actor owns; the second half is
  shared by two interacting actors. Unowned objects keep fresh keys.
* manipulation: a manipulating actor carries a class-free flag on every
  manipulation dim and its owned object carries the class pattern ``e_c``.
  The actor alone tells that it manipulates, the object alone tells what is
  being manipulated; only the two together give a labelled actor.
  ``manipulation_actor_share`` moves part of the pattern onto the actor and
  ``manipulation_split`` adds noise ``+w`` to the actor and ``-w`` to its object.
* interaction: the pattern is split between the two partners as
  ``e_c / 2 + w`` and ``e_c / 2 - w`` with random ``w``; only the pair's sum is clean.

Person detections also carry an E-dim appearance surrogate: the actor's
identity vector (orthogonal across actors in a clip) plus Gaussian noise.

Every random draw happens unconditionally and is only scaled by the noise
levels afterwards, so changing a noise level keeps the rest of a clip fixed.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .domain import (DEFAULT_VOCABULARY, OBJECT, PERSON, ActionVocabulary, Box, ClipSample,
                     Detection, GroundTruthActor, iou)

MIN_BOX_SIDE = 2.0


class InfeasibleSpec(ValueError):
    pass


def make_rng(*seed_parts: int) -> np.random.Generator:
    """PCG64 seeded from integer parts; identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(s) for s in seed_parts])))


@dataclass(frozen=True)
class ScenarioSpec:
    T: int = 36
    D: int = 32
    E: int = 16
    n_actors: tuple[int, int] = (2, 3)
    n_objects: tuple[int, int] = (2, 3)
    vocabulary: ActionVocabulary = DEFAULT_VOCABULARY
    frame_width: float = 320.0
    frame_height: float = 240.0
    sigma_box: float = 1.0
    sigma_feat: float = 1.0
    sigma_emb: float = 0.05
    person_threshold: float = 0.9
    object_threshold: float = 0.5
    distractor_rate: float = 0.2       # expected false detections per frame
    miss_rate: float = 0.0             # per-frame drop probability, never at the middle frame
    speed: tuple[float, float] = (4.0, 8.0)          # px per frame
    actor_width: tuple[float, float] = (36.0, 56.0)
    actor_height: tuple[float, float] = (72.0, 112.0)
    object_size: tuple[float, float] = (16.0, 32.0)
    identity_scale: float = 1.0
    key_dims: int = 8
    pose_amplitude: float = 0.5
    key_amplitude: float = 1.0
    manipulation_amplitude: float = 1.0
    interaction_amplitude: float = 1.0
    interaction_split: float = 0.35
    manipulation_split: float = 0.0
    manipulation_actor_share: float = 0.0
    manipulation_flag: float = 0.5
    p_manipulation: float = 0.45
    p_interaction: float = 0.45

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid scenario spec: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("sigma_box", "sigma_feat", "sigma_emb", "distractor_rate", "identity_scale",
                     "pose_amplitude", "key_amplitude", "manipulation_amplitude",
                     "interaction_amplitude", "interaction_split", "manipulation_split",
                     "manipulation_flag"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        for name in ("n_actors", "n_objects", "speed", "actor_width", "actor_height", "object_size"):
            lo, hi = getattr(self, name)
            if lo > hi:
                out.append(f"{name} range is empty")
        if self.n_actors[0] < 1:
            out.append("n_actors must be >= 1")
        if self.n_objects[0] < 0:
            out.append("n_objects must be >= 0")
        if self.n_actors[1] > self.E:
            out.append("orthogonal identities need n_actors <= E")
        for name in ("person_threshold", "object_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                out.append(f"{name} must lie in (0, 1)")
        for name in ("p_manipulation", "p_interaction", "miss_rate", "manipulation_actor_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                out.append(f"{name} must lie in [0, 1]")
        if self.p_manipulation + self.p_interaction > 1.0:
            out.append("p_manipulation + p_interaction must be <= 1")
        if self.key_dims < 2:
            out.append("key_dims must be >= 2")
        if self.T < 1:
            out.append("T must be >= 1")
        if self.layout_width > self.D:
            out.append(f"feature layout needs D >= {self.layout_width}")
        return out

    @property
    def layout(self) -> dict[str, tuple[int, int]]:
        v = self.vocabulary
        p, k = len(v.pose), self.key_dims
        m, i = len(v.manipulation), len(v.interaction)
        return {"pose": (0, p), "key": (p, p + k), "manipulation": (p + k, p + k + m),
                "interaction": (p + k + m, p + k + m + i)}

    @property
    def layout_width(self) -> int:
        v = self.vocabulary
        return len(v.pose) + self.key_dims + len(v.manipulation) + len(v.interaction)

    def waveforms(self) -> np.ndarray:
        """(n_pose, T) temporal weights; class c uses frequency c + 1."""
        t = np.arange(self.T)
        return np.stack([1.0 + np.cos(2.0 * np.pi * (c + 1) * t / self.T)
                         for c in range(len(self.vocabulary.pose))])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["vocabulary"] = self.vocabulary.to_dict()
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.name == "vocabulary":
                v = ActionVocabulary.from_dict(v)
            elif isinstance(f.default, tuple):
                v = tuple(type(f.default[0])(x) for x in v)
            else:
                v = type(f.default)(v)
            kwargs[f.name] = v
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**kwargs)

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class ActorScript:
    actor_id: str
    identity: np.ndarray
    trajectory: list[Box]
    labels: tuple[int, ...]
    manipulation_targets: dict[int, int] = field(default_factory=dict)   # class -> object index
    interaction_targets: dict[int, int] = field(default_factory=dict)    # class -> actor index
    key: np.ndarray | None = None


def check_feasible(spec: ScenarioSpec) -> None:
    if spec.p_manipulation > 0 and spec.n_objects[1] == 0:
        raise InfeasibleSpec("manipulation labels requested but scenes have no objects")
    if spec.p_interaction > 0 and spec.n_actors[1] < 2:
        raise InfeasibleSpec("interaction labels requested but scenes have a single actor")


def _fold(x: float, lo: float, hi: float) -> float:
    """Reflect ``x`` into [lo, hi] (a bouncing trajectory)."""
    if hi <= lo:
        return lo
    span = hi - lo
    r = (x - lo) % (2.0 * span)
    return lo + (r if r <= span else 2.0 * span - r)


def _unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _jittered(box: Box, noise: np.ndarray, sigma: float, spec: ScenarioSpec) -> Box:
    # jitter is clipped to 3 sigma so middle-frame detections keep IoU >= 0.75
    d = np.clip(noise, -3.0, 3.0) * sigma
    x1, y1 = box.x1 + d[0], box.y1 + d[1]
    x2 = max(box.x2 + d[2], x1 + MIN_BOX_SIDE)
    y2 = max(box.y2 + d[3], y1 + MIN_BOX_SIDE)
    return Box(*(round(float(c), 3) for c in (x1, y1, x2, y2)))


def _q(v: np.ndarray) -> np.ndarray:
    return np.round(v, 6) + 0.0


def generate_clip(spec: ScenarioSpec, seed: int, clip_index: int = 0) -> tuple[ClipSample, list[ActorScript]]:
    """One clip, a pure function of ``(spec, seed, clip_index)``."""
    check_feasible(spec)
    rng = make_rng(seed, clip_index)
    vocab = spec.vocabulary
    T, D, E, mid = spec.T, spec.D, spec.E, spec.T // 2
    lay = spec.layout
    n_pose, n_manip, n_inter = len(vocab.pose), len(vocab.manipulation), len(vocab.interaction)
    off_m, off_i = len(vocab.pose), len(vocab.pose) + n_manip
    W, H = spec.frame_width, spec.frame_height

    N = int(rng.integers(spec.n_actors[0], spec.n_actors[1] + 1))
    M = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))

    # ---- scene layout ----------------------------------------------------
    q, _ = np.linalg.qr(rng.standard_normal((E, E)))
    identities = q[:, :N].T * spec.identity_scale
    trajectories = []
    for _ in range(N):
        w = rng.uniform(*spec.actor_width)
        h = rng.uniform(*spec.actor_height)
        cx_mid = rng.uniform(w / 2, W - w / 2)
        cy_mid = rng.uniform(h / 2, H - h / 2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(*spec.speed)
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
        traj = []
        for t in range(T):
            cx = _fold(cx_mid + vx * (t - mid), w / 2, W - w / 2)
            cy = _fold(cy_mid + vy * (t - mid), h / 2, H - h / 2)
            traj.append(Box(round(cx - w / 2, 3), round(cy - h / 2, 3),
                            round(cx + w / 2, 3), round(cy + h / 2, 3)))
        trajectories.append(traj)
    object_boxes = []
    for _ in range(M):
        s = rng.uniform(*spec.object_size)
        cx, cy = rng.uniform(s / 2, W - s / 2), rng.uniform(s / 2, H - s / 2)
        object_boxes.append(Box(round(cx - s / 2, 3), round(cy - s / 2, 3),
                                round(cx + s / 2, 3), round(cy + s / 2, 3)))

    # ---- labels and relation roles ----------------------------------------
    pose_of = rng.integers(0, n_pose, size=N)
    role_draw = rng.random(N)
    manip_class = rng.integers(0, n_manip, size=N)
    inter_class = rng.integers(0, n_inter, size=N)
    order = rng.permutation(N)
    object_order = rng.permutation(M)
    half_k = spec.key_dims // 2
    actor_keys = np.stack([np.concatenate([_unit(rng, half_k), _unit(rng, spec.key_dims - half_k)])
                           for _ in range(N)]) * spec.key_amplitude
    object_keys = (np.stack([np.concatenate([_unit(rng, half_k), _unit(rng, spec.key_dims - half_k)])
                             for _ in range(M)]) * spec.key_amplitude
                   if M else np.zeros((0, spec.key_dims)))
    split = rng.standard_normal((N, n_inter)) * spec.interaction_split
    manip_split = rng.standard_normal((N, n_manip)) * spec.manipulation_split

    labels = np.zeros((N, len(vocab)), dtype=int)
    labels[np.arange(N), pose_of] = 1
    manip_targets: list[dict[int, int]] = [{} for _ in range(N)]
    inter_targets: list[dict[int, int]] = [{} for _ in range(N)]
    object_manip = np.zeros((M, n_manip))
    actor_manip = np.zeros((N, n_manip))
    actor_inter = np.zeros((N, n_inter))
    # the first min(N, M) actors in draw order each own one object
    owned = {int(a): int(j) for a, j in zip(order, object_order)}
    wants_pair = []
    for a in (int(x) for x in order):
        r = role_draw[a]
        if r < spec.p_manipulation:
            if a in owned:
                c = int(manip_class[a])
                labels[a, off_m + c] = 1
                manip_targets[a][c] = owned[a]
        elif r < spec.p_manipulation + spec.p_interaction:
            wants_pair.append(a)
    for a, j in owned.items():
        share = np.zeros(n_manip)
        for c in manip_targets[a]:
            share[c] = spec.manipulation_amplitude
        flag = spec.manipulation_flag if manip_targets[a] else 0.0
        actor_manip[a] = spec.manipulation_actor_share * share + flag + manip_split[a]
        object_manip[j] = (1.0 - spec.manipulation_actor_share) * share - manip_split[a]
    for a, b in zip(wants_pair[0::2], wants_pair[1::2]):
        c = int(inter_class[a])
        labels[a, off_i + c] = labels[b, off_i + c] = 1
        inter_targets[a][c] = b
        inter_targets[b][c] = a
        actor_keys[b, half_k:] = actor_keys[a, half_k:]
        half = np.zeros(n_inter)
        half[c] = spec.interaction_amplitude / 2.0
        actor_inter[a] = half + split[a]
        actor_inter[b] = half - split[a]
    for a, j in owned.items():
        object_keys[j] = actor_keys[a]

    # ---- per-frame features ------------------------------------------------
    wave = spec.waveforms()
    actor_static = np.zeros((N, D))
    actor_static[:, lay["key"][0]:lay["key"][1]] = actor_keys
    actor_static[:, lay["manipulation"][0]:lay["manipulation"][1]] = actor_manip
    actor_static[:, lay["interaction"][0]:lay["interaction"][1]] = actor_inter
    object_static = np.zeros((M, D))
    if M:
        object_static[:, lay["key"][0]:lay["key"][1]] = object_keys
        object_static[:, lay["manipulation"][0]:lay["manipulation"][1]] = object_manip
    actor_noise = rng.standard_normal((T, N, D)) * spec.sigma_feat
    object_noise = rng.standard_normal((T, M, D)) * spec.sigma_feat
    emb_noise = rng.standard_normal((T, N, E)) * spec.sigma_emb
    actor_jitter = rng.standard_normal((T, N, 4))
    object_jitter = rng.standard_normal((T, M, 4))
    actor_scores = rng.uniform(0.92, 1.0, size=(T, N))
    object_scores = rng.uniform(0.6, 1.0, size=(T, M))
    missed = rng.random((T, N + M)) < spec.miss_rate
    missed[mid] = False

    frames = []
    for t in range(T):
        dets = []
        for a in range(N):
            if missed[t, a]:
                continue
            feat = actor_static[a].copy()
            feat[lay["pose"][0] + pose_of[a]] += spec.pose_amplitude * wave[pose_of[a], t]
            feat += actor_noise[t, a]
            dets.append(Detection(
                box=_jittered(trajectories[a][t], actor_jitter[t, a], spec.sigma_box, spec),
                score=round(float(actor_scores[t, a]), 4), kind=PERSON, feature=_q(feat),
                embedding=_q(identities[a] + emb_noise[t, a]), id_hint=f"actor-{a}"))
        for j in range(M):
            if missed[t, N + j]:
                continue
            dets.append(Detection(
                box=_jittered(object_boxes[j], object_jitter[t, j], spec.sigma_box, spec),
                score=round(float(object_scores[t, j]), 4), kind=OBJECT,
                feature=_q(object_static[j] + object_noise[t, j]), id_hint=f"object-{j}"))
        dets.extend(_distractors(rng, spec))
        perm = rng.permutation(len(dets))
        frames.append(tuple(dets[k] for k in perm))

    gt = tuple(GroundTruthActor(trajectories[a][mid], tuple(int(v) for v in labels[a]), f"actor-{a}")
               for a in range(N))
    clip = ClipSample(clip_id=f"clip-{seed}-{clip_index:06d}", frames=tuple(frames), gt_actors=gt,
                      vocabulary=vocab)
    scripts = [ActorScript(actor_id=f"actor-{a}", identity=identities[a], trajectory=trajectories[a],
                           labels=tuple(int(v) for v in labels[a]),
                           manipulation_targets=manip_targets[a], interaction_targets=inter_targets[a],
                           key=actor_keys[a].copy())
               for a in range(N)]
    return clip, scripts


def _distractors(rng: np.random.Generator, spec: ScenarioSpec) -> list[Detection]:
    count = int(rng.poisson(spec.distractor_rate))
    out = []
    for _ in range(count):
        is_person = rng.random() < 0.5
        if is_person:
            w, h = rng.uniform(*spec.actor_width), rng.uniform(*spec.actor_height)
            score = rng.uniform(0.5, 0.95)
        else:
            w = h = rng.uniform(*spec.object_size)
            score = rng.uniform(0.2, 0.6)
        x1 = rng.uniform(0.0, spec.frame_width - w)
        y1 = rng.uniform(0.0, spec.frame_height - h)
        feat = rng.standard_normal(spec.D) * spec.sigma_feat
        emb = _unit(rng, spec.E) * spec.identity_scale + rng.standard_normal(spec.E) * spec.sigma_emb
        out.append(Detection(box=Box(round(x1, 3), round(y1, 3), round(x1 + w, 3), round(y1 + h, 3)),
                             score=round(float(score), 4), kind=PERSON if is_person else OBJECT,
                             feature=_q(feat), embedding=_q(emb) if is_person else None, id_hint=None))
    return out


def middle_frame_recall(clip: ClipSample, min_iou: float = 0.75) -> bool:
    """True when every gt actor has a person detection at IoU >= ``min_iou``."""
    dets = [d for d in clip.frames[clip.middle_frame] if d.kind == PERSON]
    return all(any(iou(a.box, d.box) >= min_iou for d in dets) for a in clip.gt_actors)


def generate_clips(spec: ScenarioSpec, n_clips: int, seed: int) -> list[ClipSample]:
    return [generate_clip(spec, seed, k)[0] for k in range(n_clips)]


def class_counts(clips, vocabulary: ActionVocabulary) -> dict[str, int]:
    totals = np.zeros(len(vocabulary), dtype=int)
    for clip in clips:
        for a in clip.gt_actors:
            totals += np.asarray(a.labels, dtype=int)
    return {name: int(n) for name, n in zip(vocabulary.names, totals)}


def manifest_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.name + ".manifest.json")


def generate_dataset(spec: ScenarioSpec, n_clips: int, seed: int, path: str | Path) -> dict:
    """Write ``n_clips`` clips as JSONL plus a JSON manifest next to it."""
    check_feasible(spec)
    path = Path(path)
    counts = np.zeros(len(spec.vocabulary), dtype=int)

    def clips():
        for k in range(n_clips):
            clip, _ = generate_clip(spec, seed, k)
            for a in clip.gt_actors:
                counts[:] += np.asarray(a.labels, dtype=int)
            yield clip

    dataio.write_jsonl(path, clips())
    manifest = {
        "format_version": dataio.FORMAT_VERSION,
        "dataset": path.name,
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "n_clips": n_clips,
        "seed": seed,
        "spec": spec.to_dict(),
        "class_counts": {n: int(c) for n, c in zip(spec.vocabulary.names, counts)},
        "feature_layout": {k: list(v) for k, v in spec.layout.items()},
        "pose_waveforms": spec.waveforms().tolist(),
    }
    mpath = manifest_path(path)
    tmp = mpath.with_name(mpath.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, mpath)
    return manifest


def load_manifest(dataset_path: str | Path) -> dict:
    return json.loads(manifest_path(dataset_path).read_text())


def spec_from_ini(path: str | Path, section: str = "scenario") -> ScenarioSpec:
    """Read a ScenarioSpec from an INI section; see README for the key list."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    if section not in cp:
        return ScenarioSpec()
    return spec_from_mapping(dict(cp[section]))


def spec_from_mapping(raw: dict[str, str]) -> ScenarioSpec:
    d: dict = {}
    vocab = DEFAULT_VOCABULARY.to_dict()
    for key, text in raw.items():
        if key in ("pose", "manipulation", "interaction"):
            vocab[key] = [s.strip() for s in text.split(",") if s.strip()]
        elif "," in text:
            d[key] = [float(s) for s in text.split(",")]
        else:
            d[key] = float(text)
    d["vocabulary"] = vocab
    return ScenarioSpec.from_dict(d)
