"""Appearance-embedding tracker that links person detections into tubelets.

An embedder trained with a triplet loss maps each person's appearance
surrogate to an embedding. Tracks start at every confident person detection
in the middle frame and grow forward and backward one frame at a time: the
candidates for a track are confident person boxes overlapping its previous
box by IoU > 0.5, and the link goes to the candidate closest in embedding
space. Conflicts are resolved greedily by ascending distance; a track with
no candidate stops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .domain import PERSON, Box, ClipSample, Detection, Tubelet, iou
from .layers import as_parameters, init_stack, stack_forward, stack_forward_np
from .synthgen import make_rng

log = logging.getLogger(__name__)

PREFIX = "embedder"


class DegenerateDataset(ValueError):
    pass


@dataclass
class EmbedderModel:
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, input_dim: int, output_dim: int, hidden: int = 32, seed: int = 0) -> "EmbedderModel":
        rng = make_rng(seed, 0xE3B)
        return cls(init_stack(rng, PREFIX, [input_dim, hidden, output_dim]))

    @property
    def input_dim(self) -> int:
        return self.params[f"{PREFIX}.w1"].shape[0]

    @property
    def output_dim(self) -> int:
        return self.params[f"{PREFIX}.w2"].shape[1]

    def embed(self, x: np.ndarray) -> np.ndarray:
        return stack_forward_np(np.atleast_2d(np.asarray(x, dtype=np.float64)), self.params, PREFIX)


@dataclass
class EmbedderConfig:
    margin: float = 0.2
    lr: float = 0.05
    iters: int = 300
    batch: int = 32
    seed: int = 0
    hidden: int = 32
    max_offset: int = 35   # frames between anchor and positive


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        n = len(self.anchors)
        if not (len(self.positives) == len(self.negatives) == len(self.offsets) == n):
            raise ValueError("triplet batch parts have different lengths")


def triplet_loss(a, p, n, margin: float) -> ad.Tensor:
    """``max(0, |a - p| - |a - n| + margin)``, averaged over rows."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    a, p, n = (x if isinstance(x, ad.Tensor) else ad.tensor(x) for x in (a, p, n))
    if not a.shape == p.shape == n.shape:
        raise ad.ShapeError(f"triplet_loss: shapes {a.shape}, {p.shape}, {n.shape}")
    gap = ad.sub(ad.row_distance(a, p), ad.row_distance(a, n))
    hinge = ad.relu(ad.add(gap, ad.tensor(np.full(gap.shape, margin))))
    return ad.mean_all(hinge)


def _identity_pool(clips: list[ClipSample]) -> list[dict[str, dict[int, np.ndarray]]]:
    """Per clip: id_hint -> {frame: appearance vector} for labelled persons."""
    pools = []
    for clip in clips:
        by_id: dict[str, dict[int, np.ndarray]] = {}
        for t, dets in enumerate(clip.frames):
            for d in dets:
                if d.kind == PERSON and d.id_hint is not None and d.embedding is not None:
                    by_id.setdefault(d.id_hint, {})[t] = d.embedding
        if len(by_id) >= 2:
            pools.append(by_id)
    return pools


def sample_triplets(pools, batch: int, max_offset: int, rng: np.random.Generator) -> TripletBatch:
    """Anchor and positive: one actor at two frames; negative: another actor near the positive's time."""
    A, P, N, off = [], [], [], []
    while len(A) < batch:
        pool = pools[int(rng.integers(len(pools)))]
        ids = sorted(pool)
        i, j = rng.choice(len(ids), size=2, replace=False)
        pos_frames = sorted(pool[ids[i]])
        t1 = pos_frames[int(rng.integers(len(pos_frames)))]
        near = [t for t in pos_frames if 1 <= abs(t - t1) <= max_offset]
        if not near:
            continue
        t2 = near[int(rng.integers(len(near)))]
        neg_frames = sorted(pool[ids[j]], key=lambda t: (abs(t - t2), t))
        A.append(pool[ids[i]][t1])
        P.append(pool[ids[i]][t2])
        N.append(pool[ids[j]][neg_frames[0]])
        off.append(abs(t2 - t1))
    return TripletBatch(np.array(A), np.array(P), np.array(N), np.array(off))


def train_embedder(clips: list[ClipSample], config: EmbedderConfig | None = None
                   ) -> tuple[EmbedderModel, list[float]]:
    """Plain SGD on the batch-mean triplet loss. Returns the model and per-iteration losses."""
    config = config or EmbedderConfig()
    pools = _identity_pool(clips)
    if not pools:
        raise DegenerateDataset("triplet training needs a clip with at least two identities")
    dim = len(next(iter(next(iter(pools[0].values())).values())))
    model = EmbedderModel.init(dim, dim, hidden=config.hidden, seed=config.seed)
    params = as_parameters(model.params)
    rng = make_rng(config.seed, 0x7A1)
    losses = []
    for it in range(config.iters):
        tb = sample_triplets(pools, config.batch, config.max_offset, rng)
        emb = [stack_forward(ad.tensor(x), params, PREFIX) for x in (tb.anchors, tb.positives, tb.negatives)]
        loss = triplet_loss(*emb, margin=config.margin)
        grads = ad.backward(loss)
        for t in params.values():
            if t in grads:
                t.data -= config.lr * grads[t]
        losses.append(loss.item())
        if it % 100 == 0:
            log.debug("embedder iter %d loss %.5f", it, losses[-1])
    return EmbedderModel({k: t.data.copy() for k, t in params.items()}), losses


# -- tracking ----------------------------------------------------------------

@dataclass
class TrackerConfig:
    iou_min: float = 0.5
    person_threshold: float = 0.9


@dataclass
class Track:
    entries: list[tuple[int, Detection]]
    last_embedding: np.ndarray
    distances: list[float] = field(default_factory=list)

    @property
    def last(self) -> Detection:
        return self.entries[-1][1]


def candidate_gate(prev: Box, dets, iou_min: float = 0.5, person_threshold: float = 0.9) -> list[Detection]:
    return [d for d in dets
            if d.kind == PERSON and d.score >= person_threshold and iou(prev, d.box) > iou_min]


def match_step(track: Track, candidates: list[Detection], model: EmbedderModel
               ) -> tuple[Detection, float] | None:
    if not candidates:
        return None
    emb = model.embed(np.stack([c.embedding for c in candidates]))
    dist = np.linalg.norm(emb - track.last_embedding, axis=1)
    k = int(np.argmin(dist))
    return candidates[k], float(dist[k])


def _grow(tracks: list[Track], clip: ClipSample, frame_order, emb_of, config: TrackerConfig):
    active = list(range(len(tracks)))
    for t in frame_order:
        if not active:
            break
        dets = list(clip.frames[t])
        pairs = []
        for ti in active:
            gated = candidate_gate(tracks[ti].last.box, dets, config.iou_min, config.person_threshold)
            for d in gated:
                k = dets.index(d)
                dist = float(np.linalg.norm(emb_of[(t, k)] - tracks[ti].last_embedding))
                pairs.append((dist, ti, k))
        pairs.sort()
        taken_tracks, taken_dets = set(), set()
        for dist, ti, k in pairs:
            if ti in taken_tracks or k in taken_dets:
                continue
            taken_tracks.add(ti)
            taken_dets.add(k)
            tracks[ti].entries.append((t, dets[k]))
            tracks[ti].last_embedding = emb_of[(t, k)]
            tracks[ti].distances.append(dist)
        active = [ti for ti in active if ti in taken_tracks]


def build_tubelets(clip: ClipSample, model: EmbedderModel, config: TrackerConfig | None = None
                   ) -> list[Tubelet]:
    """One tubelet per confident middle-frame person detection, in detection order."""
    config = config or TrackerConfig()
    mid = clip.middle_frame
    keys, vecs = [], []
    for t, dets in enumerate(clip.frames):
        for k, d in enumerate(dets):
            if d.kind == PERSON and d.score >= config.person_threshold and d.embedding is not None:
                keys.append((t, k))
                vecs.append(d.embedding)
    if not vecs:
        return []
    emb_of = dict(zip(keys, model.embed(np.stack(vecs))))
    anchors = [(k, d) for k, d in enumerate(clip.frames[mid]) if (mid, k) in emb_of]
    forward = [Track([(mid, d)], emb_of[(mid, k)], [0.0]) for k, d in anchors]
    backward = [Track([(mid, d)], emb_of[(mid, k)], [0.0]) for k, d in anchors]
    _grow(forward, clip, range(mid + 1, clip.T), emb_of, config)
    _grow(backward, clip, range(mid - 1, -1, -1), emb_of, config)
    tubelets = []
    for i, (fw, bw) in enumerate(zip(forward, backward)):
        entries = bw.entries[:0:-1] + fw.entries
        dists = bw.distances[:0:-1] + fw.distances
        tubelets.append(Tubelet(
            actor_index=i,
            frames=tuple(t for t, _ in entries),
            boxes=tuple(d.box for _, d in entries),
            features=np.stack([d.feature for _, d in entries]),
            detections=tuple(d for _, d in entries),
            match_distances=tuple(dists),
        ))
    return tubelets


def association_accuracy(tubelets: list[Tubelet], mid: int) -> tuple[int, int]:
    """(agreeing links, total links): linked detections whose id_hint equals the anchor's.

    Tubelets anchored on an unlabelled (false-positive) detection are skipped.
    """
    agree = total = 0
    for tb in tubelets:
        anchor = tb.detections[tb.frames.index(mid)]
        if anchor.id_hint is None:
            continue
        for t, d in zip(tb.frames, tb.detections):
            if t == mid:
                continue
            total += 1
            agree += d.id_hint == anchor.id_hint
    return agree, total


def tubelets_to_json(clip: ClipSample, tubelets: list[Tubelet]) -> dict:
    return {
        "clip_id": clip.clip_id,
        "tubelets": [{
            "actor_index": tb.actor_index,
            "frames": list(tb.frames),
            "boxes": [b.as_list() for b in tb.boxes],
            "match_distances": list(tb.match_distances),
        } for tb in tubelets],
    }
