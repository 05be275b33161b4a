"""Head training for the six model variants.

Variants:

``baseline_mean``
    RoI pooling at each actor's middle-frame box, averaged over all frames
    (no tracking), followed by logistic heads.
``person_graph`` / ``object_graph``
    Similarity graph from the actor's middle-frame feature to every confident
    person proposal (respectively person and object proposal) in the clip.
``tubelet``
    Tubelet GCN actor features with logistic heads for every group.
``tubelet+hard`` / ``tubelet+soft``
    Tubelet GCN actor features classified for pose; manipulation and
    interaction come from the hard or soft relation graph.

The appearance embedder is trained beforehand and stays frozen; its
parameters are stored in the head checkpoint so a checkpoint alone can track.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gcn, relation
from .association import EmbedderModel, TrackerConfig, build_tubelets
from .checkpoint import Checkpoint
from .domain import OBJECT, PERSON, ActionVocabulary, Box, ClipSample, Tubelet, intersection, iou
from .layers import as_parameters, init_stack, stack_forward
from .synthgen import make_rng

log = logging.getLogger(__name__)

VARIANTS = ("baseline_mean", "person_graph", "object_graph", "tubelet", "tubelet+hard", "tubelet+soft")
PHI_P = "phi_p"


class VariantMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    variant: str = "tubelet+soft"
    iters_phase1: int = 900
    iters_phase2: int = 100
    lr1: float = 0.0125
    lr2: float = 0.00125
    batch: int = 8
    seed: int = 0
    dropout: bool = True
    dropout_rate: float = 0.3
    gcn_layers: int = 2
    object_window: int = 18
    person_threshold: float = 0.9
    object_threshold: float = 0.5
    tracker_iou: float = 0.5
    label_iou: float = 0.5
    eval_every: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.lr1 < 0 or self.lr2 < 0:
            raise ValueError("learning rates must be >= 0")
        if self.iters_phase1 < 0 or self.iters_phase2 < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            kind = type(names[k].default)
            if kind is bool and isinstance(v, str):
                v = v.strip().lower() in ("1", "true", "yes", "on")
            kwargs[k] = kind(v) if not isinstance(v, kind) else v
        if "iters_phase1" in kwargs:
            kwargs["iters_phase1"] = int(float(kwargs["iters_phase1"]))
        return cls(**kwargs)


# -- per-clip preparation (everything that does not depend on head params) --

@dataclass
class PreparedClip:
    clip_id: str
    T: int
    actor_boxes: list[Box]
    tubelets: list[Tubelet]
    G: np.ndarray             # N x T
    X: np.ndarray             # N*T x D
    query: np.ndarray         # N x D, middle-frame detection features
    baseline: np.ndarray      # N x D
    objects: np.ndarray       # M x D
    object_boxes: list[Box]
    person_nodes: np.ndarray  # P x D
    all_nodes: np.ndarray     # Q x D
    targets: np.ndarray       # N x C

    @property
    def n_actors(self) -> int:
        return len(self.actor_boxes)


def pool_objects(clip: ClipSample, window: int, threshold: float, iou_min: float = 0.5
                 ) -> tuple[list[Box], np.ndarray]:
    """Middle-frame objects, each averaged over IoU-matched detections in ``mid +- window``."""
    mid = clip.middle_frame
    D = _feature_dim(clip)
    anchors = [d for d in clip.frames[mid] if d.kind == OBJECT and d.score >= threshold]
    pooled = []
    for a in anchors:
        feats = []
        for t in range(max(0, mid - window), min(clip.T, mid + window + 1)):
            best, best_iou = None, iou_min
            for d in clip.frames[t]:
                if d.kind != OBJECT or d.score < threshold:
                    continue
                v = iou(a.box, d.box)
                if v > best_iou:
                    best, best_iou = d, v
            if best is not None:
                feats.append(best.feature)
        pooled.append(np.mean(feats, axis=0))
    return [a.box for a in anchors], (np.array(pooled) if pooled else np.zeros((0, D)))


def roi_pool_mean(clip: ClipSample, box: Box, person_threshold: float, object_threshold: float) -> np.ndarray:
    """Coverage-weighted pool of confident detections inside a fixed box, averaged over frames."""
    total = np.zeros(_feature_dim(clip))
    for dets in clip.frames:
        for d in dets:
            thr = person_threshold if d.kind == PERSON else object_threshold
            if d.score < thr:
                continue
            cover = intersection(box, d.box) / box.area
            if cover > 0:
                total += cover * d.feature
    return total / clip.T


def _feature_dim(clip: ClipSample) -> int:
    for dets in clip.frames:
        for d in dets:
            return len(d.feature)
    return 0


def assign_targets(clip: ClipSample, boxes: list[Box], label_iou: float) -> np.ndarray:
    out = np.zeros((len(boxes), len(clip.vocabulary)))
    for i, b in enumerate(boxes):
        best, best_iou = None, label_iou
        for a in clip.gt_actors:
            v = iou(b, a.box)
            if v >= best_iou:
                best, best_iou = a, v
        if best is not None:
            out[i] = best.labels
    return out


def prepare_clip(clip: ClipSample, embedder: EmbedderModel, cfg: TrainConfig) -> PreparedClip:
    tracker = TrackerConfig(iou_min=cfg.tracker_iou, person_threshold=cfg.person_threshold)
    tubelets = build_tubelets(clip, embedder, tracker)
    mid = clip.middle_frame
    D = _feature_dim(clip)
    G, X = gcn.build_affinity(tubelets, clip.T)
    actor_boxes = [tb.boxes[tb.frames.index(mid)] for tb in tubelets]
    query = (np.stack([tb.features[tb.frames.index(mid)] for tb in tubelets]) if tubelets
             else np.zeros((0, D)))
    baseline = (np.stack([roi_pool_mean(clip, b, cfg.person_threshold, cfg.object_threshold)
                          for b in actor_boxes]) if tubelets else np.zeros((0, D)))
    object_boxes, objects = pool_objects(clip, cfg.object_window, cfg.object_threshold)
    persons = [d.feature for dets in clip.frames for d in dets
               if d.kind == PERSON and d.score >= cfg.person_threshold]
    everything = [d.feature for dets in clip.frames for d in dets
                  if d.score >= (cfg.person_threshold if d.kind == PERSON else cfg.object_threshold)]
    return PreparedClip(
        clip_id=clip.clip_id, T=clip.T, actor_boxes=actor_boxes, tubelets=tubelets, G=G,
        X=X if tubelets else np.zeros((0, D)), query=query, baseline=baseline,
        objects=objects, object_boxes=object_boxes,
        person_nodes=np.array(persons) if persons else np.zeros((0, D)),
        all_nodes=np.array(everything) if everything else np.zeros((0, D)),
        targets=assign_targets(clip, actor_boxes, cfg.label_iou),
    )


# -- parameters and forward passes ----------------------------------------------

def init_params(variant: str, dim: int, vocab: ActionVocabulary, seed: int, gcn_layers: int = 2
                ) -> dict[str, np.ndarray]:
    rng = make_rng(seed, 0x1417)
    n_pose, n_manip, n_inter = len(vocab.pose), len(vocab.manipulation), len(vocab.interaction)
    params: dict[str, np.ndarray] = {}
    if variant.startswith("tubelet"):
        params.update(gcn.init_gcn(rng, dim, gcn_layers))
    if variant == "tubelet+soft":
        params.update(relation.init_soft(rng, dim))
    if variant in ("person_graph", "object_graph"):
        params.update(init_stack(rng, relation.PHI_H, [dim, dim, dim]))
        params.update(init_stack(rng, PHI_P, [dim, dim, dim]))
    params.update(relation.init_classifier(rng, relation.CLS_POSE, dim, n_pose))
    if variant == "tubelet+hard":
        params.update(relation.init_hard(rng, dim, n_manip, n_inter))
    else:
        params.update(relation.init_classifier(rng, relation.CLS_MANIP, dim, n_manip))
        params.update(relation.init_classifier(rng, relation.CLS_INTER, dim, n_inter))
    return params


@dataclass
class GroupLogits:
    pose: ad.Tensor
    manipulation: ad.Tensor | None   # None: no partner, probability 0
    interaction: ad.Tensor | None
    weights: relation.RelationGraphWeights | None = None


def _similarity_graph(query: ad.Tensor, nodes: np.ndarray, params: dict) -> ad.Tensor:
    pq = stack_forward(query, params, relation.PHI_H)
    if nodes.shape[0] == 0:
        return pq
    pn = stack_forward(ad.tensor(nodes), params, PHI_P)
    w = ad.softmax_rows(ad.inverse_distance(ad.pairwise_distance(pq, pn)))
    return ad.add(pq, ad.matmul(w, pn))


def forward(prep: PreparedClip, params: dict[str, ad.Tensor], variant: str, train: bool = False,
            dropout_rate: float = 0.0, dropout_seed: int = 0, zero_objects: bool = False) -> GroupLogits:
    if prep.n_actors == 0:
        raise ValueError("forward needs at least one actor")
    counter = iter(range(1, 1000))

    def drop(x):
        return ad.dropout(x, dropout_rate, dropout_seed * 1009 + next(counter), train)

    objects = np.zeros_like(prep.objects) if zero_objects else prep.objects
    if variant == "baseline_mean":
        h = ad.tensor(prep.baseline)
        f_o = f_h = h
    elif variant in ("person_graph", "object_graph"):
        nodes = prep.person_nodes if variant == "person_graph" else prep.all_nodes
        h = _similarity_graph(ad.tensor(prep.query), nodes, params)
        f_o = f_h = h
    else:
        h = gcn.gcn_forward(ad.tensor(prep.G), ad.tensor(prep.X), params)
        f_o = f_h = h
    weights = None
    pose = stack_forward(h, params, relation.CLS_POSE, drop)
    if variant == "tubelet+hard":
        O = ad.tensor(objects) if objects.shape[0] else None
        manip = relation.hard_max_logits(h, O, params, relation.F_O, True, drop)
        inter = relation.hard_max_logits(h, None, params, relation.F_H, False, drop)
        return GroupLogits(pose, manip, inter)
    if variant == "tubelet+soft":
        O = ad.tensor(objects) if objects.shape[0] else None
        soft = relation.soft_forward(h, O, params)
        f_o, f_h, weights = soft.f_o, soft.f_h, soft.weights
    manip = stack_forward(f_o, params, relation.CLS_MANIP, drop)
    inter = stack_forward(f_h, params, relation.CLS_INTER, drop)
    return GroupLogits(pose, manip, inter, weights)


def clip_loss(out: GroupLogits, targets: np.ndarray, vocab: ActionVocabulary) -> ad.Tensor:
    """Sum of the per-group mean BCE; groups without partners contribute nothing."""
    terms = []
    for group, logits in (("pose", out.pose), ("manipulation", out.manipulation),
                          ("interaction", out.interaction)):
        if logits is not None:
            terms.append(ad.bce_multilabel(logits, targets[:, vocab.group_slice(group)]))
    return ad.add_scalars(terms)


def probabilities(out: GroupLogits, vocab: ActionVocabulary) -> np.ndarray:
    n = out.pose.shape[0]
    parts = []
    for group, logits in (("pose", out.pose), ("manipulation", out.manipulation),
                          ("interaction", out.interaction)):
        width = len(vocab.groups()[group])
        parts.append(np.zeros((n, width)) if logits is None else ad.sigmoid(logits).numpy())
    return np.concatenate(parts, axis=1)


# -- training ---------------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list[tuple[int, int, float, float]] = field(default_factory=list)   # iter, phase, lr, loss
    evals: list[tuple[int, float]] = field(default_factory=list)               # iter, mAP
    wall_time_s: float = 0.0

    def to_csv(self) -> str:
        eval_at = dict(self.evals)
        lines = ["iteration,phase,lr,loss,eval_map"]
        for it, phase, lr, loss in self.rows:
            m = eval_at.get(it)
            lines.append(f"{it},{phase},{lr!r},{loss!r},{'' if m is None else repr(m)}")
        return "\n".join(lines) + "\n"


def _check_vocab(preps_vocab: ActionVocabulary, vocab: ActionVocabulary):
    if preps_vocab != vocab:
        raise ValueError("dataset vocabulary does not match the model vocabulary")


def train(clips: list[ClipSample], embedder: EmbedderModel, cfg: TrainConfig,
          prepared: list[PreparedClip] | None = None, eval_fn=None) -> tuple[Checkpoint, TrainLog]:
    """Mini-batch SGD with a two-phase learning rate. Deterministic given ``cfg.seed``."""
    if not clips:
        raise ValueError("training needs a nonempty dataset")
    vocab = clips[0].vocabulary
    for c in clips:
        _check_vocab(c.vocabulary, vocab)
    preps = prepared if prepared is not None else [prepare_clip(c, embedder, cfg) for c in clips]
    usable = [p for p in preps if p.n_actors > 0]
    if not usable:
        raise ValueError("no clip has a confident middle-frame person detection")
    dim = usable[0].X.shape[1]
    params = as_parameters(init_params(cfg.variant, dim, vocab, cfg.seed, cfg.gcn_layers))
    rng = make_rng(cfg.seed, 0xBA7C)
    tlog = TrainLog()
    start = time.perf_counter()
    order: list[int] = []
    schedule = [(1, cfg.lr1)] * cfg.iters_phase1 + [(2, cfg.lr2)] * cfg.iters_phase2
    rate = cfg.dropout_rate if cfg.dropout else 0.0
    for it, (phase, lr) in enumerate(schedule):
        batch = []
        while len(batch) < min(cfg.batch, len(usable)):
            if not order:
                order = [int(k) for k in rng.permutation(len(usable))]
            batch.append(order.pop())
        seeds = rng.integers(0, 2**31, size=len(batch))
        terms = [clip_loss(forward(usable[k], params, cfg.variant, True, rate, int(s)), usable[k].targets, vocab)
                 for k, s in zip(batch, seeds)]
        loss = ad.scale(ad.add_scalars(terms), 1.0 / len(terms))
        grads = ad.backward(loss)
        if lr:
            for t in params.values():
                g = grads.get(t)
                if g is not None:
                    t.data -= lr * g
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        tlog.rows.append((it, phase, lr, value))
        if eval_fn is not None and cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            tlog.evals.append((it, eval_fn({k: t.data for k, t in params.items()})))
    tlog.wall_time_s = time.perf_counter() - start
    arrays = {k: t.data.copy() for k, t in params.items()}
    return make_checkpoint(arrays, embedder, cfg, vocab, dim, usable[0].T), tlog


def make_checkpoint(head: dict[str, np.ndarray], embedder: EmbedderModel, cfg: TrainConfig,
                    vocab: ActionVocabulary, dim: int, T: int) -> Checkpoint:
    params = dict(head)
    params.update(embedder.params)
    meta = {"variant": cfg.variant, "train_config": cfg.to_dict(), "vocabulary": vocab.to_dict(),
            "feature_dim": dim, "T": T}
    return Checkpoint(params=params, seed=cfg.seed, meta=meta)


@dataclass
class TrainedModel:
    variant: str
    params: dict[str, np.ndarray]
    embedder: EmbedderModel
    config: TrainConfig
    vocabulary: ActionVocabulary

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, variant: str | None = None) -> "TrainedModel":
        stored = ckpt.meta.get("variant")
        if variant is not None and variant != stored:
            raise VariantMismatch(f"checkpoint holds variant {stored!r}, not {variant!r}")
        emb = {k: v for k, v in ckpt.params.items() if k.startswith("embedder.")}
        head = {k: v for k, v in ckpt.params.items() if not k.startswith("embedder.")}
        cfg = TrainConfig.from_dict(ckpt.meta["train_config"])
        expected = set(init_params(stored, ckpt.meta["feature_dim"],
                                   ActionVocabulary.from_dict(ckpt.meta["vocabulary"]), 0, cfg.gcn_layers))
        if set(head) != expected:
            raise VariantMismatch(f"checkpoint tensors do not match variant {stored!r}")
        return cls(stored, head, EmbedderModel(emb), cfg, ActionVocabulary.from_dict(ckpt.meta["vocabulary"]))

    def tensors(self) -> dict[str, ad.Tensor]:
        return {k: ad.tensor(v) for k, v in self.params.items()}

    def prepare(self, clip: ClipSample) -> PreparedClip:
        return prepare_clip(clip, self.embedder, self.config)

    def predict_prepared(self, prep: PreparedClip, zero_objects: bool = False) -> np.ndarray:
        if prep.n_actors == 0:
            return np.zeros((0, len(self.vocabulary)))
        out = forward(prep, self.tensors(), self.variant, zero_objects=zero_objects)
        return probabilities(out, self.vocabulary)


def variant_forward(clip: ClipSample, ckpt: Checkpoint, variant: str) -> np.ndarray:
    """Per-actor probability vectors (N x classes) for the confident middle-frame persons."""
    model = TrainedModel.from_checkpoint(ckpt, variant)
    return model.predict_prepared(model.prepare(clip))
