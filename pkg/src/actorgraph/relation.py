"""Actor-centric relation graphs over actor nodes H (N x D) and object nodes O (M x D).

Hard graph: every (actor, partner) pair is scored from the concatenated node
features and an actor's class probability is the maximum sigmoid score over
its partners. Soft graph: edges are inverse distances between transformed
node features, softmax-normalized per actor, and the weighted partner
features are added to the actor's own transformed feature.

Degenerate partner sets: with no objects (M = 0) or a single actor (N = 1)
the hard graph predicts probability 0 for that group and the soft graph's
aggregate reduces to the actor's own transformed feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .layers import init_stack, stack_forward

PHI_H, PHI_O = "phi_h", "phi_o"
F_O, F_H = "f_o", "f_h"
CLS_POSE, CLS_MANIP, CLS_INTER = "cls_pose", "cls_manip", "cls_inter"


def init_soft(rng, dim: int) -> dict[str, np.ndarray]:
    params = init_stack(rng, PHI_H, [dim, dim, dim])
    params.update(init_stack(rng, PHI_O, [dim, dim, dim]))
    return params


def init_hard(rng, dim: int, n_manip: int, n_inter: int) -> dict[str, np.ndarray]:
    params = init_stack(rng, F_O, [2 * dim, dim, n_manip])
    params.update(init_stack(rng, F_H, [2 * dim, dim, n_inter]))
    return params


def init_classifier(rng, prefix: str, dim: int, n_classes: int) -> dict[str, np.ndarray]:
    return init_stack(rng, prefix, [dim, n_classes])


# -- hard relation graph ----------------------------------------------------

def pair_index(n: int, m: int) -> tuple[list[int], list[int]]:
    """Actor-object pairs, actor-major: row i*m + j is (i, j)."""
    return [i for i in range(n) for _ in range(m)], [j for _ in range(n) for j in range(m)]


def actor_pair_index(n: int) -> tuple[list[int], list[int]]:
    """Ordered actor pairs without self-pairs: block i lists k = 0..n-1, k != i."""
    return ([i for i in range(n) for k in range(n) if k != i],
            [k for i in range(n) for k in range(n) if k != i])


def hard_edge_logits(h: ad.Tensor, partner: ad.Tensor, params: dict, scorer: str,
                     before_last: Callable | None = None) -> ad.Tensor:
    """Per-class logits ``F([h, partner])``, one row per row of the inputs."""
    if h.shape != partner.shape:
        raise ad.ShapeError(f"hard_edge_logits: node shapes {h.shape} and {partner.shape} differ")
    return stack_forward(ad.concat_last(h, partner), params, scorer, before_last)


def hard_max_logits(H: ad.Tensor, P: ad.Tensor | None, params: dict, scorer: str, self_pairs: bool,
                    before_last: Callable | None = None) -> Optional[ad.Tensor]:
    """Max over partners of the pair logits, N x C; None when no partner exists.

    ``self_pairs=False`` is the actor-actor graph (P is H itself, k != i).
    """
    n = H.shape[0]
    if self_pairs:
        m = 0 if P is None else P.shape[0]
        if m == 0:
            return None
        ia, ib = pair_index(n, m)
        per_actor = m
    else:
        if n < 2:
            return None
        ia, ib = actor_pair_index(n)
        P = H
        per_actor = n - 1
    logits = hard_edge_logits(ad.gather_rows(H, ia), ad.gather_rows(P, ib), params, scorer, before_last)
    return ad.segment_max(logits, n) if per_actor > 1 else logits


def hard_predict(H: ad.Tensor, O: ad.Tensor | None, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities (manipulation N x Cm, interaction N x Ci), max over partners."""
    n = H.shape[0]
    out = []
    for scorer, P, self_pairs in ((F_O, O, True), (F_H, None, False)):
        n_cls = params[f"{scorer}.w2"].shape[1]
        best = hard_max_logits(H, P, params, scorer, self_pairs)
        out.append(np.zeros((n, n_cls)) if best is None else ad.sigmoid(best).numpy())
    return out[0], out[1]


# -- soft relation graph ----------------------------------------------------

@dataclass
class RelationGraphWeights:
    objects: Optional[ad.Tensor]     # N x M, None when M == 0
    actors: Optional[ad.Tensor]      # N x N with a zero diagonal, None when N == 1

    def object_matrix(self, n: int) -> np.ndarray:
        return np.zeros((n, 0)) if self.objects is None else self.objects.numpy()

    def actor_matrix(self, n: int) -> np.ndarray:
        """The N x (N-1) matrix with self-edges dropped."""
        if self.actors is None:
            return np.zeros((n, max(n - 1, 0)))
        full = self.actors.numpy()
        return np.array([[full[i, k] for k in range(n) if k != i] for i in range(n)])


def _edge_weights(a: ad.Tensor, b: ad.Tensor, mask=None, eps: float = ad.EDGE_EPS) -> ad.Tensor:
    return ad.softmax_rows(ad.inverse_distance(ad.pairwise_distance(a, b), eps), mask)


def soft_edges_from_transformed(ph: ad.Tensor, po: ad.Tensor | None,
                                eps: float = ad.EDGE_EPS) -> RelationGraphWeights:
    n = ph.shape[0]
    g_o = None if po is None or po.shape[0] == 0 else _edge_weights(ph, po, eps=eps)
    g_h = None if n < 2 else _edge_weights(ph, ph, ~np.eye(n, dtype=bool), eps)
    return RelationGraphWeights(g_o, g_h)


def soft_edges(H: ad.Tensor, O: ad.Tensor | None, params: dict, eps: float = ad.EDGE_EPS
               ) -> RelationGraphWeights:
    ph = stack_forward(H, params, PHI_H)
    po = None if O is None or O.shape[0] == 0 else stack_forward(O, params, PHI_O)
    return soft_edges_from_transformed(ph, po, eps)


def soft_aggregate_transformed(ph: ad.Tensor, po: ad.Tensor | None,
                               weights: RelationGraphWeights) -> tuple[ad.Tensor, ad.Tensor]:
    f_o = ph if weights.objects is None else ad.add(ph, ad.matmul(weights.objects, po))
    f_h = ph if weights.actors is None else ad.add(ph, ad.matmul(weights.actors, ph))
    return f_o, f_h


def soft_aggregate(H: ad.Tensor, O: ad.Tensor | None, weights: RelationGraphWeights, params: dict
                   ) -> tuple[ad.Tensor, ad.Tensor]:
    ph = stack_forward(H, params, PHI_H)
    po = None if O is None or O.shape[0] == 0 else stack_forward(O, params, PHI_O)
    return soft_aggregate_transformed(ph, po, weights)


@dataclass
class SoftOutput:
    f_o: ad.Tensor
    f_h: ad.Tensor
    weights: RelationGraphWeights


def soft_forward(H: ad.Tensor, O: ad.Tensor | None, params: dict,
                 eps: float = ad.EDGE_EPS) -> SoftOutput:
    """Edges and aggregates in one pass, sharing the node transforms."""
    ph = stack_forward(H, params, PHI_H)
    po = None if O is None or O.shape[0] == 0 else stack_forward(O, params, PHI_O)
    weights = soft_edges_from_transformed(ph, po, eps)
    f_o, f_h = soft_aggregate_transformed(ph, po, weights)
    return SoftOutput(f_o, f_h, weights)


# -- classification -----------------------------------------------------------

def classify(h: ad.Tensor, f_o: ad.Tensor, f_h: ad.Tensor, params: dict,
             before_last: Callable | None = None) -> ad.Tensor:
    """Logits over the full vocabulary: pose from h, manipulation from F^o, interaction from F^h."""
    pose = stack_forward(h, params, CLS_POSE, before_last)
    manip = stack_forward(f_o, params, CLS_MANIP, before_last)
    inter = stack_forward(f_h, params, CLS_INTER, before_last)
    return ad.concat_last(ad.concat_last(pose, manip), inter)


def classify_probs(h, f_o, f_h, params) -> np.ndarray:
    return ad.sigmoid(classify(h, f_o, f_h, params)).numpy()
