"""Tubelet graph convolution: temporal aggregation of each actor's RoI features.

Actor ``i`` has its own feature block ``X_i`` (T x D, zero rows where the
actor is untracked) and affinity row ``G_i`` (1 / |tubelet| on tracked
frames). The first layer is ``y_i = G_i X_i W_1``; further layers are
``relu(y) W_l + b_l``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .domain import Tubelet
from .layers import uniform_init

PREFIX = "gcn"


def build_affinity(tubelets: list[Tubelet], T: int) -> tuple[np.ndarray, np.ndarray]:
    """Affinity ``G`` (N x T) and stacked features (N*T x D)."""
    if not tubelets:
        return np.zeros((0, T)), np.zeros((0, 0))
    D = tubelets[0].features.shape[1]
    G = np.zeros((len(tubelets), T))
    X = np.zeros((len(tubelets), T, D))
    for i, tb in enumerate(tubelets):
        if len(tb) == 0:
            raise ValueError(f"tubelet {i} is empty")
        if max(tb.frames) >= T or min(tb.frames) < 0:
            raise ValueError(f"tubelet {i} has a frame index outside [0, {T})")
        frames = list(tb.frames)
        G[i, frames] = 1.0 / len(frames)
        X[i, frames] = tb.features
    return G, X.reshape(len(tubelets) * T, D)


def init_gcn(rng: np.random.Generator, dim: int, layers: int = 2) -> dict[str, np.ndarray]:
    if layers < 1:
        raise ValueError("a GCN stack needs at least one layer")
    params = {f"{PREFIX}.w1": uniform_init(rng, dim, (dim, dim))}
    for k in range(2, layers + 1):
        params[f"{PREFIX}.w{k}"] = uniform_init(rng, dim, (dim, dim))
        params[f"{PREFIX}.b{k}"] = uniform_init(rng, dim, (1, dim))
    return params


def gcn_layers(params: dict) -> int:
    k = 0
    while f"{PREFIX}.w{k + 1}" in params:
        k += 1
    return k


def gcn_forward(G: ad.Tensor, X: ad.Tensor, params: dict[str, ad.Tensor],
                nonlinearity: str = "relu") -> ad.Tensor:
    act = {"relu": ad.relu, "identity": lambda t: t}[nonlinearity]
    y = ad.matmul(ad.temporal_aggregate(G, X), params[f"{PREFIX}.w1"])
    for k in range(2, gcn_layers(params) + 1):
        y = ad.affine(act(y), params[f"{PREFIX}.w{k}"], params[f"{PREFIX}.b{k}"])
    return y


def masked_temporal_mean(G: np.ndarray, X: np.ndarray) -> np.ndarray:
    n, t = G.shape
    return np.einsum("nt,ntd->nd", G, X.reshape(n, t, -1))
