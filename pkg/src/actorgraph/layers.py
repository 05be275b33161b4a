"""Parameter initialization and affine/rectifier stacks over autodiff tensors."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_stack(rng: np.random.Generator, prefix: str, sizes: list[int]) -> dict[str, np.ndarray]:
    """Weights ``{prefix}.w{k}`` (in x out) and biases ``{prefix}.b{k}`` (1 x out)."""
    params = {}
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
        params[f"{prefix}.w{k}"] = uniform_init(rng, n_in, (n_in, n_out))
        params[f"{prefix}.b{k}"] = uniform_init(rng, n_in, (1, n_out))
    return params


def stack_depth(params: dict, prefix: str) -> int:
    k = 0
    while f"{prefix}.w{k + 1}" in params:
        k += 1
    return k


def stack_forward(x: ad.Tensor, params: dict[str, ad.Tensor], prefix: str,
                  before_last=None) -> ad.Tensor:
    """Affine layers with a rectifier between them (none after the last).

    ``before_last`` (e.g. dropout) is applied to the input of the final layer.
    """
    depth = stack_depth(params, prefix)
    for k in range(1, depth + 1):
        if k == depth and before_last is not None:
            x = before_last(x)
        x = ad.affine(x, params[f"{prefix}.w{k}"], params[f"{prefix}.b{k}"])
        if k < depth:
            x = ad.relu(x)
    return x


def stack_forward_np(x: np.ndarray, params: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    depth = stack_depth(params, prefix)
    for k in range(1, depth + 1):
        x = x @ params[f"{prefix}.w{k}"] + params[f"{prefix}.b{k}"]
        if k < depth:
            x = np.maximum(x, 0.0)
    return x


def as_parameters(arrays: dict[str, np.ndarray]) -> dict[str, ad.Tensor]:
    return {name: ad.parameter(arr, name=name) for name, arr in arrays.items()}
