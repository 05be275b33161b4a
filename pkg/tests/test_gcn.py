import numpy as np
import pytest
from hypothesis import given, strategies as st

from actorgraph import autodiff as ad
from actorgraph.domain import Box, Tubelet
from actorgraph.gcn import build_affinity, gcn_forward, init_gcn, masked_temporal_mean
from actorgraph.layers import as_parameters
from actorgraph.synthgen import make_rng


def tube(frames, D=3, seed=0):
    rng = np.random.default_rng(seed)
    return Tubelet(0, tuple(frames), tuple(Box(0, 0, 1, 1) for _ in frames), rng.normal(size=(len(frames), D)))


def test_affinity_rows():
    G, X = build_affinity([tube([0, 1, 5]), tube(range(6)), tube([3])], 6)
    np.testing.assert_allclose(G[0], [1 / 3, 1 / 3, 0, 0, 0, 1 / 3])
    np.testing.assert_allclose(G[1], np.full(6, 1 / 6))
    np.testing.assert_array_equal(G[2], [0, 0, 0, 1, 0, 0])
    assert X.shape == (18, 3)
    np.testing.assert_array_equal(X[2:5], 0.0)
    np.testing.assert_allclose(G.sum(axis=1), 1.0)


def test_affinity_errors():
    with pytest.raises(ValueError):
        build_affinity([tube([0, 6])], 6)
    G, X = build_affinity([], 4)
    assert G.shape == (0, 4)


def test_identity_single_layer_is_masked_mean():
    tubes = [tube([0, 2, 3], seed=1), tube([1], seed=2)]
    G, X = build_affinity(tubes, 5)
    params = as_parameters({"gcn.w1": np.eye(3)})
    y = gcn_forward(ad.tensor(G), ad.tensor(X), params).numpy()
    np.testing.assert_allclose(y[0], tubes[0].features.mean(axis=0), atol=1e-15)
    np.testing.assert_array_equal(y[1], tubes[1].features[0])
    np.testing.assert_array_equal(y, masked_temporal_mean(G, X))


def dense_oracle(G, X, params, T):
    """Block-diagonal affinity times stacked features, then the affine stack."""
    n = G.shape[0]
    big = np.zeros((n, n * T))
    for i in range(n):
        big[i, i * T:(i + 1) * T] = G[i]
    y = big @ X @ params["gcn.w1"]
    k = 2
    while f"gcn.w{k}" in params:
        y = np.maximum(y, 0) @ params[f"gcn.w{k}"] + params[f"gcn.b{k}"]
        k += 1
    return y


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_dense_oracle(layers):
    rng = make_rng(3, layers)
    n, T, D = 3, 5, 4
    G = rng.random((n, T))
    X = rng.normal(size=(n * T, D))
    raw = init_gcn(rng, D, layers)
    y = gcn_forward(ad.tensor(G), ad.tensor(X), as_parameters(raw)).numpy()
    np.testing.assert_allclose(y, dense_oracle(G, X, raw, T), rtol=0, atol=1e-12)


def test_shared_grid_matches_plain_product():
    rng = make_rng(4)
    G = rng.random((2, 6))
    Xs = rng.normal(size=(6, 3))
    W = rng.normal(size=(3, 3))
    y = gcn_forward(ad.tensor(G), ad.tensor(np.vstack([Xs, Xs])), as_parameters({"gcn.w1": W})).numpy()
    np.testing.assert_allclose(y, G @ Xs @ W, atol=1e-12)


@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_actor_permutation_equivariance(seed, perm):
    rng = make_rng(seed)
    T, D = 5, 3
    G = rng.random((4, T))
    X = rng.normal(size=(4, T, D))
    params = as_parameters(init_gcn(rng, D, 2))
    y = gcn_forward(ad.tensor(G), ad.tensor(X.reshape(-1, D)), params).numpy()
    p = list(perm)
    yp = gcn_forward(ad.tensor(G[p]), ad.tensor(X[p].reshape(-1, D)), params).numpy()
    np.testing.assert_allclose(yp, y[p], atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_gradients(seed):
    rng = make_rng(seed, 9)
    G = ad.parameter(rng.random((2, 4)))
    X = ad.parameter(rng.normal(size=(8, 3)))
    params = as_parameters(init_gcn(rng, 3, 2))

    def fn():
        return ad.sum_all(ad.sigmoid(gcn_forward(G, X, params)))

    assert ad.finite_difference_check(fn, [G, X, *params.values()]) < 1e-6
