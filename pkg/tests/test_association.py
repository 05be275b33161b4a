import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from actorgraph import autodiff as ad
from actorgraph.association import (DegenerateDataset, EmbedderConfig, EmbedderModel, Track, TripletBatch,
                                    association_accuracy, build_tubelets, candidate_gate, match_step,
                                    train_embedder, triplet_loss, tubelets_to_json)
from actorgraph.domain import OBJECT, PERSON, Box, ClipSample, Detection, iou
from actorgraph.synthgen import ScenarioSpec, generate_clip, generate_clips


class IdentityEmbedder:
    def embed(self, x):
        return np.atleast_2d(np.asarray(x, dtype=float))


def person(box, emb, score=0.95, hint=None):
    return Detection(Box(*box), score, PERSON, np.zeros(4), emb, hint)


def test_triplet_examples():
    a = np.array([[1.0, 0.0]])
    assert triplet_loss(a, a, np.array([[1.0, 0.5]]), 0.2).item() == 0.0
    assert triplet_loss(a, a, a, 0.3).item() == pytest.approx(0.3)
    # |a-p| = 1, |a-n| = 2, m = 0.5
    z = np.zeros((1, 2))
    assert triplet_loss(z, np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]), 0.5).item() == 0.0
    with pytest.raises(ad.ShapeError):
        triplet_loss(z, np.zeros((1, 3)), z, 0.5)
    with pytest.raises(ValueError):
        triplet_loss(z, z, z, 0.0)


def test_triplet_batch_lengths():
    with pytest.raises(ValueError):
        TripletBatch(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 3)), np.zeros(2))


def test_gate_examples():
    prev = Box(0, 0, 3, 1)
    half = Box(1, 0, 4, 1)
    assert iou(prev, half) == 0.5
    dets = [person((0, 0, 3, 1), None), person((1, 0, 4, 1), None), person((10, 10, 12, 12), None),
            person((0, 0, 3, 1), None, score=0.5),
            Detection(prev, 0.99, OBJECT, np.zeros(4))]
    assert candidate_gate(prev, dets) == [dets[0]]
    assert candidate_gate(prev, []) == []


def test_match_step_examples():
    track = Track([(0, person((0, 0, 1, 1), [0.0, 0.0]))], np.array([0.0, 0.0]))
    e = IdentityEmbedder()
    assert match_step(track, [], e) is None
    only = person((0, 0, 1, 1), [5.0, 5.0])
    assert match_step(track, [only], e)[0] is only
    # distances 5, 1.4142..., 2
    c = [person((0, 0, 1, 1), [3.0, 4.0]), person((0, 0, 1, 1), [1.0, -1.0]),
         person((0, 0, 1, 1), [0.0, 2.0])]
    det, dist = match_step(track, c, e)
    assert det is c[1] and dist == pytest.approx(np.sqrt(2.0))
    same = person((0, 0, 1, 1), [0.0, 0.0])
    assert match_step(track, [c[0], same], e)[0] is same


def test_single_actor_zero_noise_tubelet():
    spec = ScenarioSpec(n_actors=(1, 1), p_interaction=0.0, sigma_box=0.0, sigma_emb=0.0, sigma_feat=0.0,
                        distractor_rate=0.0)
    for seed in range(3):
        clip, scripts = generate_clip(spec, seed)
        tubes = build_tubelets(clip, IdentityEmbedder())
        assert len(tubes) == 1
        assert tubes[0].frames == tuple(range(spec.T))
        assert list(tubes[0].boxes) == scripts[0].trajectory


def test_empty_middle_frame():
    d = person((0, 0, 5, 5), [1.0])
    clip = ClipSample("c", ((d,), (), (d,)), ())
    assert build_tubelets(clip, IdentityEmbedder()) == []


def test_conflicts_resolved_by_distance():
    # two tracks both gate onto the same two boxes; the greedy pass goes by embedding distance
    a0, b0 = person((0, 0, 10, 10), [0.0], hint="a"), person((1, 0, 11, 10), [10.0], hint="b")
    a1, b1 = person((0, 0, 10, 10), [9.0], hint="b"), person((1, 0, 11, 10), [1.0], hint="a")
    clip = ClipSample("c", ((a1, b1), (a0, b0), (a1, b1)), ())
    tubes = build_tubelets(clip, IdentityEmbedder())
    for tb in tubes:
        assert len({d.id_hint for d in tb.detections}) == 1
    assert association_accuracy(tubes, 1) == (4, 4)


def test_two_actors_no_switches():
    spec = ScenarioSpec(n_actors=(2, 2), sigma_emb=0.0, distractor_rate=0.0)
    clips = generate_clips(spec, 20, 8)
    for clip in clips:
        tubes = build_tubelets(clip, IdentityEmbedder())
        agree, total = association_accuracy(tubes, clip.middle_frame)
        assert agree == total > 0


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_tubelet_invariants(seed):
    spec = ScenarioSpec(T=12, n_actors=(2, 4), sigma_emb=0.3, miss_rate=0.1, distractor_rate=1.0)
    clip, _ = generate_clip(spec, seed)
    tubes = build_tubelets(clip, IdentityEmbedder())
    mid = clip.middle_frame
    used = set()
    for tb in tubes:
        assert tb.frames.count(mid) == 1
        assert 1 <= len(tb) <= clip.T
        for t, d in zip(tb.frames, tb.detections):
            assert (t, id(d)) not in used
            used.add((t, id(d)))
    js = tubelets_to_json(clip, tubes)
    assert len(js["tubelets"]) == len(tubes)


def test_embedder_training(small_clips):
    cfg = EmbedderConfig(iters=20, seed=4)
    m1, l1 = train_embedder(small_clips, cfg)
    m2, l2 = train_embedder(small_clips, cfg)
    assert l1 == l2
    for k in m1.params:
        np.testing.assert_array_equal(m1.params[k], m2.params[k])
    frozen, _ = train_embedder(small_clips, EmbedderConfig(iters=20, seed=4, lr=0.0))
    init = EmbedderModel.init(m1.input_dim, m1.output_dim, seed=4)
    for k in init.params:
        np.testing.assert_array_equal(frozen.params[k], init.params[k])
    assert m1.output_dim == 16


def test_embedder_converges_on_separable_identities():
    clips = generate_clips(ScenarioSpec(T=12, sigma_emb=0.0), 20, 3)
    cfg = EmbedderConfig(iters=200)
    _, losses = train_embedder(clips, cfg)
    assert np.mean(losses[-50:]) < 0.01 * cfg.margin


def test_degenerate_dataset():
    spec = ScenarioSpec(T=6, n_actors=(1, 1), p_interaction=0.0, distractor_rate=0.0)
    with pytest.raises(DegenerateDataset):
        train_embedder(generate_clips(spec, 3, 0), EmbedderConfig(iters=1))
