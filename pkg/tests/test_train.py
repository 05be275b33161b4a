import dataclasses

import numpy as np
import pytest

from actorgraph import autodiff as ad
from actorgraph import gcn, relation
from actorgraph.association import EmbedderConfig, train_embedder
from actorgraph.domain import ActionVocabulary
from actorgraph.layers import stack_forward
from actorgraph.synthgen import ScenarioSpec, generate_clip, generate_clips
from actorgraph.train import (VARIANTS, TrainConfig, TrainedModel, VariantMismatch, forward, init_params,
                              prepare_clip, probabilities, train, variant_forward)

QUICK = TrainConfig(iters_phase1=6, iters_phase2=2, batch=4)


@pytest.fixture(scope="module")
def prepared(small_clips, small_embedder):
    return [prepare_clip(c, small_embedder, QUICK) for c in small_clips]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="tubelet+magic")
    with pytest.raises(ValueError):
        TrainConfig(lr1=-1.0)
    cfg = TrainConfig(variant="tubelet", lr1=0.5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_lr_keeps_initial_params(variant, small_clips, small_embedder, prepared):
    cfg = dataclasses.replace(QUICK, variant=variant, lr1=0.0, lr2=0.0)
    ckpt, tlog = train(small_clips, small_embedder, cfg, prepared=prepared)
    init = init_params(variant, small_clips[0].frames[0][0].feature.size, small_clips[0].vocabulary, cfg.seed)
    for k, v in init.items():
        np.testing.assert_array_equal(ckpt.params[k], v)
    assert [r[0] for r in tlog.rows] == list(range(8))
    assert all(np.isfinite(r[3]) for r in tlog.rows)


@pytest.mark.parametrize("variant", VARIANTS)
def test_deterministic_and_output_shape(variant, small_clips, small_embedder, prepared):
    cfg = dataclasses.replace(QUICK, variant=variant)
    a, la = train(small_clips, small_embedder, cfg, prepared=prepared)
    b, lb = train(small_clips, small_embedder, cfg)
    assert a.to_bytes() == b.to_bytes()
    assert la.rows == lb.rows
    probs = variant_forward(small_clips[0], a, variant)
    assert probs.shape == (prepared[0].n_actors, len(small_clips[0].vocabulary))
    assert ((probs >= 0) & (probs <= 1)).all()


def test_variant_mismatch(small_clips, small_embedder, prepared):
    ckpt, _ = train(small_clips, small_embedder, QUICK, prepared=prepared)
    with pytest.raises(VariantMismatch):
        TrainedModel.from_checkpoint(ckpt, "tubelet")
    ckpt.meta["variant"] = "tubelet"
    with pytest.raises(VariantMismatch):
        TrainedModel.from_checkpoint(ckpt)


def test_vocabulary_mismatch(small_clips, small_embedder):
    other = ScenarioSpec(T=12, vocabulary=ActionVocabulary(("a", "b", "c", "d"), ("e", "f", "g"),
                                                           ("h", "i", "j")))
    mixed = small_clips[:2] + [generate_clip(other, 0)[0]]
    with pytest.raises(ValueError, match="vocabulary"):
        train(mixed, small_embedder, QUICK)


def test_loss_drops_on_separable_data():
    spec = ScenarioSpec(T=12, sigma_feat=0.1, interaction_split=0.0, sigma_emb=0.0)
    clips = generate_clips(spec, 40, 21)
    emb, _ = train_embedder(clips, EmbedderConfig(iters=30))
    cfg = TrainConfig(iters_phase1=400, iters_phase2=0, lr1=0.4, dropout=False)
    _, tlog = train(clips, emb, cfg)
    losses = [r[3] for r in tlog.rows]
    assert np.mean(losses[-20:]) < 0.1 * losses[0]


def test_identity_gcn_reduces_to_baseline():
    # one static actor with perfect detections and nothing else in the clip
    spec = ScenarioSpec(n_actors=(1, 1), n_objects=(0, 0), p_manipulation=0.0, p_interaction=0.0,
                        speed=(0.0, 0.0), sigma_box=0.0, distractor_rate=0.0)
    clip, _ = generate_clip(spec, 3)
    emb, _ = train_embedder(generate_clips(ScenarioSpec(T=6), 4, 0), EmbedderConfig(iters=1))
    cfg = TrainConfig(variant="tubelet", gcn_layers=1)
    prep = prepare_clip(clip, emb, cfg)
    assert len(prep.tubelets[0]) == spec.T
    params = init_params("tubelet", spec.D, spec.vocabulary, 0, gcn_layers=1)
    params["gcn.w1"] = np.eye(spec.D)
    tensors = {k: ad.tensor(v) for k, v in params.items()}
    base = {k: v for k, v in tensors.items() if not k.startswith("gcn.")}
    p_tube = probabilities(forward(prep, tensors, "tubelet"), spec.vocabulary)
    p_base = probabilities(forward(prep, base, "baseline_mean"), spec.vocabulary)
    np.testing.assert_allclose(p_tube, p_base, atol=1e-12)


def test_soft_without_objects_uses_actor_transform(small_embedder):
    spec = ScenarioSpec(T=12, n_objects=(0, 0), p_manipulation=0.0)
    clip, _ = generate_clip(spec, 1)
    cfg = TrainConfig()
    prep = prepare_clip(clip, small_embedder, cfg)
    assert prep.objects.shape[0] == 0
    params = {k: ad.tensor(v) for k, v in init_params("tubelet+soft", spec.D, spec.vocabulary, 2).items()}
    out = forward(prep, params, "tubelet+soft")
    zeroed = forward(prep, params, "tubelet+soft", zero_objects=True)
    hh = gcn.gcn_forward(ad.tensor(prep.G), ad.tensor(prep.X), params)
    expect = stack_forward(stack_forward(hh, params, relation.PHI_H), params, relation.CLS_MANIP)
    np.testing.assert_allclose(out.manipulation.numpy(), expect.numpy(), atol=1e-12)
    np.testing.assert_array_equal(out.manipulation.numpy(), zeroed.manipulation.numpy())
    assert out.weights.objects is None


def test_hard_without_partners_predicts_zero(small_embedder):
    spec = ScenarioSpec(T=12, n_actors=(1, 1), n_objects=(0, 0), p_manipulation=0.0, p_interaction=0.0,
                        distractor_rate=0.0)
    prep = prepare_clip(generate_clip(spec, 0)[0], small_embedder, TrainConfig())
    params = {k: ad.tensor(v) for k, v in init_params("tubelet+hard", spec.D, spec.vocabulary, 0).items()}
    out = forward(prep, params, "tubelet+hard")
    assert out.manipulation is None and out.interaction is None
    probs = probabilities(out, spec.vocabulary)
    assert not probs[:, 4:].any()


def test_train_log_csv(small_clips, small_embedder, prepared):
    _, tlog = train(small_clips, small_embedder, QUICK, prepared=prepared)
    lines = tlog.to_csv().splitlines()
    assert lines[0] == "iteration,phase,lr,loss,eval_map"
    assert len(lines) == 9 and lines[-1].startswith("7,2,")
