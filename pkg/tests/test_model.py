"""Unit tests for the two-stream model: init, fusion, batchnorm, checkpoints."""

import numpy as np
import pytest

from rnalign.errors import ConfigurationError, ParseError
from rnalign.losses import AUDIO, VISUAL, FeatureBatch
from rnalign.model import (
    BatchNormState,
    ModelConfig,
    batchnorm_forward,
    classify,
    encode,
    encode_backward,
    fuse_late,
    fuse_mid,
    fused_eval_logits,
    init_model,
    load_checkpoint,
    modality_logits,
    model_backward,
    model_forward,
    predict,
    predict_scores,
    save_checkpoint,
)
from rnalign.data import MultiModalBatch
from rnalign.numerics import (
    finite_difference_grad,
    relative_error,
    softmax_cross_entropy,
)


def tiny_config(**overrides):
    base = dict(input_dim_visual=3, input_dim_audio=4, hidden_dim=6,
                feature_dim=5, num_classes=3)
    base.update(overrides)
    return ModelConfig(**base)


def make_identity_encoder_model(dim=3):
    """All-equal dims with identity weights: encode(x) == x for positive x."""
    cfg = ModelConfig(input_dim_visual=dim, input_dim_audio=dim,
                      hidden_dim=dim, feature_dim=dim, num_classes=2)
    model = init_model(cfg, seed=0)
    for stack in (model.encoder_visual, model.encoder_audio):
        for layer in stack:
            layer.weight[...] = np.eye(dim)
            layer.bias[...] = 0.0
    return model


# ---------------------------------------------------------------------------
# initialization


def test_init_same_seed_is_bitwise_identical():
    cfg = tiny_config()
    a = init_model(cfg, seed=42)
    b = init_model(cfg, seed=42)
    for name, pa in a.parameters().items():
        assert np.array_equal(pa, b.parameters()[name]), name


def test_init_different_seeds_differ():
    cfg = tiny_config()
    a = init_model(cfg, seed=0)
    b = init_model(cfg, seed=1)
    assert any(not np.array_equal(pa, b.parameters()[name])
               for name, pa in a.parameters().items())


def test_init_fan_in_scaling_halves_variance():
    # doubling the input width should halve the initial weight variance
    draws_narrow, draws_wide = [], []
    for seed in range(12):
        narrow = init_model(tiny_config(input_dim_visual=8, hidden_dim=64),
                            seed=seed)
        wide = init_model(tiny_config(input_dim_visual=16, hidden_dim=64),
                          seed=1000 + seed)
        draws_narrow.append(narrow.encoder_visual[0].weight.ravel())
        draws_wide.append(wide.encoder_visual[0].weight.ravel())
    var_narrow = np.concatenate(draws_narrow).var()
    var_wide = np.concatenate(draws_wide).var()
    assert abs(var_narrow / var_wide - 2.0) < 0.2


def test_init_biases_start_at_zero():
    model = init_model(tiny_config(), seed=3)
    for name, p in model.parameters().items():
        if name.endswith(".bias"):
            assert np.array_equal(p, np.zeros_like(p)), name


def test_init_rejects_bad_dimensions():
    with pytest.raises(ConfigurationError):
        init_model(tiny_config(feature_dim=0), seed=0)
    with pytest.raises(ConfigurationError):
        init_model(tiny_config(num_classes=1), seed=0)


# ---------------------------------------------------------------------------
# encode


def test_encode_identity_stack_passes_positive_inputs_through():
    model = make_identity_encoder_model(dim=3)
    x = np.array([[1.0, 2.0, 3.0], [0.5, 0.25, 4.0]])
    feats, _ = encode(model, VISUAL, x)
    assert isinstance(feats, FeatureBatch)
    assert np.array_equal(feats.features, x)


def test_encode_zero_weights_give_zero_features():
    model = init_model(tiny_config(), seed=0)
    for layer in model.encoder_audio:
        layer.weight[...] = 0.0
        layer.bias[...] = 0.0
    feats, _ = encode(model, AUDIO, np.ones((3, 4)))
    assert np.array_equal(feats.features, np.zeros((3, 5)))


def test_encode_rejects_wrong_input_dim():
    model = init_model(tiny_config(), seed=0)
    with pytest.raises(ConfigurationError):
        encode(model, VISUAL, np.zeros((2, 9)))


def test_encode_backward_matches_finite_differences():
    rng = np.random.default_rng(13)
    model = init_model(tiny_config(), seed=5)
    x = rng.normal(size=(3, 3))
    proj = rng.normal(size=(3, 5))
    feats, cache = encode(model, VISUAL, x)
    grads, grad_in = encode_backward(cache, proj)
    params = model.parameters()

    def run():
        out, _ = encode(model, VISUAL, x)
        return float(np.sum(proj * out.features))

    for name in grads:
        p = params[name]

        def f(t, p=p):
            old = p.copy()
            p[...] = t
            val = run()
            p[...] = old
            return val

        fd = finite_difference_grad(f, p.copy())
        assert relative_error(grads[name], fd) < 1e-5, name

    fd_x = finite_difference_grad(
        lambda t: float(np.sum(proj * encode(model, VISUAL, t)[0].features)), x)
    assert relative_error(grad_in, fd_x) < 1e-5


# ---------------------------------------------------------------------------
# classify and batchnorm


def test_classify_zero_weights_give_uniform_softmax():
    model = init_model(tiny_config(), seed=0)
    model.classifier_visual.weight[...] = 0.0
    model.classifier_visual.bias[...] = 0.0
    logits, _ = classify(model, VISUAL, np.ones((4, 5)))
    assert np.array_equal(logits, np.zeros((4, 3)))


def test_classify_identity_reproduces_one_hot_features():
    cfg = tiny_config(feature_dim=3, num_classes=3)
    model = init_model(cfg, seed=0)
    model.classifier_visual.weight[...] = np.eye(3)
    model.classifier_visual.bias[...] = 0.0
    feats = np.eye(3)
    logits, _ = classify(model, VISUAL, feats)
    assert np.array_equal(logits, feats)


def test_batchnorm_training_mode_standardizes_batch():
    rng = np.random.default_rng(7)
    state = BatchNormState(dim=5)
    x = rng.normal(loc=3.0, scale=2.0, size=(64, 5))
    y, _ = batchnorm_forward(state, x, training=True)
    assert np.max(np.abs(y.mean(axis=0))) < 1e-9
    assert np.max(np.abs(y.var(axis=0) - 1.0)) < 1e-3  # epsilon effects


def test_batchnorm_eval_mode_is_batch_independent_affine():
    rng = np.random.default_rng(8)
    state = BatchNormState(dim=4)
    # push some statistics into the running buffers
    for _ in range(5):
        batchnorm_forward(state, rng.normal(size=(32, 4)), training=True,
                          update_running=True)
    x = rng.normal(size=(6, 4))
    y_full, _ = batchnorm_forward(state, x, training=False)
    y_rows = np.vstack([
        batchnorm_forward(state, x[i:i + 1], training=False)[0]
        for i in range(6)
    ])
    assert np.allclose(y_full, y_rows, atol=1e-12)


def test_batchnorm_forward_is_pure_unless_update_requested():
    state = BatchNormState(dim=3)
    before_mean = state.running_mean.copy()
    batchnorm_forward(state, np.random.default_rng(0).normal(size=(8, 3)),
                      training=True)
    assert np.array_equal(state.running_mean, before_mean)


# ---------------------------------------------------------------------------
# fusion


def test_fuse_late_zero_audio_equals_visual():
    v = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(fuse_late(v, np.zeros_like(v)), v)


def test_fuse_late_opposite_logits_cancel():
    v = np.array([[2.0, -1.0]])
    assert np.array_equal(fuse_late(v, -v), np.zeros((1, 2)))


def test_fuse_late_small_example():
    out = fuse_late(np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]]))
    assert np.array_equal(out, [[4.0, 1.0]])


def test_fuse_late_is_commutative():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert np.array_equal(fuse_late(a, b), fuse_late(b, a))


def test_fuse_late_rejects_shape_mismatch():
    with pytest.raises(ConfigurationError):
        fuse_late(np.zeros((2, 3)), np.zeros((2, 4)))


def test_fuse_mid_zero_weights_give_uniform_prediction():
    cfg = tiny_config(fusion_mode="mid")
    model = init_model(cfg, seed=0)
    model.classifier_mid.weight[...] = 0.0
    model.classifier_mid.bias[...] = 0.0
    logits, _ = fuse_mid(model, np.ones((2, 5)), np.ones((2, 5)))
    assert np.array_equal(logits, np.zeros((2, 3)))


def test_fuse_mid_visual_block_matches_visual_only_late_model():
    rng = np.random.default_rng(10)
    mid_model = init_model(tiny_config(fusion_mode="mid"), seed=4)
    wv = rng.normal(size=(3, 5))
    mid_model.classifier_mid.weight[...] = np.hstack([wv, np.zeros((3, 5))])
    mid_model.classifier_mid.bias[...] = 0.0
    fv, fa = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    logits, _ = fuse_mid(mid_model, fv, fa)
    assert np.allclose(logits, fv @ wv.T)


def test_fuse_mid_on_late_model_is_an_error():
    model = init_model(tiny_config(), seed=0)
    with pytest.raises(ConfigurationError):
        fuse_mid(model, np.zeros((1, 5)), np.zeros((1, 5)))


# ---------------------------------------------------------------------------
# prediction


def test_predict_breaks_ties_toward_lowest_class():
    model = init_model(tiny_config(), seed=0)
    for clf in (model.classifier_visual, model.classifier_audio):
        clf.weight[...] = 0.0
        clf.bias[...] = 0.0
    batch = MultiModalBatch(np.ones((3, 3)), np.ones((3, 4)))
    assert np.array_equal(predict(model, batch), [0, 0, 0])


def test_predict_picks_argmax():
    model = make_identity_encoder_model(dim=3)
    cfg3 = ModelConfig(input_dim_visual=3, input_dim_audio=3, hidden_dim=3,
                       feature_dim=3, num_classes=3)
    model = init_model(cfg3, seed=0)
    for stack in (model.encoder_visual, model.encoder_audio):
        for layer in stack:
            layer.weight[...] = np.eye(3)
            layer.bias[...] = 0.0
    model.classifier_visual.weight[...] = np.eye(3)
    model.classifier_visual.bias[...] = 0.0
    model.classifier_audio.weight[...] = 0.0
    model.classifier_audio.bias[...] = 0.0
    batch = MultiModalBatch(np.array([[1.0, 5.0, 2.0]]), np.zeros((1, 3)))
    assert np.array_equal(predict(model, batch), [1])


def test_prediction_invariant_to_constant_logit_shift():
    # shifting every class's bias by the same constant changes no argmax
    rng = np.random.default_rng(11)
    model = init_model(tiny_config(), seed=6)
    batch = MultiModalBatch(rng.normal(size=(8, 3)), rng.normal(size=(8, 4)))
    base = predict(model, batch)
    model.classifier_visual.bias[...] += 7.5
    model.classifier_audio.bias[...] -= 2.25
    assert np.array_equal(predict(model, batch), base)


def test_zeroed_audio_classifier_makes_fusion_visual_only():
    rng = np.random.default_rng(12)
    model = init_model(tiny_config(), seed=7)
    model.classifier_audio.weight[...] = 0.0
    model.classifier_audio.bias[...] = 0.0
    v = rng.normal(size=(10, 3))
    a = rng.normal(size=(10, 4))
    fused = fused_eval_logits(model, v, a)
    feat_v, _ = encode(model, VISUAL, v)
    feat_a, _ = encode(model, AUDIO, a)
    visual_only = modality_logits(model, VISUAL, feat_v, feat_a)
    assert np.allclose(fused, visual_only)
    assert np.array_equal(np.argmax(fused, axis=1),
                          np.argmax(visual_only, axis=1))


def test_predict_scores_are_probabilities():
    rng = np.random.default_rng(13)
    model = init_model(tiny_config(), seed=8)
    scores = predict_scores(model, rng.normal(size=(5, 3)),
                            rng.normal(size=(5, 4)))
    assert scores.shape == (5, 3)
    assert np.allclose(scores.sum(axis=1), 1.0)


# ---------------------------------------------------------------------------
# full-model gradients


def full_model_grad_check(fusion_mode, batchnorm, seed, tol=1e-4):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(input_dim_visual=4, input_dim_audio=3, hidden_dim=6,
                      feature_dim=5, num_classes=3, fusion_mode=fusion_mode,
                      batchnorm=batchnorm)
    model = init_model(cfg, seed=seed)
    x_v = rng.normal(size=(4, 4))
    x_a = rng.normal(size=(4, 3))
    labels = rng.integers(0, 3, size=4)

    fused, _, _, cache = model_forward(model, x_v, x_a, training=True)
    _, grad_logits = softmax_cross_entropy(fused, labels)
    bundle = model_backward(cache, grad_logits)

    params = model.parameters()
    for name, p in params.items():

        def f(t, p=p):
            old = p.copy()
            p[...] = t
            out, _, _, _ = model_forward(model, x_v, x_a, training=True)
            loss, _ = softmax_cross_entropy(out, labels)
            p[...] = old
            return loss

        fd = finite_difference_grad(f, p.copy())
        assert relative_error(bundle[name], fd) < tol, (fusion_mode, batchnorm,
                                                        name)


def test_full_model_gradients_late_fusion():
    full_model_grad_check("late", batchnorm=False, seed=0)


def test_full_model_gradients_mid_fusion():
    full_model_grad_check("mid", batchnorm=False, seed=1)


def test_full_model_gradients_late_fusion_with_batchnorm():
    full_model_grad_check("late", batchnorm=True, seed=2)


def test_full_model_gradients_mid_fusion_with_batchnorm():
    full_model_grad_check("mid", batchnorm=True, seed=3)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    for fusion_mode, batchnorm in (("late", False), ("mid", True)):
        model = init_model(tiny_config(fusion_mode=fusion_mode,
                                       batchnorm=batchnorm), seed=9)
        path = tmp_path / f"model-{fusion_mode}.rna"
        save_checkpoint(model, str(path))
        loaded = load_checkpoint(str(path))
        assert loaded.config.fusion_mode == fusion_mode
        for name, p in model.parameters().items():
            assert np.array_equal(p, loaded.parameters()[name]), name
        if batchnorm:
            assert np.array_equal(model.batchnorm_visual.running_mean,
                                  loaded.batchnorm_visual.running_mean)
            assert np.array_equal(model.batchnorm_audio.running_var,
                                  loaded.batchnorm_audio.running_var)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.rna"
    path.write_bytes(b"NOPE" + bytes(28))
    with pytest.raises(ParseError):
        load_checkpoint(str(path))


def test_checkpoint_rejects_truncation(tmp_path):
    model = init_model(tiny_config(), seed=10)
    path = tmp_path / "model.rna"
    save_checkpoint(model, str(path))
    blob = path.read_bytes()
    (tmp_path / "short.rna").write_bytes(blob[:len(blob) - 16])
    with pytest.raises(ParseError):
        load_checkpoint(str(tmp_path / "short.rna"))


def test_checkpoint_rejects_trailing_bytes(tmp_path):
    model = init_model(tiny_config(), seed=11)
    path = tmp_path / "model.rna"
    save_checkpoint(model, str(path))
    (tmp_path / "long.rna").write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(ParseError):
        load_checkpoint(str(tmp_path / "long.rna"))
