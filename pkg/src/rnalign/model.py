"""Two-stream audio-visual classifier.

Each modality owns a small MLP encoder (input -> hidden -> feature, ReLU in
between) and a linear classifier head.  Predictions fuse the two streams
either late (summing the per-modality logits) or mid (one classifier over the
concatenated feature vectors).  An optional per-modality batch-normalization
stage can be inserted before the classifiers as a baseline regularizer.

The forward functions return explicit caches; ``model_backward`` composes the
layer backward passes into a GradientBundle keyed by parameter name, the same
names ``model.parameters()`` yields, so the optimizer can walk them together.

Checkpoint format (little-endian throughout):

    magic   4 bytes  b"RNA1"
    header  7 x u32  input_dim_visual, input_dim_audio, hidden_dim,
                     feature_dim, num_classes, fusion (0 late / 1 mid),
                     batchnorm (0/1)
    body    float64  every array from ``parameters()`` in declaration order,
                     then, when batchnorm is enabled, the running mean and
                     running variance of each modality (visual then audio).
"""

import struct

import numpy as np

from .errors import ConfigurationError, ParseError
from .losses import AUDIO, VISUAL, FeatureBatch
from .numerics import (GradientBundle, LinearLayerParams, linear_backward,
                       linear_forward, relu_backward, relu_forward, softmax)

CHECKPOINT_MAGIC = b"RNA1"

LATE = "late"
MID = "mid"


class ModelConfig:
    """Dimensions and structural switches of a two-stream model."""

    def __init__(self, input_dim_visual, input_dim_audio, hidden_dim=128,
                 feature_dim=64, num_classes=8, fusion_mode=LATE,
                 batchnorm=False):
        self.input_dim_visual = int(input_dim_visual)
        self.input_dim_audio = int(input_dim_audio)
        self.hidden_dim = int(hidden_dim)
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self.fusion_mode = fusion_mode
        self.batchnorm = bool(batchnorm)
        for name in ("input_dim_visual", "input_dim_audio", "hidden_dim",
                     "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if fusion_mode not in (LATE, MID):
            raise ConfigurationError(f"unknown fusion mode: {fusion_mode!r}")


class BatchNormState:
    """Per-feature batch normalization: learned scale/shift plus running
    statistics used in evaluation mode."""

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        if eps <= 0:
            raise ConfigurationError("batchnorm eps must be positive")
        if not 0.0 <= momentum <= 1.0:
            raise ConfigurationError("batchnorm momentum must be in [0, 1]")
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)
        self.gamma = np.ones(dim, dtype=np.float64)
        self.beta = np.zeros(dim, dtype=np.float64)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def clone(self):
        other = BatchNormState(self.gamma.shape[0], self.momentum, self.eps)
        other.running_mean = self.running_mean.copy()
        other.running_var = self.running_var.copy()
        other.gamma = self.gamma.copy()
        other.beta = self.beta.copy()
        return other


def batchnorm_forward(state, x, training, update_running=False):
    """Normalize per feature; batch statistics when training, running
    statistics otherwise.  Running stats are only touched when
    ``update_running`` is set, so the forward stays pure for gradient checks.
    """
    x = np.asarray(x, dtype=np.float64)
    if training:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            m = state.momentum
            state.running_mean = (1.0 - m) * state.running_mean + m * mean
            state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    y = state.gamma * xhat + state.beta
    return y, (state, inv_std, xhat, training)


def batchnorm_backward(cache, grad_output):
    """Backward pass matching ``batchnorm_forward``; in training mode the
    gradient flows through the batch statistics as well."""
    state, inv_std, xhat, training = cache
    g = np.asarray(grad_output, dtype=np.float64)
    n = g.shape[0]
    grad_gamma = (g * xhat).sum(axis=0)
    grad_beta = g.sum(axis=0)
    dxhat = g * state.gamma
    if training:
        grad_x = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        grad_x = dxhat * inv_std
    return {"gamma": grad_gamma, "beta": grad_beta}, grad_x


class TwoStreamModel:
    """Container for both streams' parameters; built via ``init_model``."""

    def __init__(self, config, encoder_visual, encoder_audio,
                 classifier_visual, classifier_audio, classifier_mid=None,
                 batchnorm_visual=None, batchnorm_audio=None):
        self.config = config
        self.encoder_visual = list(encoder_visual)
        self.encoder_audio = list(encoder_audio)
        self.classifier_visual = classifier_visual
        self.classifier_audio = classifier_audio
        self.classifier_mid = classifier_mid
        self.batchnorm_visual = batchnorm_visual
        self.batchnorm_audio = batchnorm_audio
        d = config.feature_dim
        if self.encoder_visual[-1].out_dim != d or \
                self.encoder_audio[-1].out_dim != d:
            raise ConfigurationError(
                "both encoders must output feature_dim-sized vectors")
        if (classifier_mid is not None) != (config.fusion_mode == MID):
            raise ConfigurationError(
                "mid-fusion classifier present iff fusion_mode == 'mid'")
        if (batchnorm_visual is None) != (not config.batchnorm) or \
                (batchnorm_audio is None) != (not config.batchnorm):
            raise ConfigurationError(
                "batchnorm state present iff config.batchnorm is set")

    def encoder(self, modality):
        _check_modality(modality)
        return self.encoder_visual if modality == VISUAL else self.encoder_audio

    def classifier(self, modality):
        _check_modality(modality)
        return (self.classifier_visual if modality == VISUAL
                else self.classifier_audio)

    def batchnorm(self, modality):
        _check_modality(modality)
        return (self.batchnorm_visual if modality == VISUAL
                else self.batchnorm_audio)

    def parameters(self):
        """Trainable arrays keyed by name, in declaration order.  The arrays
        are the live ones, so in-place optimizer updates take effect."""
        params = {}
        for modality, layers in ((VISUAL, self.encoder_visual),
                                 (AUDIO, self.encoder_audio)):
            for i, layer in enumerate(layers):
                params[f"encoder_{modality}.{i}.weight"] = layer.weight
                params[f"encoder_{modality}.{i}.bias"] = layer.bias
        params["classifier_visual.weight"] = self.classifier_visual.weight
        params["classifier_visual.bias"] = self.classifier_visual.bias
        params["classifier_audio.weight"] = self.classifier_audio.weight
        params["classifier_audio.bias"] = self.classifier_audio.bias
        if self.classifier_mid is not None:
            params["classifier_mid.weight"] = self.classifier_mid.weight
            params["classifier_mid.bias"] = self.classifier_mid.bias
        if self.config.batchnorm:
            params["batchnorm_visual.gamma"] = self.batchnorm_visual.gamma
            params["batchnorm_visual.beta"] = self.batchnorm_visual.beta
            params["batchnorm_audio.gamma"] = self.batchnorm_audio.gamma
            params["batchnorm_audio.beta"] = self.batchnorm_audio.beta
        return params

    def clone(self):
        """Deep copy: parameters, batchnorm running statistics, config shared."""
        def copy_layer(layer):
            return LinearLayerParams(layer.weight.copy(), layer.bias.copy())

        return TwoStreamModel(
            self.config,
            [copy_layer(l) for l in self.encoder_visual],
            [copy_layer(l) for l in self.encoder_audio],
            copy_layer(self.classifier_visual),
            copy_layer(self.classifier_audio),
            copy_layer(self.classifier_mid) if self.classifier_mid else None,
            self.batchnorm_visual.clone() if self.batchnorm_visual else None,
            self.batchnorm_audio.clone() if self.batchnorm_audio else None)


def _check_modality(modality):
    if modality not in (VISUAL, AUDIO):
        raise ConfigurationError(f"unknown modality: {modality!r}")


def init_model(config, seed):
    """Deterministic initialization: weights uniform in +-1/sqrt(fan_in)
    (so doubling the fan-in halves the weight variance), biases zero.
    The same seed always yields bitwise-identical parameters."""
    rng = np.random.default_rng(seed)

    def layer(out_dim, in_dim):
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return LinearLayerParams(weight, np.zeros(out_dim))

    c = config
    encoder_visual = [layer(c.hidden_dim, c.input_dim_visual),
                      layer(c.feature_dim, c.hidden_dim)]
    encoder_audio = [layer(c.hidden_dim, c.input_dim_audio),
                     layer(c.feature_dim, c.hidden_dim)]
    classifier_visual = layer(c.num_classes, c.feature_dim)
    classifier_audio = layer(c.num_classes, c.feature_dim)
    classifier_mid = (layer(c.num_classes, 2 * c.feature_dim)
                      if c.fusion_mode == MID else None)
    bn_v = BatchNormState(c.feature_dim) if c.batchnorm else None
    bn_a = BatchNormState(c.feature_dim) if c.batchnorm else None
    return TwoStreamModel(c, encoder_visual, encoder_audio, classifier_visual,
                          classifier_audio, classifier_mid, bn_v, bn_a)


def encode(model, modality, inputs):
    """Run one modality's encoder.  Returns (FeatureBatch, cache)."""
    layers = model.encoder(modality)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layers[0].in_dim:
        raise ConfigurationError(
            f"{modality} encoder expects (N, {layers[0].in_dim}) inputs, "
            f"got {x.shape}")
    caches = []
    h = x
    for i, layer in enumerate(layers):
        h, lin_cache = linear_forward(layer, h)
        relu_cache = None
        if i < len(layers) - 1:
            h, relu_cache = relu_forward(h)
        caches.append((lin_cache, relu_cache))
    return FeatureBatch(h, modality), (modality, caches)


def encode_backward(cache, grad_features):
    """Backward through one encoder.  Returns (name->grad dict, grad_input)."""
    modality, caches = cache
    grads = {}
    g = np.asarray(grad_features, dtype=np.float64)
    for i in reversed(range(len(caches))):
        lin_cache, relu_cache = caches[i]
        if relu_cache is not None:
            g = relu_backward(relu_cache, g)
        bundle, g = linear_backward(lin_cache, g)
        grads[f"encoder_{modality}.{i}.weight"] = bundle["weight"]
        grads[f"encoder_{modality}.{i}.bias"] = bundle["bias"]
    return grads, g


def classify(model, modality, features, training=False, update_running=False):
    """One modality's classifier head; normalizes first when batchnorm is on.

    Returns (logits, cache).
    """
    f = features.features if isinstance(features, FeatureBatch) else \
        np.asarray(features, dtype=np.float64)
    if f.shape[1] != model.config.feature_dim:
        raise ConfigurationError(
            f"classifier expects feature dim {model.config.feature_dim}, "
            f"got {f.shape[1]}")
    bn_cache = None
    h = f
    if model.config.batchnorm:
        h, bn_cache = batchnorm_forward(model.batchnorm(modality), h,
                                        training, update_running)
    logits, lin_cache = linear_forward(model.classifier(modality), h)
    return logits, (modality, bn_cache, lin_cache)


def classify_backward(cache, grad_logits):
    """Backward through one classifier head.

    Returns (name->grad dict, grad wrt the incoming features).
    """
    modality, bn_cache, lin_cache = cache
    bundle, g = linear_backward(lin_cache, grad_logits)
    grads = {f"classifier_{modality}.weight": bundle["weight"],
             f"classifier_{modality}.bias": bundle["bias"]}
    if bn_cache is not None:
        bn_grads, g = batchnorm_backward(bn_cache, g)
        grads[f"batchnorm_{modality}.gamma"] = bn_grads["gamma"]
        grads[f"batchnorm_{modality}.beta"] = bn_grads["beta"]
    return grads, g


def fuse_late(logits_visual, logits_audio):
    """Late fusion: elementwise sum of the per-modality logits."""
    lv = np.asarray(logits_visual, dtype=np.float64)
    la = np.asarray(logits_audio, dtype=np.float64)
    if lv.shape != la.shape:
        raise ConfigurationError(
            f"cannot fuse logits of shapes {lv.shape} and {la.shape}")
    return lv + la


def fuse_mid(model, features_visual, features_audio, training=False,
             update_running=False):
    """Mid-level fusion: one classifier over [f_v || f_a].

    When batchnorm is on, each half is normalized before concatenation.
    Returns (logits, cache).
    """
    if model.config.fusion_mode != MID:
        raise ConfigurationError("fuse_mid called on a late-fusion model")
    fv = features_visual.features if isinstance(features_visual, FeatureBatch) \
        else np.asarray(features_visual, dtype=np.float64)
    fa = features_audio.features if isinstance(features_audio, FeatureBatch) \
        else np.asarray(features_audio, dtype=np.float64)
    bn_cache_v = bn_cache_a = None
    if model.config.batchnorm:
        fv, bn_cache_v = batchnorm_forward(model.batchnorm_visual, fv,
                                           training, update_running)
        fa, bn_cache_a = batchnorm_forward(model.batchnorm_audio, fa,
                                           training, update_running)
    concat = np.concatenate([fv, fa], axis=1)
    logits, lin_cache = linear_forward(model.classifier_mid, concat)
    return logits, (bn_cache_v, bn_cache_a, lin_cache,
                    model.config.feature_dim)


def fuse_mid_backward(cache, grad_logits):
    """Backward through mid fusion.

    Returns (name->grad dict, grad_feat_visual, grad_feat_audio).
    """
    bn_cache_v, bn_cache_a, lin_cache, d = cache
    bundle, g_concat = linear_backward(lin_cache, grad_logits)
    grads = {"classifier_mid.weight": bundle["weight"],
             "classifier_mid.bias": bundle["bias"]}
    g_v, g_a = g_concat[:, :d], g_concat[:, d:]
    if bn_cache_v is not None:
        bn_grads, g_v = batchnorm_backward(bn_cache_v, g_v)
        grads["batchnorm_visual.gamma"] = bn_grads["gamma"]
        grads["batchnorm_visual.beta"] = bn_grads["beta"]
        bn_grads, g_a = batchnorm_backward(bn_cache_a, g_a)
        grads["batchnorm_audio.gamma"] = bn_grads["gamma"]
        grads["batchnorm_audio.beta"] = bn_grads["beta"]
    return grads, g_v, g_a


def model_forward(model, visual_inputs, audio_inputs, training=False,
                  update_running=False):
    """Full forward pass of both streams up to fused logits.

    Returns (fused_logits, feat_visual, feat_audio, cache).
    """
    feat_v, cache_ev = encode(model, VISUAL, visual_inputs)
    feat_a, cache_ea = encode(model, AUDIO, audio_inputs)
    if model.config.fusion_mode == LATE:
        logits_v, cache_cv = classify(model, VISUAL, feat_v, training,
                                      update_running)
        logits_a, cache_ca = classify(model, AUDIO, feat_a, training,
                                      update_running)
        fused = fuse_late(logits_v, logits_a)
        head_cache = (LATE, cache_cv, cache_ca)
    else:
        fused, cache_mid = fuse_mid(model, feat_v, feat_a, training,
                                    update_running)
        head_cache = (MID, cache_mid)
    return fused, feat_v, feat_a, (model, cache_ev, cache_ea, head_cache)


def model_backward(cache, grad_fused_logits, grad_feat_visual=None,
                   grad_feat_audio=None):
    """Compose the backward passes of the whole model.

    ``grad_fused_logits`` flows back through the classification head(s);
    the optional feature gradients (from an auxiliary loss acting directly on
    the encoded features) are added before the encoders run backward.
    Returns a GradientBundle covering every trainable parameter (zeros where
    nothing flowed).
    """
    model, cache_ev, cache_ea, head_cache = cache
    bundle = GradientBundle.zeros_like(model.parameters())
    if head_cache[0] == LATE:
        _, cache_cv, cache_ca = head_cache
        # fused = logits_v + logits_a, so both heads see the same gradient
        grads_v, g_feat_v = classify_backward(cache_cv, grad_fused_logits)
        grads_a, g_feat_a = classify_backward(cache_ca, grad_fused_logits)
        bundle.add_scaled(grads_v)
        bundle.add_scaled(grads_a)
    else:
        _, cache_mid = head_cache
        grads_mid, g_feat_v, g_feat_a = fuse_mid_backward(cache_mid,
                                                          grad_fused_logits)
        bundle.add_scaled(grads_mid)
    if grad_feat_visual is not None:
        g_feat_v = g_feat_v + grad_feat_visual
    if grad_feat_audio is not None:
        g_feat_a = g_feat_a + grad_feat_audio
    enc_grads_v, _ = encode_backward(cache_ev, g_feat_v)
    enc_grads_a, _ = encode_backward(cache_ea, g_feat_a)
    bundle.add_scaled(enc_grads_v)
    bundle.add_scaled(enc_grads_a)
    return bundle


def modality_logits(model, modality, feat_visual, feat_audio):
    """Evaluation-mode logits attributable to one modality alone.

    Late fusion: that modality's classifier output.  Mid fusion: the fusion
    classifier applied with the other modality's half of the concatenated
    vector zeroed out.
    """
    _check_modality(modality)
    if model.config.fusion_mode == LATE:
        feats = feat_visual if modality == VISUAL else feat_audio
        logits, _ = classify(model, modality, feats, training=False)
        return logits
    fv = feat_visual.features if isinstance(feat_visual, FeatureBatch) else feat_visual
    fa = feat_audio.features if isinstance(feat_audio, FeatureBatch) else feat_audio
    if model.config.batchnorm:
        fv, _ = batchnorm_forward(model.batchnorm_visual, fv, training=False)
        fa, _ = batchnorm_forward(model.batchnorm_audio, fa, training=False)
    if modality == VISUAL:
        fa = np.zeros_like(fa)
    else:
        fv = np.zeros_like(fv)
    concat = np.concatenate([fv, fa], axis=1)
    logits, _ = linear_forward(model.classifier_mid, concat)
    return logits


def fused_eval_logits(model, visual_inputs, audio_inputs):
    """Evaluation-mode fused logits for a batch of raw inputs."""
    fused, _, _, _ = model_forward(model, visual_inputs, audio_inputs,
                                   training=False)
    return fused


def predict_scores(model, visual_inputs, audio_inputs):
    """Evaluation-mode softmax scores of the fused logits."""
    return softmax(fused_eval_logits(model, visual_inputs, audio_inputs))


def predict(model, batch):
    """Predicted class indices for a MultiModalBatch (or any object with
    ``visual`` and ``audio`` input arrays).  Argmax of the fused logits;
    ties break toward the lowest class index."""
    fused = fused_eval_logits(model, batch.visual, batch.audio)
    return np.argmax(fused, axis=1)


def save_checkpoint(model, path):
    """Serialize a model to the flat binary checkpoint format (see module
    docstring)."""
    c = model.config
    header = struct.pack(
        "<7I", c.input_dim_visual, c.input_dim_audio, c.hidden_dim,
        c.feature_dim, c.num_classes, 1 if c.fusion_mode == MID else 0,
        1 if c.batchnorm else 0)
    chunks = [CHECKPOINT_MAGIC, header]
    for _, array in model.parameters().items():
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    if c.batchnorm:
        for state in (model.batchnorm_visual, model.batchnorm_audio):
            chunks.append(np.ascontiguousarray(state.running_mean,
                                               dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(state.running_var,
                                               dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Reconstruct a model from a checkpoint file written by
    ``save_checkpoint``; raises ParseError on malformed or truncated files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(
            f"{path}: bad magic at byte 0 (not a checkpoint file)")
    header_size = struct.calcsize("<7I")
    if len(blob) < 4 + header_size:
        raise ParseError(f"{path}: truncated header at byte {len(blob)}")
    dims = struct.unpack_from("<7I", blob, 4)
    in_v, in_a, hidden, feature, classes, fusion_flag, bn_flag = dims
    try:
        config = ModelConfig(in_v, in_a, hidden, feature, classes,
                             MID if fusion_flag == 1 else LATE,
                             batchnorm=bool(bn_flag))
    except ConfigurationError as exc:
        raise ParseError(f"{path}: invalid dimension header: {exc}") from exc
    model = init_model(config, seed=0)
    offset = 4 + header_size

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise ParseError(f"{path}: truncated at byte {offset}")
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=offset).reshape(shape)
        offset += nbytes
        return arr.astype(np.float64)

    for name, array in model.parameters().items():
        array[...] = take(array.shape)
    if config.batchnorm:
        for state in (model.batchnorm_visual, model.batchnorm_audio):
            state.running_mean = take(state.running_mean.shape)
            state.running_var = take(state.running_var.shape)
    if offset != len(blob):
        raise ParseError(
            f"{path}: {len(blob) - offset} trailing bytes at byte {offset}")
    return model
