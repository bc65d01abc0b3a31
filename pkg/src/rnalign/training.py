"""Training loops for domain generalization (DG) and unsupervised domain
adaptation (UDA), per-iteration norm telemetry, evaluation, and multi-pair
experiment matrices.

Both trainers minimize

    L = cross_entropy(fused logits, labels) + lambda * L_aux(f_v, f_a)

where the auxiliary term acts directly on the encoded features.  In the UDA
setting the auxiliary loss is applied to the labeled source batch and to an
unlabeled target batch symmetrically; no label-dependent term ever touches
target data, which is enforced structurally (the target batch object carries
no labels at all).

Reproducibility: a run is fully determined by (config, config.seed).  The
seed is split into independent child streams for model init, source
minibatch sampling, and target minibatch sampling, so e.g. a lambda=0 UDA run
is bitwise independent of the target data.

Telemetry serializes to CSV with the exact header
``iter,mean_norm_v,mean_norm_a,delta,rho,ce_loss,aux_loss``; results tables
serialize with one row per method and one column per domain pair plus "mean".
All accuracies are fractions in [0, 1].
"""

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import (BenchmarkSpec, MultiModalBatch, generate_benchmark,
                   load_feature_file, make_uda_split)
from .errors import ConfigurationError, NumericalError, ParseError
from .losses import (cosine_alignment_loss, hna_loss, norm_stats,
                     orthogonality_loss, rna_loss, rna_loss_uda,
                     top_k_norm_share)
from .model import (ModelConfig, encode, encode_backward, init_model,
                    modality_logits, model_backward, model_forward, predict,
                    predict_scores)
from .numerics import sgd_step, softmax_cross_entropy

TELEMETRY_HEADER = "iter,mean_norm_v,mean_norm_a,delta,rho,ce_loss,aux_loss"

SETTINGS = ("dg-single", "dg-multi", "uda")
AUX_LOSSES = ("none", "rna", "cosine-align", "orthogonality", "hna",
              "batchnorm-only")
EVAL_MODES = ("fused", "visual", "audio")


@dataclass
class IterationRecord:
    iteration: int
    mean_norm_v: float
    mean_norm_a: float
    delta: float
    rho: float
    ce_loss: float
    aux_loss: float


@dataclass
class EvalRecord:
    split: str
    mode: str
    accuracy: float


class NormTelemetry:
    """Per-iteration norm/loss records plus final evaluation records."""

    def __init__(self, aux_loss_name=None):
        self.aux_loss_name = aux_loss_name
        self.iterations = []
        self.evals = []
        self.top_k = None
        self.top_k_share = None  # {"visual": share, "audio": share}

    def add_iteration(self, record):
        if self.iterations and record.iteration <= self.iterations[-1].iteration:
            raise ConfigurationError(
                "iteration records must be strictly increasing")
        if math.isfinite(record.mean_norm_a) and record.mean_norm_a > 0:
            if abs(record.delta
                   - (record.mean_norm_v - record.mean_norm_a)) > 1e-9:
                raise ConfigurationError("delta inconsistent with mean norms")
            if abs(record.rho
                   - record.mean_norm_v / record.mean_norm_a) > 1e-9:
                raise ConfigurationError("rho inconsistent with mean norms")
        self.iterations.append(record)

    def add_eval(self, split, mode, accuracy):
        self.evals.append(EvalRecord(split, mode, float(accuracy)))

    def eval_accuracy(self, split, mode):
        for rec in self.evals:
            if rec.split == split and rec.mode == mode:
                return rec.accuracy
        raise ConfigurationError(f"no evaluation record for ({split}, {mode})")

    def to_csv(self, path):
        with open(path, "w", encoding="ascii", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TELEMETRY_HEADER.split(","))
            for r in self.iterations:
                writer.writerow([r.iteration, repr(float(r.mean_norm_v)),
                                 repr(float(r.mean_norm_a)),
                                 repr(float(r.delta)), repr(float(r.rho)),
                                 repr(float(r.ce_loss)),
                                 repr(float(r.aux_loss))])

    @classmethod
    def from_csv(cls, path, aux_loss_name=None):
        telemetry = cls(aux_loss_name)
        with open(path, "r", encoding="ascii", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError(f"{path}: line 1: empty telemetry file")
            if ",".join(header) != TELEMETRY_HEADER:
                raise ParseError(
                    f"{path}: line 1: expected header '{TELEMETRY_HEADER}'")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 7:
                    raise ParseError(
                        f"{path}: line {lineno}: expected 7 fields, "
                        f"got {len(row)}")
                try:
                    rec = IterationRecord(int(row[0]), *map(float, row[1:]))
                except ValueError as exc:
                    raise ParseError(
                        f"{path}: line {lineno}: {exc}") from exc
                telemetry.add_iteration(rec)
        return telemetry


@dataclass
class ExperimentConfig:
    """Everything a single training run depends on."""
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    data_dir: Optional[str] = None
    setting: str = "dg-single"
    aux_loss: str = "rna"
    lambda_weight: float = 1.0
    hna_target_norm: Optional[float] = None
    fusion_mode: str = "late"
    hidden_dim: int = 128
    feature_dim: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.03
    iterations: int = 2000
    batch_size: int = 32
    checkpoint_average: int = 9
    source_index: Optional[int] = 0
    target_index: int = 1
    seed: int = 0

    def validate(self):
        if self.setting not in SETTINGS:
            raise ConfigurationError(f"unknown setting: {self.setting!r}")
        if self.aux_loss not in AUX_LOSSES:
            raise ConfigurationError(f"unknown aux loss: {self.aux_loss!r}")
        if self.lambda_weight < 0:
            raise ConfigurationError("lambda_weight must be >= 0")
        if self.hna_target_norm is not None and self.hna_target_norm <= 0:
            raise ConfigurationError("hna_target_norm must be positive")
        if self.fusion_mode not in ("late", "mid"):
            raise ConfigurationError(f"unknown fusion mode: {self.fusion_mode!r}")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.checkpoint_average < 1:
            raise ConfigurationError("checkpoint_average must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate and weight_decay must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.setting in ("dg-single", "uda") and self.source_index is None:
            raise ConfigurationError(
                f"setting {self.setting} needs a source_index")


def resolve_domains(config):
    """The run's domains: generated from the benchmark spec, or loaded from
    ``<data_dir>/<id>_train.rnafeat`` / ``<id>_test.rnafeat`` file pairs."""
    if config.data_dir is None:
        return generate_benchmark(config.benchmark)
    from pathlib import Path

    from .data import DomainData
    root = Path(config.data_dir)
    train_files = sorted(root.glob("*_train.rnafeat"))
    if not train_files:
        raise ConfigurationError(
            f"no '*_train.rnafeat' files found in {root}")
    domains = []
    for train_path in train_files:
        domain_id = train_path.name[:-len("_train.rnafeat")]
        test_path = root / f"{domain_id}_test.rnafeat"
        if not test_path.exists():
            raise ConfigurationError(f"missing test split file: {test_path}")
        train = load_feature_file(train_path, domain_id)
        test = load_feature_file(test_path, domain_id)
        if not train.labeled or not test.labeled:
            raise ConfigurationError(
                f"domain files for {domain_id} must be labeled")
        domains.append(DomainData(domain_id, train, test))
    return domains


def _num_classes(config, domains):
    if config.data_dir is None:
        return config.benchmark.num_classes
    top = max(int(d.train.labels.max()) for d in domains)
    return top + 1


def _model_config(config, domains, num_classes):
    sample = domains[0].train
    return ModelConfig(
        input_dim_visual=sample.visual.shape[1],
        input_dim_audio=sample.audio.shape[1],
        hidden_dim=config.hidden_dim,
        feature_dim=config.feature_dim,
        num_classes=num_classes,
        fusion_mode=config.fusion_mode,
        batchnorm=(config.aux_loss == "batchnorm-only"))


_AUX_FUNCTIONS = {
    "cosine-align": cosine_alignment_loss,
    "orthogonality": orthogonality_loss,
}


def _resolve_hna_target(config, model, probe_batch):
    """R for the hard-alignment baseline: explicit config value, or the
    midpoint of the two modalities' mean feature norms measured with the
    freshly initialized model on the first training examples."""
    if config.hna_target_norm is not None:
        return float(config.hna_target_norm)
    n = min(config.batch_size, probe_batch.n)
    probe = probe_batch.take(np.arange(n))
    feat_v, _ = encode(model, "visual", probe.visual)
    feat_a, _ = encode(model, "audio", probe.audio)
    stats = norm_stats(feat_v, feat_a)
    return 0.5 * (stats.mean_norm_visual + stats.mean_norm_audio)


def _aux_terms(config, hna_r, feat_v, feat_a):
    """(value, grad_v, grad_a) of the configured auxiliary loss on one
    domain's features; (0, None, None) when there is no feature-level term."""
    aux = config.aux_loss
    if aux in ("none", "batchnorm-only"):
        return 0.0, None, None
    if aux == "rna":
        res = rna_loss(feat_v, feat_a)
    elif aux == "hna":
        res = hna_loss(feat_v, feat_a, hna_r)
    else:
        res = _AUX_FUNCTIONS[aux](feat_v, feat_a)
    return res.value, res.grad_visual, res.grad_audio


def _record_for(it, feat_v, feat_a, ce, aux_value):
    norms_v = np.sqrt(np.sum(feat_v.features ** 2, axis=1))
    norms_a = np.sqrt(np.sum(feat_a.features ** 2, axis=1))
    mean_v = float(norms_v.mean())
    mean_a = float(norms_a.mean())
    rho = mean_v / mean_a if mean_a > 0 else float("nan")
    return IterationRecord(it, mean_v, mean_a, mean_v - mean_a, rho,
                           float(ce), float(aux_value))


def _check_finite(record, telemetry):
    if math.isfinite(record.ce_loss) and math.isfinite(record.aux_loss):
        return
    last = telemetry.iterations[-1] if telemetry.iterations else None
    raise NumericalError(
        f"non-finite loss at iteration {record.iteration}: "
        f"ce={record.ce_loss} aux={record.aux_loss}; last record: {last}")


def _finish(model, config, snapshots, telemetry, target_test):
    """Final evaluation: fused accuracy under the snapshot-averaging protocol,
    single-modality accuracies from the final model, and the top-k norm-share
    diagnostic on the target test features."""
    if not snapshots:
        snapshots = [model.clone()]
    telemetry.add_eval("target_test", "fused",
                       average_checkpoint_scores(snapshots, target_test))
    for mode in ("visual", "audio"):
        telemetry.add_eval("target_test", mode,
                           evaluate(model, target_test, mode))
    feat_v, _ = encode(model, "visual", target_test.visual)
    feat_a, _ = encode(model, "audio", target_test.audio)
    k = min(300, model.config.feature_dim)
    telemetry.top_k = k
    telemetry.top_k_share = {
        "visual": top_k_norm_share(feat_v, k),
        "audio": top_k_norm_share(feat_a, k)}
    return model, telemetry


def train_dg(config):
    """Domain-generalization training on pooled labeled sources.

    Returns (model, telemetry).  With ``iterations == 0`` the freshly
    initialized model is returned unchanged (and evaluated as-is).
    """
    config.validate()
    if config.setting not in ("dg-single", "dg-multi"):
        raise ConfigurationError(
            f"train_dg cannot run setting {config.setting!r}")
    domains = resolve_domains(config)
    if not 0 <= config.target_index < len(domains):
        raise ConfigurationError(
            f"target index {config.target_index} out of range")
    if config.setting == "dg-single":
        if config.source_index == config.target_index:
            raise ConfigurationError("source and target domains must differ")
        if not 0 <= config.source_index < len(domains):
            raise ConfigurationError(
                f"source index {config.source_index} out of range")
        sources = [domains[config.source_index].train]
    else:
        sources = [d.train for i, d in enumerate(domains)
                   if i != config.target_index]
    pooled = sources[0] if len(sources) == 1 else \
        MultiModalBatch.concatenate(sources)
    target_test = domains[config.target_index].test

    model_seed, sampler_seed, _ = np.random.SeedSequence(config.seed).spawn(3)
    model = init_model(_model_config(config, domains,
                                     _num_classes(config, domains)),
                       model_seed)
    hna_r = _resolve_hna_target(config, model, pooled) \
        if config.aux_loss == "hna" else None
    telemetry = NormTelemetry(config.aux_loss)
    rng = np.random.default_rng(sampler_seed)
    params = model.parameters()
    velocities = {}
    snapshots = deque(maxlen=config.checkpoint_average)
    lam = config.lambda_weight

    # divergence shows up as inf/nan and is caught by the explicit finiteness
    # checks in the loop; numpy's own overflow warnings would only duplicate
    # that, so they are silenced for the loop's duration
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(config.iterations):
            batch = pooled.take(
                rng.integers(0, pooled.n, size=config.batch_size))
            fused, feat_v, feat_a, cache = model_forward(
                model, batch.visual, batch.audio, training=True,
                update_running=True)
            ce, grad_logits = softmax_cross_entropy(fused, batch.labels)
            aux_value, grad_v, grad_a = _aux_terms(config, hna_r, feat_v,
                                                   feat_a)
            record = _record_for(it, feat_v, feat_a, ce, aux_value)
            _check_finite(record, telemetry)
            use_aux = lam != 0.0 and grad_v is not None
            bundle = model_backward(cache, grad_logits,
                                    lam * grad_v if use_aux else None,
                                    lam * grad_a if use_aux else None)
            try:
                sgd_step(params, bundle, velocities, config.learning_rate,
                         config.momentum, config.weight_decay)
            except NumericalError as exc:
                raise NumericalError(
                    f"iteration {it}: {exc}; last record: "
                    f"{telemetry.iterations[-1] if telemetry.iterations else None}"
                ) from exc
            telemetry.add_iteration(record)
            if config.iterations - it <= config.checkpoint_average:
                snapshots.append(model.clone())
    return _finish(model, config, list(snapshots), telemetry, target_test)


class _Term:
    """Duck-typed stand-in for a LossResult (baselines in the UDA loop)."""

    def __init__(self, value, grad_visual, grad_audio):
        self.value = value
        self.grad_visual = grad_visual
        self.grad_audio = grad_audio


def train_uda(config):
    """Adaptation training: labeled source plus unlabeled target batches.

    The auxiliary loss decomposes into one term per domain; the target term
    sees only encoded target features, never labels (the target batch object
    has none).  With the ``batchnorm-only`` baseline there is no auxiliary
    term at all, so target batches are drawn but never encoded.
    """
    config.validate()
    if config.setting != "uda":
        raise ConfigurationError(
            f"train_uda cannot run setting {config.setting!r}")
    domains = resolve_domains(config)
    split = make_uda_split(domains, config.source_index, config.target_index)
    source = split.source
    target_train = split.target_train

    model_seed, source_seed, target_seed = \
        np.random.SeedSequence(config.seed).spawn(3)
    model = init_model(_model_config(config, domains,
                                     _num_classes(config, domains)),
                       model_seed)
    hna_r = _resolve_hna_target(config, model, source) \
        if config.aux_loss == "hna" else None
    telemetry = NormTelemetry(config.aux_loss)
    source_rng = np.random.default_rng(source_seed)
    target_rng = np.random.default_rng(target_seed)
    params = model.parameters()
    velocities = {}
    snapshots = deque(maxlen=config.checkpoint_average)
    lam = config.lambda_weight
    has_aux = config.aux_loss not in ("none", "batchnorm-only")

    # as in train_dg: the finiteness checks report divergence, so numpy's
    # overflow warnings are silenced for the loop's duration
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(config.iterations):
            batch = source.take(
                source_rng.integers(0, source.n, size=config.batch_size))
            tgt = target_train.take(
                target_rng.integers(0, target_train.n,
                                    size=config.batch_size))
            fused, feat_v, feat_a, cache = model_forward(
                model, batch.visual, batch.audio, training=True,
                update_running=True)
            ce, grad_logits = softmax_cross_entropy(fused, batch.labels)

            aux_value = 0.0
            grad_sv = grad_sa = None
            tgt_caches = None
            if has_aux:
                tgt_feat_v, cache_tv = encode(model, "visual", tgt.visual)
                tgt_feat_a, cache_ta = encode(model, "audio", tgt.audio)
                if config.aux_loss == "rna":
                    s_term, t_term = rna_loss_uda(feat_v, feat_a,
                                                  tgt_feat_v, tgt_feat_a)
                else:
                    s_value, s_gv, s_ga = _aux_terms(config, hna_r,
                                                     feat_v, feat_a)
                    t_value, t_gv, t_ga = _aux_terms(config, hna_r,
                                                     tgt_feat_v, tgt_feat_a)
                    s_term = _Term(s_value, s_gv, s_ga)
                    t_term = _Term(t_value, t_gv, t_ga)
                aux_value = s_term.value + t_term.value
                grad_sv, grad_sa = s_term.grad_visual, s_term.grad_audio
                tgt_caches = (cache_tv, cache_ta,
                              t_term.grad_visual, t_term.grad_audio)

            record = _record_for(it, feat_v, feat_a, ce, aux_value)
            _check_finite(record, telemetry)
            use_aux = lam != 0.0 and has_aux
            bundle = model_backward(cache, grad_logits,
                                    lam * grad_sv if use_aux else None,
                                    lam * grad_sa if use_aux else None)
            if use_aux:
                cache_tv, cache_ta, t_gv, t_ga = tgt_caches
                enc_grads_v, _ = encode_backward(cache_tv, lam * t_gv)
                enc_grads_a, _ = encode_backward(cache_ta, lam * t_ga)
                bundle.add_scaled(enc_grads_v)
                bundle.add_scaled(enc_grads_a)
            try:
                sgd_step(params, bundle, velocities, config.learning_rate,
                         config.momentum, config.weight_decay)
            except NumericalError as exc:
                raise NumericalError(
                    f"iteration {it}: {exc}; last record: "
                    f"{telemetry.iterations[-1] if telemetry.iterations else None}"
                ) from exc
            telemetry.add_iteration(record)
            if config.iterations - it <= config.checkpoint_average:
                snapshots.append(model.clone())
    return _finish(model, config, list(snapshots), telemetry,
                   split.target_test)


def run_experiment(config):
    """Dispatch to the setting's trainer."""
    if config.setting == "uda":
        return train_uda(config)
    return train_dg(config)


def evaluate(model, batch, mode="fused"):
    """Top-1 accuracy of the model on a labeled batch.

    mode "fused" uses the full fusion; "visual"/"audio" score that stream
    alone (for mid fusion: the other half of the concatenated features is
    zeroed).
    """
    if mode not in EVAL_MODES:
        raise ConfigurationError(f"unknown evaluation mode: {mode!r}")
    if batch.n == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    if not batch.labeled:
        raise ConfigurationError("evaluation needs a labeled dataset")
    if mode == "fused":
        pred = predict(model, batch)
    else:
        feat_v, _ = encode(model, "visual", batch.visual)
        feat_a, _ = encode(model, "audio", batch.audio)
        logits = modality_logits(model, mode, feat_v, feat_a)
        pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == batch.labels))


def average_checkpoint_scores(snapshots, batch):
    """Accuracy of the ensemble that averages the softmax score vectors of
    the given model snapshots sample-by-sample, then takes the argmax."""
    if not snapshots:
        raise ConfigurationError("need at least one snapshot")
    if batch.n == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    if not batch.labeled:
        raise ConfigurationError("evaluation needs a labeled dataset")
    total = None
    for snap in snapshots:
        scores = predict_scores(snap, batch.visual, batch.audio)
        total = scores if total is None else total + scores
    pred = np.argmax(total / len(snapshots), axis=1)
    return float(np.mean(pred == batch.labels))


def headline_accuracy(telemetry):
    """The run's reported number: fused target-test accuracy under the
    snapshot-averaging protocol."""
    return telemetry.eval_accuracy("target_test", "fused")


def default_pairs(setting, num_domains):
    """Every evaluation cell for a setting: all ordered (source, target)
    pairs for dg-single/uda, one cell per held-out target for dg-multi."""
    if num_domains < 2:
        raise ConfigurationError("need at least 2 domains")
    if setting in ("dg-single", "uda"):
        return [(s, t) for s in range(num_domains)
                for t in range(num_domains) if s != t]
    if setting == "dg-multi":
        return [(t,) for t in range(num_domains)]
    raise ConfigurationError(f"unknown setting: {setting!r}")


def pair_label(setting, pair, num_domains):
    """Human-readable cell label: "D1->D2" or "D1,D2->D3"."""
    if setting in ("dg-single", "uda"):
        s, t = pair
        return f"D{s + 1}->D{t + 1}"
    (t,) = pair if isinstance(pair, tuple) else (pair,)
    sources = ",".join(f"D{i + 1}" for i in range(num_domains) if i != t)
    return f"{sources}->D{t + 1}"


@dataclass
class MatrixCell:
    label: str
    accuracies: list
    mean: float
    std: float


class MatrixResult:
    """Per-pair seed-averaged accuracies for one method/config."""

    def __init__(self, cells, failures=None):
        self.cells = list(cells)
        self.failures = list(failures or [])

    @property
    def labels(self):
        return [c.label for c in self.cells]

    @property
    def means(self):
        return [c.mean for c in self.cells]

    @property
    def mean(self):
        return float(np.mean(self.means))


def run_experiment_matrix(base_config, pairs=None, seeds=(0,)):
    """Train one configuration over a grid of domain pairs and seeds.

    Returns a MatrixResult with one cell per pair: the per-seed accuracies,
    their mean, and standard deviation.  A run that aborts numerically is
    recorded as NaN for that seed and noted in ``failures``; the matrix
    continues.
    """
    base_config.validate()
    num_domains = (base_config.benchmark.num_domains
                   if base_config.data_dir is None
                   else len(resolve_domains(base_config)))
    if pairs is None:
        pairs = default_pairs(base_config.setting, num_domains)
    cells = []
    failures = []
    for pair in pairs:
        label = pair_label(base_config.setting, pair, num_domains)
        accuracies = []
        for seed in seeds:
            if base_config.setting == "dg-multi":
                (t,) = pair if isinstance(pair, tuple) else (pair,)
                config = replace(base_config, source_index=None,
                                 target_index=t, seed=seed)
            else:
                s, t = pair
                config = replace(base_config, source_index=s,
                                 target_index=t, seed=seed)
            try:
                _, telemetry = run_experiment(config)
                accuracies.append(headline_accuracy(telemetry))
            except NumericalError as exc:
                failures.append((label, seed, str(exc)))
                accuracies.append(float("nan"))
        arr = np.asarray(accuracies, dtype=np.float64)
        cells.append(MatrixCell(label, accuracies, float(arr.mean()),
                                float(arr.std())))
    return MatrixResult(cells, failures)


def write_results_csv(path, results):
    """Write a methods-by-pairs results table.

    ``results`` is an ordered mapping method name -> MatrixResult; all rows
    must share the same pair labels.  Cells hold the seed-mean accuracy as a
    fraction; the last column is the mean over pairs.
    """
    if not results:
        raise ConfigurationError("no results to write")
    items = list(results.items())
    labels = items[0][1].labels
    for method, result in items:
        if result.labels != labels:
            raise ConfigurationError(
                f"result rows disagree on pair labels ({method})")
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method"] + labels + ["mean"])
        for method, result in items:
            writer.writerow([method] + [repr(float(m)) for m in result.means]
                            + [repr(float(result.mean))])


def read_results_csv(path):
    """Parse a results table back into (pair_labels, {method: row}) where a
    row is the list of per-pair means plus the final overall mean."""
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: line 1: empty results file")
        if len(header) < 3 or header[0] != "method" or header[-1] != "mean":
            raise ParseError(
                f"{path}: line 1: expected 'method,<pairs...>,mean' header")
        labels = header[1:-1]
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                rows[row[0]] = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return labels, rows
