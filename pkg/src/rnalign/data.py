"""Synthetic multimodal domain-shifted benchmark, split construction for
generalization and adaptation experiments, and a plain-text feature file
format for externally computed features.

The generator plants one visual and one audio prototype per class on spheres
of a configurable radius; every domain sees the same prototypes (shared
semantics) through its own random orthogonal transform and bias per modality
(the domain shift), plus isotropic Gaussian noise.  Finally all audio inputs
are multiplied by a norm-imbalance factor ``audio_norm_scale`` — this changes
magnitudes only, never angles, and is what gives the norm-alignment losses a
measurable job.

Feature file format (RNAFEAT v1): a header line

    RNAFEAT v1 <N> <Dv> <Da> <labeled:0|1>

followed by N data lines of Dv visual floats, Da audio floats and, when
labeled, one trailing integer class index, all whitespace-separated decimal.
Floats are written with ``repr`` so a save/load round-trip is lossless at
64-bit precision.
"""

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, ParseError

_DEFAULT_BENCHMARK_SEED = 7


class MultiModalBatch:
    """Paired visual/audio inputs with optional labels.

    labels is None exactly when the batch is unlabeled (an adaptation-time
    target batch); otherwise it is an int array of class indices.
    """

    def __init__(self, visual, audio, labels=None, domain_id="unknown"):
        self.visual = np.asarray(visual, dtype=np.float64)
        self.audio = np.asarray(audio, dtype=np.float64)
        if self.visual.ndim != 2 or self.audio.ndim != 2:
            raise ConfigurationError("batch inputs must be 2-D (N x dim)")
        if self.visual.shape[0] != self.audio.shape[0]:
            raise ConfigurationError(
                f"modalities must be paired: {self.visual.shape[0]} visual "
                f"rows vs {self.audio.shape[0]} audio rows")
        if not (np.all(np.isfinite(self.visual))
                and np.all(np.isfinite(self.audio))):
            raise ConfigurationError("batch contains non-finite inputs")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.visual.shape[0],):
                raise ConfigurationError(
                    f"expected {self.visual.shape[0]} labels, "
                    f"got shape {labels.shape}")
        self.labels = labels
        self.domain_id = str(domain_id)

    @property
    def n(self):
        return self.visual.shape[0]

    @property
    def labeled(self):
        return self.labels is not None

    def take(self, indices):
        """Row-subset batch (labels carried along when present)."""
        idx = np.asarray(indices)
        labels = self.labels[idx] if self.labeled else None
        return MultiModalBatch(self.visual[idx], self.audio[idx], labels,
                               self.domain_id)

    def without_labels(self):
        """The same inputs with the labels structurally removed."""
        return MultiModalBatch(self.visual, self.audio, None, self.domain_id)

    @staticmethod
    def concatenate(batches, domain_id="pooled"):
        """Stack several batches; all must agree on labeledness."""
        if not batches:
            raise ConfigurationError("cannot concatenate zero batches")
        labeled = batches[0].labeled
        if any(b.labeled != labeled for b in batches):
            raise ConfigurationError(
                "cannot mix labeled and unlabeled batches")
        visual = np.concatenate([b.visual for b in batches], axis=0)
        audio = np.concatenate([b.audio for b in batches], axis=0)
        labels = (np.concatenate([b.labels for b in batches])
                  if labeled else None)
        return MultiModalBatch(visual, audio, labels, domain_id)


class BenchmarkSpec:
    """Knobs of the synthetic benchmark generator."""

    def __init__(self, num_domains=3, num_classes=8, input_dim_visual=24,
                 input_dim_audio=24, samples_per_class=200,
                 prototype_scale=1.0, transform_strength=0.8,
                 noise_sigma=0.5, audio_norm_scale=10.0,
                 train_fraction=0.75, class_skew=0.0,
                 seed=_DEFAULT_BENCHMARK_SEED):
        self.num_domains = int(num_domains)
        self.num_classes = int(num_classes)
        self.input_dim_visual = int(input_dim_visual)
        self.input_dim_audio = int(input_dim_audio)
        self.samples_per_class = int(samples_per_class)
        self.prototype_scale = float(prototype_scale)
        self.transform_strength = float(transform_strength)
        self.noise_sigma = float(noise_sigma)
        self.audio_norm_scale = float(audio_norm_scale)
        self.train_fraction = float(train_fraction)
        self.class_skew = float(class_skew)
        self.seed = int(seed)
        if self.num_domains < 2:
            raise ConfigurationError(
                "need at least 2 domains (one source, one target)")
        if self.num_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if self.input_dim_visual < 2 or self.input_dim_audio < 2:
            raise ConfigurationError("input dims must be >= 2")
        if self.samples_per_class < 4:
            raise ConfigurationError("samples_per_class must be >= 4")
        if self.prototype_scale <= 0:
            raise ConfigurationError("prototype_scale must be positive")
        if self.transform_strength < 0:
            raise ConfigurationError("transform_strength must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.audio_norm_scale <= 0:
            raise ConfigurationError("audio_norm_scale must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must be in (0, 1)")
        if self.class_skew < 0:
            raise ConfigurationError("class_skew must be >= 0")


class DomainData:
    """One generated domain: a labeled train split and a labeled test split."""

    def __init__(self, domain_id, train, test):
        self.domain_id = domain_id
        self.train = train
        self.test = test


def _random_rotation(rng, dim, strength):
    """Orthogonal transform interpolated toward identity: expm(strength * S)
    with S skew-symmetric of unit spectral norm, so no plane rotates by more
    than ``strength`` radians and strength 0 gives exactly the identity."""
    if strength == 0.0:
        return np.eye(dim)
    raw = rng.standard_normal((dim, dim))
    skew = (raw - raw.T) / 2.0
    spectral = np.linalg.norm(skew, ord=2)
    if spectral == 0.0:
        return np.eye(dim)
    return expm((strength / spectral) * skew)


def _class_counts(rng, spec):
    """Per-class sample counts for one domain; balanced unless class_skew > 0,
    in which case proportions are drawn from a Dirichlet (smaller
    concentration = heavier skew)."""
    total = spec.num_classes * spec.samples_per_class
    if spec.class_skew == 0.0:
        return np.full(spec.num_classes, spec.samples_per_class)
    alpha = np.full(spec.num_classes, 1.0 / spec.class_skew)
    props = rng.dirichlet(alpha)
    # largest-remainder rounding so the counts sum exactly to `total`
    raw = props * total
    counts = np.floor(raw).astype(int)
    remainder = total - int(counts.sum())
    order = np.argsort(raw - counts)[::-1]
    counts[order[:remainder]] += 1
    # every class keeps at least 2 samples (1 train + 1 test); steal from the
    # largest classes to make up the difference
    floor_count = 2 if total >= 2 * spec.num_classes else 1
    while counts.min() < floor_count:
        counts[int(np.argmax(counts))] -= floor_count - counts.min()
        counts[int(np.argmin(counts))] = floor_count
    return counts


def generate_benchmark(spec):
    """Generate every domain of the benchmark.

    Returns a list of ``spec.num_domains`` DomainData objects with ids
    "D1".."Dk".  Identical spec (including seed) always yields bitwise
    identical data.
    """
    root = np.random.SeedSequence(spec.seed)
    proto_seed, *domain_seeds = root.spawn(1 + spec.num_domains)
    proto_rng = np.random.default_rng(proto_seed)

    def prototypes(dim):
        raw = proto_rng.standard_normal((spec.num_classes, dim))
        unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        return spec.prototype_scale * unit

    proto_v = prototypes(spec.input_dim_visual)
    proto_a = prototypes(spec.input_dim_audio)

    domains = []
    for d in range(spec.num_domains):
        rng = np.random.default_rng(domain_seeds[d])
        rot_v = _random_rotation(rng, spec.input_dim_visual,
                                 spec.transform_strength)
        rot_a = _random_rotation(rng, spec.input_dim_audio,
                                 spec.transform_strength)
        bias_v = spec.transform_strength * (
            spec.prototype_scale / np.sqrt(spec.input_dim_visual)) * \
            rng.standard_normal(spec.input_dim_visual)
        bias_a = spec.transform_strength * (
            spec.prototype_scale / np.sqrt(spec.input_dim_audio)) * \
            rng.standard_normal(spec.input_dim_audio)
        counts = _class_counts(rng, spec)

        train_parts, test_parts = [], []
        for c in range(spec.num_classes):
            n_c = int(counts[c])
            center_v = rot_v @ proto_v[c] + bias_v
            center_a = rot_a @ proto_a[c] + bias_a
            xv = center_v + spec.noise_sigma * rng.standard_normal(
                (n_c, spec.input_dim_visual))
            xa = center_a + spec.noise_sigma * rng.standard_normal(
                (n_c, spec.input_dim_audio))
            xa = xa * spec.audio_norm_scale
            labels = np.full(n_c, c, dtype=np.int64)
            n_train = max(1, min(n_c - 1,
                                 int(round(spec.train_fraction * n_c))))
            train_parts.append((xv[:n_train], xa[:n_train], labels[:n_train]))
            test_parts.append((xv[n_train:], xa[n_train:], labels[n_train:]))

        def assemble(parts):
            xv = np.concatenate([p[0] for p in parts], axis=0)
            xa = np.concatenate([p[1] for p in parts], axis=0)
            y = np.concatenate([p[2] for p in parts])
            order = rng.permutation(len(y))
            return MultiModalBatch(xv[order], xa[order], y[order],
                                   domain_id=f"D{d + 1}")

        domains.append(DomainData(f"D{d + 1}", assemble(train_parts),
                                  assemble(test_parts)))
    return domains


class DgSplit:
    """Domain-generalization split: labeled source train batches only; the
    target domain contributes nothing but a held-out labeled test batch for
    the final evaluation."""

    def __init__(self, sources, target_test, target_id):
        self.sources = list(sources)
        self.target_test = target_test
        self.target_id = target_id

    def pooled_sources(self):
        return MultiModalBatch.concatenate(self.sources)


class UdaSplit:
    """Adaptation split: one labeled source train batch, the target's train
    batch with labels structurally removed, and the target's labeled test
    batch reserved for the evaluator."""

    def __init__(self, source, target_train, target_test):
        if target_train.labeled:
            raise ConfigurationError(
                "the unlabeled target train batch must carry no labels")
        self.source = source
        self.target_train = target_train
        self.target_test = target_test


def make_dg_split(domains, target_index):
    """Hold out domain ``target_index``; every other domain is a labeled
    source.  No part of the target (including its train split) is exposed
    to training."""
    if len(domains) < 2:
        raise ConfigurationError("need at least 2 domains for a DG split")
    if not 0 <= target_index < len(domains):
        raise ConfigurationError(f"target index {target_index} out of range")
    sources = [d.train for i, d in enumerate(domains) if i != target_index]
    target = domains[target_index]
    return DgSplit(sources, target.test, target.domain_id)


def make_uda_split(domains, source_index, target_index):
    """One labeled source plus the unlabeled train split of the target."""
    if source_index == target_index:
        raise ConfigurationError("source and target domains must differ")
    for idx in (source_index, target_index):
        if not 0 <= idx < len(domains):
            raise ConfigurationError(f"domain index {idx} out of range")
    source = domains[source_index].train
    target = domains[target_index]
    return UdaSplit(source, target.train.without_labels(), target.test)


def save_feature_file(batch, path):
    """Write a MultiModalBatch as an RNAFEAT v1 text file (lossless floats)."""
    lines = [f"RNAFEAT v1 {batch.n} {batch.visual.shape[1]} "
             f"{batch.audio.shape[1]} {1 if batch.labeled else 0}"]
    for i in range(batch.n):
        fields = [repr(float(x)) for x in batch.visual[i]]
        fields += [repr(float(x)) for x in batch.audio[i]]
        if batch.labeled:
            fields.append(str(int(batch.labels[i])))
        lines.append(" ".join(fields))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_feature_file(path, domain_id=None):
    """Parse an RNAFEAT v1 file back into a MultiModalBatch.

    Raises ParseError (naming the offending line) on malformed headers, wrong
    per-line field counts (broken visual/audio pairing), non-finite values,
    truncation, or trailing garbage.
    """
    with open(path, "r", encoding="ascii") as fh:
        raw_lines = fh.read().split("\n")
    if raw_lines and raw_lines[-1] == "":
        raw_lines.pop()
    if not raw_lines:
        raise ParseError(f"{path}: line 1: empty file")
    header = raw_lines[0].split()
    if len(header) != 6 or header[0] != "RNAFEAT" or header[1] != "v1":
        raise ParseError(
            f"{path}: line 1: expected header 'RNAFEAT v1 N Dv Da labeled'")
    try:
        n, dim_v, dim_a, labeled_flag = (int(header[2]), int(header[3]),
                                         int(header[4]), int(header[5]))
    except ValueError as exc:
        raise ParseError(f"{path}: line 1: non-integer header field") from exc
    if n < 1 or dim_v < 1 or dim_a < 1 or labeled_flag not in (0, 1):
        raise ParseError(f"{path}: line 1: invalid header values")
    if len(raw_lines) - 1 < n:
        raise ParseError(
            f"{path}: truncated: header promises {n} rows, "
            f"found {len(raw_lines) - 1}")
    if len(raw_lines) - 1 > n:
        raise ParseError(
            f"{path}: line {n + 2}: trailing data beyond the {n} "
            f"declared rows")
    labeled = labeled_flag == 1
    expected = dim_v + dim_a + (1 if labeled else 0)
    visual = np.empty((n, dim_v), dtype=np.float64)
    audio = np.empty((n, dim_a), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64) if labeled else None
    for i in range(n):
        lineno = i + 2
        fields = raw_lines[i + 1].split()
        if len(fields) != expected:
            raise ParseError(
                f"{path}: line {lineno}: expected {expected} fields "
                f"({dim_v} visual + {dim_a} audio"
                f"{' + 1 label' if labeled else ''}), got {len(fields)} — "
                f"visual/audio pairing broken")
        try:
            row = [float(x) for x in fields[:dim_v + dim_a]]
        except ValueError as exc:
            raise ParseError(
                f"{path}: line {lineno}: non-numeric value") from exc
        if not all(np.isfinite(row)):
            raise ParseError(f"{path}: line {lineno}: non-finite value")
        visual[i] = row[:dim_v]
        audio[i] = row[dim_v:]
        if labeled:
            try:
                labels[i] = int(fields[-1])
            except ValueError as exc:
                raise ParseError(
                    f"{path}: line {lineno}: non-integer label") from exc
    if domain_id is None:
        name = str(path)
        stem = name[name.rfind("/") + 1:]
        domain_id = stem.split(".")[0]
    return MultiModalBatch(visual, audio, labels, domain_id)
