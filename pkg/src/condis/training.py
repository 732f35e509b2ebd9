"""Adversarial subspace training.

Three objectives share one loop. Base trains an encoder plus per-attribute
classification heads on subspaces of the latent code. BaseMI adds an
adversarial penalty driving the latent subspaces toward mutual
independence, using a discriminator that tells joint latent batches from
batchwise-shuffled ones. BaseCMI conditions that penalty on each
attribute: within every group of rows sharing an attribute value, the
complementary subspaces are shuffled jointly, so only the conditional
dependence between z_k and z_{-k} is penalized.

Discriminator convention throughout: positive logit means "joint".
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import runio
from .datagen import ToyDataset
from .errors import LayoutMismatch, NonFiniteLoss, SchemaMismatch
from .nn import (
    AdamState,
    MlpSpec,
    ParamStore,
    adam_step,
    cross_entropy_logits,
    init_mlp,
    load_checkpoint,
    log_one_minus_sigmoid_mean,
    log_sigmoid_mean,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
)
from ._validation import as_rng

OBJECTIVES = ("Base", "BaseMI", "BaseCMI")


@dataclass(frozen=True)
class SubspaceLayout:
    """Partition of a D-dimensional latent space into K contiguous blocks."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"subspace widths must all be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def K(self):
        return len(self.dims)

    @property
    def D(self):
        return sum(self.dims)

    @property
    def slices(self):
        edges = np.concatenate([[0], np.cumsum(self.dims)])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def even_layout(K, D):
    """K equal-width subspaces covering D dimensions."""
    if D % K:
        raise ValueError(f"latent dim {D} not divisible into {K} equal subspaces")
    return SubspaceLayout(dims=(D // K,) * K)


@dataclass(frozen=True)
class TrainConfig:
    objective: str
    layout: SubspaceLayout
    input_dim: int
    latent_dim: int
    n_classes: int = 2
    lr_encoder: float = 1e-3
    lr_classifiers: float = 1e-3
    lr_discriminator: float = 1e-3
    adversarial_weight: float = 1.0
    pack_size: int = 1
    inner_classifier_steps: int = 1
    epochs: int = 1
    batch: int = 128
    seed: int = 0
    encoder_hidden: tuple = ()
    classifier_hidden: tuple = ()
    disc_hidden: tuple = (64, 64)
    steps_per_epoch: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.layout.D != self.latent_dim:
            raise LayoutMismatch(
                f"layout covers {self.layout.D} dims, latent_dim is {self.latent_dim}"
            )
        for name in ("lr_encoder", "lr_classifiers", "lr_discriminator"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.adversarial_weight < 0:
            raise ValueError("adversarial_weight must be nonnegative")
        if self.pack_size < 1 or self.inner_classifier_steps < 1:
            raise ValueError("pack_size and inner_classifier_steps must be >= 1")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")
        if self.objective != "Base" and self.batch < self.pack_size:
            raise ValueError(
                f"batch {self.batch} smaller than pack_size {self.pack_size}: "
                "no adversarial input could ever be assembled"
            )

    def to_dict(self):
        return asdict(self)

    def hash(self):
        return runio.config_hash(self.to_dict())


class LabeledBatch(NamedTuple):
    x: np.ndarray
    labels: np.ndarray
    mask: np.ndarray


def batch_from_attrs(x, attrs):
    """Convert +-1 attribute rows to class indices alongside observations."""
    labels = (attrs.s > 0).astype(int)
    return LabeledBatch(x=np.asarray(x, dtype=float), labels=labels, mask=attrs.label_mask)


def split_subspaces(z, layout):
    """Contiguous column blocks in declared order; concatenation inverts."""
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] != layout.D:
        raise LayoutMismatch(
            f"latent batch has {z.shape[-1] if z.ndim == 2 else '?'} columns, "
            f"layout needs {layout.D}"
        )
    return [z[:, sl] for sl in layout.slices]


def concat_subspaces(blocks):
    return np.concatenate(blocks, axis=1)


def shuffle_marginals(subspaces, rng):
    """Permute each subspace's rows independently, breaking cross-subspace ties."""
    rng = as_rng(rng)
    sizes = {len(b) for b in subspaces}
    if len(sizes) != 1:
        raise ValueError(f"subspaces disagree on batch size: {sorted(sizes)}")
    return [b[rng.permutation(len(b))] for b in subspaces]


def _conditional_permutation(values, rng):
    """One permutation moving rows only within groups of equal value."""
    values = np.asarray(values)
    perm = np.arange(len(values))
    for v in np.unique(values):
        rows = np.flatnonzero(values == v)
        perm[rows] = rows[rng.permutation(len(rows))]
    return perm


def conditional_shuffle(subspaces, s_k, k, rng):
    """Jointly permute all blocks except k within each attribute-value group.

    All complementary blocks move under one shared permutation, so their
    mutual alignment is preserved; only their pairing with z_k is broken,
    and only within rows sharing the same attribute value.
    """
    rng = as_rng(rng)
    if not 0 <= k < len(subspaces):
        raise LayoutMismatch(f"attribute index {k} outside 0..{len(subspaces) - 1}")
    if len(s_k) != len(subspaces[0]):
        raise ValueError("attribute values must cover every row")
    perm = _conditional_permutation(s_k, rng)
    return [b if j == k else b[perm] for j, b in enumerate(subspaces)]


@dataclass
class Models:
    """Parameter bundle: encoder, per-attribute heads, optional discriminator."""

    encoder_spec: MlpSpec
    encoder: ParamStore
    encoder_opt: AdamState
    classifier_specs: tuple
    classifiers: tuple
    classifier_opts: tuple
    disc_spec: MlpSpec = None
    discriminator: ParamStore = None
    disc_opt: AdamState = None


def _disc_input_dim(config):
    width = config.pack_size * config.latent_dim
    if config.objective == "BaseCMI":
        width += config.layout.K + config.n_classes
    return width


def init_models(config, rng):
    rng = as_rng(rng)
    encoder_spec = MlpSpec(config.input_dim, tuple(config.encoder_hidden), config.latent_dim)
    encoder = init_mlp(encoder_spec, rng)
    classifier_specs = tuple(
        MlpSpec(d, tuple(config.classifier_hidden), config.n_classes)
        for d in config.layout.dims
    )
    classifiers = tuple(init_mlp(spec, rng) for spec in classifier_specs)
    models = Models(
        encoder_spec=encoder_spec,
        encoder=encoder,
        encoder_opt=AdamState(lr=config.lr_encoder),
        classifier_specs=classifier_specs,
        classifiers=classifiers,
        classifier_opts=tuple(AdamState(lr=config.lr_classifiers) for _ in classifiers),
    )
    if config.objective != "Base":
        models.disc_spec = MlpSpec(_disc_input_dim(config), tuple(config.disc_hidden), 1)
        models.discriminator = init_mlp(models.disc_spec, rng)
        models.disc_opt = AdamState(lr=config.lr_discriminator)
    return models


def encode(models, x):
    z, _ = mlp_forward(models.encoder_spec, models.encoder, np.asarray(x, dtype=float))
    return z


def models_layout(models):
    """Recover the subspace layout from the classifier input widths."""
    return SubspaceLayout(tuple(spec.input_dim for spec in models.classifier_specs))


def predict(models, x):
    """Hard labels per attribute, shape (n, K), via argmax over each head."""
    z = encode(models, x)
    layout = models_layout(models)
    cols = []
    for k, sl in enumerate(layout.slices):
        logits, _ = mlp_forward(models.classifier_specs[k], models.classifiers[k], z[:, sl])
        cols.append(np.argmax(logits, axis=1))
    return np.stack(cols, axis=1)


def named_arrays(models):
    """Flatten every parameter into a checkpointable name -> array mapping."""
    out = {}
    for name in models.encoder.names():
        out[f"encoder/{name}"] = models.encoder.params[name]
    for k, clf in enumerate(models.classifiers):
        for name in clf.names():
            out[f"classifier{k}/{name}"] = clf.params[name]
    if models.discriminator is not None:
        for name in models.discriminator.names():
            out[f"discriminator/{name}"] = models.discriminator.params[name]
    return out


def restore_models(config, arrays, rng=0):
    """Rebuild a Models bundle from checkpoint arrays."""
    models = init_models(config, as_rng(rng))
    for key, value in named_arrays(models).items():
        if key not in arrays:
            raise KeyError(f"checkpoint lacks parameter {key}")
        if arrays[key].shape != value.shape:
            raise LayoutMismatch(
                f"checkpoint parameter {key} has shape {arrays[key].shape}, "
                f"model expects {value.shape}"
            )
    for store, prefix in _stores_with_prefixes(models):
        for name in store.names():
            store.params[name] = arrays[f"{prefix}/{name}"].astype(float).copy()
    return models


def _stores_with_prefixes(models):
    pairs = [(models.encoder, "encoder")]
    pairs += [(clf, f"classifier{k}") for k, clf in enumerate(models.classifiers)]
    if models.discriminator is not None:
        pairs.append((models.discriminator, "discriminator"))
    return pairs


CONFIG_JSON_KEY = "__config_json__"


def config_from_dict(d):
    d = dict(d)
    d["layout"] = SubspaceLayout(tuple(d["layout"]["dims"]))
    for name in ("encoder_hidden", "classifier_hidden", "disc_hidden"):
        d[name] = tuple(d[name])
    return TrainConfig(**d)


def save_models(path, models, config):
    """Checkpoint parameters together with the full config, so the bundle
    can be rebuilt from the file alone."""
    arrays = dict(named_arrays(models))
    arrays[CONFIG_JSON_KEY] = np.array(runio.canonical_json(config.to_dict()))
    save_checkpoint(path, arrays, config.hash())


def load_models(path):
    """Rebuild (models, config) from a self-describing checkpoint."""
    arrays, config_hash = load_checkpoint(path)
    blob = arrays.pop(CONFIG_JSON_KEY, None)
    if blob is None:
        raise SchemaMismatch("checkpoint has no config entry")
    config = config_from_dict(json.loads(str(blob)))
    if config.hash() != config_hash:
        raise SchemaMismatch(
            f"checkpoint config hash {config_hash} does not match its config entry"
        )
    return restore_models(config, arrays), config


class _AdvSamples(NamedTuple):
    """Pack-aligned adversarial inputs plus source-row bookkeeping.

    joint and shuffled are (n_used, D) sample matrices whose rows never
    straddle conditioning groups when reshaped into packs. src arrays map
    each sample row of each block back to its source row in the latent
    batch, which is what routes gradients through the shuffle.
    """

    joint: np.ndarray
    shuffled: np.ndarray
    joint_src: np.ndarray
    shuf_src: list
    cond: np.ndarray


def _gather_blocks(z, src_per_block, layout):
    out = np.empty((len(src_per_block[0]), z.shape[1]))
    for sl, src in zip(layout.slices, src_per_block):
        out[:, sl] = z[src, sl]
    return out


def _scatter_blocks(dz, g, src_per_block, layout):
    for sl, src in zip(layout.slices, src_per_block):
        cols = np.arange(sl.start, sl.stop)
        np.add.at(dz, (src[:, None], cols[None, :]), g[:, sl])


def _mi_adv_samples(z, layout, m, rng):
    n = len(z)
    t = (n // m) * m
    joint_src = np.arange(t)
    shuf_src = [rng.permutation(n)[:t] for _ in layout.dims]
    return _AdvSamples(
        joint=z[joint_src],
        shuffled=_gather_blocks(z, shuf_src, layout),
        joint_src=joint_src,
        shuf_src=shuf_src,
        cond=None,
    )


def _cmi_adv_samples(z, labels_k, mask_k, layout, k, config, rng):
    """Conditioned pack inputs for attribute k; unlabeled rows are excluded."""
    joint_parts, shuf_parts, cond_parts = [], [], []
    labeled = np.flatnonzero(mask_k)
    m = config.pack_size
    for v in np.unique(labels_k[labeled]):
        rows = labeled[labels_k[labeled] == v]
        partner = rows[rng.permutation(len(rows))]
        t = (len(rows) // m) * m
        if t == 0:
            continue
        joint_parts.append(rows[:t])
        shuf_parts.append([rows[:t] if j == k else partner[:t] for j in range(layout.K)])
        onehot = np.zeros(layout.K + config.n_classes)
        onehot[k] = 1.0
        onehot[layout.K + int(v)] = 1.0
        cond_parts.append(np.tile(onehot, (t // m, 1)))
    if not joint_parts:
        return None
    joint_src = np.concatenate(joint_parts)
    shuf_src = [np.concatenate([p[j] for p in shuf_parts]) for j in range(layout.K)]
    return _AdvSamples(
        joint=z[joint_src],
        shuffled=_gather_blocks(z, shuf_src, layout),
        joint_src=joint_src,
        shuf_src=shuf_src,
        cond=np.concatenate(cond_parts),
    )


def _pack(samples, cond, m):
    n_used, d = samples.shape
    packed = samples.reshape(n_used // m, m * d)
    if cond is not None:
        packed = np.concatenate([packed, cond], axis=1)
    return packed


def _unpack_grad(g_packed, n_used, d, m):
    return g_packed[:, : m * d].reshape(n_used, d)


def _adv_sample_sets(objective, z, batch, layout, config, rng):
    if objective == "BaseMI":
        sets = [_mi_adv_samples(z, layout, config.pack_size, rng)]
    else:
        sets = [
            _cmi_adv_samples(z, batch.labels[:, k], batch.mask[:, k], layout, k, config, rng)
            for k in range(layout.K)
        ]
    return [s for s in sets if s is not None and len(s.joint)]


def _classification_pass(z, batch, models, layout, accumulate_dz=None, update=False):
    """Per-attribute head losses on labeled rows.

    With accumulate_dz, head gradients are propagated into the latent
    batch. With update, each head takes one Adam step instead.
    """
    losses = []
    for k, sl in enumerate(layout.slices):
        rows = np.flatnonzero(batch.mask[:, k])
        if len(rows) == 0:
            losses.append(0.0)
            continue
        spec, store = models.classifier_specs[k], models.classifiers[k]
        logits, cache = mlp_forward(spec, store, z[rows][:, sl])
        loss, dlogits = cross_entropy_logits(logits, batch.labels[rows, k])
        losses.append(float(loss))
        store.zero_grad()
        dz_rows = mlp_backward(spec, store, cache, dlogits)
        if accumulate_dz is not None:
            cols = np.arange(sl.start, sl.stop)
            np.add.at(accumulate_dz, (rows[:, None], cols[None, :]), dz_rows)
        if update:
            adam_step(models.classifier_opts[k], store)
    return losses


def _encoder_loss_and_grads(objective, batch, models, config, rng):
    """Assemble the encoder objective and leave its gradients in the
    encoder's store. Returns (total, per-attribute cls losses, adv value)."""
    layout = config.layout
    z, enc_cache = mlp_forward(models.encoder_spec, models.encoder, batch.x)
    dz = np.zeros_like(z)

    cls_losses = _classification_pass(z, batch, models, layout, accumulate_dz=dz)

    adv_loss = 0.0
    lam = config.adversarial_weight
    if objective != "Base" and lam != 0.0:
        for s in _adv_sample_sets(objective, z, batch, layout, config, rng):
            m, d = config.pack_size, z.shape[1]
            for samples, src, term_fn in (
                (s.shuffled, s.shuf_src, log_one_minus_sigmoid_mean),
                (s.joint, [s.joint_src] * layout.K, log_sigmoid_mean),
            ):
                packed = _pack(samples, s.cond, m)
                logits, cache = mlp_forward(models.disc_spec, models.discriminator, packed)
                value, dlogits = term_fn(logits[:, 0])
                adv_loss += float(value)
                din = mlp_backward(
                    models.disc_spec, models.discriminator, cache,
                    lam * dlogits[:, None],
                )
                _scatter_blocks(dz, _unpack_grad(din, len(samples), d, m), src, layout)
        models.discriminator.zero_grad()

    total = float(np.sum(cls_losses)) + lam * adv_loss
    if not np.isfinite(total):
        raise NonFiniteLoss(
            f"encoder loss diverged: classification={cls_losses}, adversarial={adv_loss}"
        )

    models.encoder.zero_grad()
    mlp_backward(models.encoder_spec, models.encoder, enc_cache, dz)
    return total, cls_losses, adv_loss


def encoder_step(objective, batch, models, config, rng):
    """One encoder update followed by the configured classifier updates.

    The loss is the summed per-attribute cross entropy, plus, for the
    adversarial objectives, adversarial_weight times the fooling term
    log(1 - D(shuffled)) + log D(joint) per attribute. Discriminator
    parameters are left untouched.
    """
    rng = as_rng(rng)
    total, cls_losses, adv_loss = _encoder_loss_and_grads(
        objective, batch, models, config, rng
    )
    adam_step(models.encoder_opt, models.encoder)

    z_new, _ = mlp_forward(models.encoder_spec, models.encoder, batch.x)
    for _ in range(config.inner_classifier_steps):
        _classification_pass(z_new, batch, models, config.layout, update=True)

    return {
        "cls_loss": [float(v) for v in cls_losses],
        "adv_loss": float(adv_loss),
        "loss": total,
    }


def discriminator_step(objective, batch, models, config, rng):
    """One discriminator update: joint packs toward positive logits,
    shuffled packs toward negative, via the binary cross entropy
    -log D(joint) - log(1 - D(shuffled)). Encoder and heads are left
    untouched."""
    if models.discriminator is None:
        return None
    rng = as_rng(rng)
    layout = config.layout
    z = encode(models, batch.x)

    models.discriminator.zero_grad()
    loss = 0.0
    correct = 0
    total = 0
    for s in _adv_sample_sets(objective, z, batch, layout, config, rng):
        for samples, term_fn, want_positive in (
            (s.shuffled, log_one_minus_sigmoid_mean, False),
            (s.joint, log_sigmoid_mean, True),
        ):
            packed = _pack(samples, s.cond, config.pack_size)
            logits, cache = mlp_forward(models.disc_spec, models.discriminator, packed)
            value, dlogits = term_fn(logits[:, 0])
            loss += -float(value)
            mlp_backward(models.disc_spec, models.discriminator, cache, -dlogits[:, None])
            hits = (logits[:, 0] > 0) if want_positive else (logits[:, 0] < 0)
            correct += int(hits.sum())
            total += len(logits)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"discriminator loss diverged: {loss}")
    if total:
        adam_step(models.disc_opt, models.discriminator)
    return {
        "disc_loss": float(loss),
        "disc_acc": (correct / total) if total else 0.5,
    }


def discriminator_accuracy(objective, batch, models, config, rng):
    """Held-out joint-vs-shuffled accuracy; no parameters are touched."""
    if models.discriminator is None:
        return 0.5
    rng = as_rng(rng)
    z = encode(models, batch.x)
    correct = 0
    total = 0
    for s in _adv_sample_sets(objective, z, batch, config.layout, config, rng):
        for samples, want_positive in ((s.shuffled, False), (s.joint, True)):
            packed = _pack(samples, s.cond, config.pack_size)
            logits, _ = mlp_forward(models.disc_spec, models.discriminator, packed)
            hits = (logits[:, 0] > 0) if want_positive else (logits[:, 0] < 0)
            correct += int(hits.sum())
            total += len(logits)
    return (correct / total) if total else 0.5


@dataclass
class TrainLog:
    seed: int
    config_hash: str
    steps: list = field(default_factory=list)
    wall_time: float = 0.0

    def append(self, step, entry):
        entry = dict(entry)
        entry["step"] = step
        self.steps.append(entry)


def _iter_batches(data, config, rng):
    """Fixed datasets are reshuffled each epoch, remainder rows dropped;
    callables are treated as on-the-fly generators."""
    if callable(data):
        if config.steps_per_epoch < 1:
            raise ValueError("generator data requires steps_per_epoch >= 1")
        for _ in range(config.steps_per_epoch):
            yield data(config.batch, rng)
        return
    if isinstance(data, ToyDataset):
        data = batch_from_attrs(data.x, data.attrs)
    batch = LabeledBatch(*data)
    n = len(batch.x)
    perm = rng.permutation(n)
    for start in range(0, n - config.batch + 1, config.batch):
        rows = perm[start : start + config.batch]
        yield LabeledBatch(batch.x[rows], batch.labels[rows], batch.mask[rows])


def train(data, config):
    """Run the configured objective, alternating discriminator and encoder
    steps one to one. Deterministic given the config seed."""
    t0 = time.perf_counter()
    streams = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, data_rng, enc_rng, disc_rng = (np.random.default_rng(s) for s in streams)
    models = init_models(config, init_rng)
    log = TrainLog(seed=config.seed, config_hash=config.hash())

    step = 0
    for _ in range(config.epochs):
        for batch in _iter_batches(data, config, data_rng):
            entry = {}
            disc_entry = discriminator_step(config.objective, batch, models, config, disc_rng)
            if disc_entry:
                entry.update(disc_entry)
            entry.update(encoder_step(config.objective, batch, models, config, enc_rng))
            log.append(step, entry)
            step += 1
    log.wall_time = time.perf_counter() - t0
    return models, log
