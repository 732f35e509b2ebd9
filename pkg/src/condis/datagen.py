"""Synthetic dataset generation and MNIST ingestion.

Provides correlated binary attribute samplers, the linear-Gaussian toy
observation model, exact-correlation subsampling, contiguous occlusion
masks, IDX file parsing, paired-digit batch assembly, and label masking
for weak supervision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    EmptyPool,
    Infeasible,
    InfeasibleCorrelation,
    MissingData,
    TruncatedPayload,
)
from ._validation import as_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# phi coefficient tolerance for exact-correlation subsampling
PHI_TOL = 1e-3


@dataclass(frozen=True)
class AttributeTable:
    """Binary source attributes with a per-entry label-observed mask."""

    s: np.ndarray
    label_mask: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        mask = np.asarray(self.label_mask, dtype=bool)
        if s.ndim != 2:
            raise ValueError(f"attribute matrix must be 2-d, got ndim={s.ndim}")
        if mask.shape != s.shape:
            raise ValueError(
                f"label mask shape {mask.shape} does not match attributes {s.shape}"
            )
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "label_mask", mask)

    @property
    def n(self):
        return self.s.shape[0]

    @property
    def K(self):
        return self.s.shape[1]


def full_mask_table(s):
    """Attribute table with every label observed."""
    s = np.asarray(s, dtype=float)
    return AttributeTable(s=s, label_mask=np.ones(s.shape, dtype=bool))


@dataclass(frozen=True)
class ToyDataset:
    """Observations x = A s + noise together with their attributes."""

    x: np.ndarray
    attrs: AttributeTable
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.shape[0] != self.attrs.n:
            raise ValueError(
                f"observation count {x.shape[0]} does not match attributes {self.attrs.n}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("observations contain non-finite values")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class OcclusionParams:
    """Contiguous-occlusion generator settings.

    level is the target fraction of occluded pixels, grid the lattice
    resolution of the smooth value noise, fill_value the gray intensity
    painted into masked pixels.
    """

    level: float
    grid: int = 4
    fill_value: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"level must be in [0, 1], got {self.level}")
        if not 0.0 <= self.fill_value <= 1.0:
            raise ValueError(f"fill_value must be in [0, 1], got {self.fill_value}")
        if self.grid < 2:
            raise ValueError(f"grid must be at least 2, got {self.grid}")


@dataclass(frozen=True)
class DigitPairBatch:
    """Horizontally concatenated digit pairs with per-side class labels.

    Labels use 0 for digit 3 and 1 for digit 8.
    """

    images: np.ndarray
    left_labels: np.ndarray
    right_labels: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        left = np.asarray(self.left_labels)
        right = np.asarray(self.right_labels)
        if images.ndim != 3:
            raise ValueError("images must be batch x height x width")
        if len(left) != images.shape[0] or len(right) != images.shape[0]:
            raise ValueError("label arrays must match the batch size")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "left_labels", left)
        object.__setattr__(self, "right_labels", right)


def sample_correlated_attributes(K, rho, n, rng):
    """Sample n rows of K binary +-1 attributes with pairwise correlation rho.

    K = 2 uses exact pair sampling with P(s1 = s2) = (1 + rho) / 2. For
    K > 2 a common-cause mixture is used: with probability q = sqrt(rho)
    an attribute copies a shared uniform bit, otherwise it is drawn
    independently, giving every pairwise correlation rho in expectation.
    Negative rho is infeasible in the mixture construction.
    """
    if K < 2:
        raise ValueError(f"need at least two attributes, got K={K}")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must be in [-1, 1], got {rho}")
    rng = as_rng(rng)
    if K == 2:
        s1 = rng.integers(0, 2, size=n) * 2.0 - 1.0
        agree = rng.random(n) < (1.0 + rho) / 2.0
        s2 = np.where(agree, s1, -s1)
        s = np.column_stack([s1, s2])
    else:
        if rho < 0.0:
            raise InfeasibleCorrelation(
                f"negative equicorrelation rho={rho} is not achievable for K={K}"
            )
        q = np.sqrt(rho)
        shared = rng.integers(0, 2, size=n) * 2.0 - 1.0
        independent = rng.integers(0, 2, size=(n, K)) * 2.0 - 1.0
        copies = rng.random((n, K)) < q
        s = np.where(copies, shared[:, None], independent)
    return full_mask_table(s)


def toy_observations(attrs, A, sigma, rng):
    """Observe x = A s + n with isotropic Gaussian noise of variance sigma^2."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != attrs.K:
        raise ValueError(
            f"mixing matrix shape {A.shape} incompatible with K={attrs.K}"
        )
    if sigma < 0:
        raise ValueError(f"noise scale must be nonnegative, got {sigma}")
    rng = as_rng(rng)
    x = attrs.s @ A.T
    if sigma > 0:
        x = x + sigma * rng.standard_normal(x.shape)
    return ToyDataset(x=x, attrs=attrs, provenance={"A": A, "sigma": float(sigma)})


def _binary_cell_index(column):
    """Map a binary column to {0, 1} cell coordinates."""
    values = np.unique(column)
    if len(values) > 2:
        raise ValueError("attribute is not binary")
    return (column == values[-1]).astype(int)


def phi_coefficient(cells):
    """Phi coefficient of a 2x2 contingency table given as (n00, n01, n10, n11)."""
    n00, n01, n10, n11 = (float(c) for c in cells)
    denom = (n00 + n01) * (n10 + n11) * (n00 + n10) * (n01 + n11)
    if denom == 0:
        return 0.0
    return (n00 * n11 - n01 * n10) / np.sqrt(denom)


def subsample_to_correlation(attrs, rho_target, rng=0):
    """Largest equal-marginal subset whose phi coefficient hits rho_target.

    Counts the four cells of the 2x2 table over the two binary attributes
    and solves a small integer program over subsets that keep the two
    diagonal cells equal (t each) and the two off-diagonal cells equal
    (u each), so phi reduces to (t - u) / (t + u). The largest (t, u)
    with |phi - rho_target| <= 1e-3 wins; rows within each cell are
    chosen uniformly via the provided rng. If the full table already
    satisfies the target, every row is returned.
    """
    if attrs.K != 2:
        raise ValueError(f"subsampling requires exactly two attributes, got K={attrs.K}")
    rng = as_rng(rng)
    a = _binary_cell_index(attrs.s[:, 0])
    b = _binary_cell_index(attrs.s[:, 1])
    cell_of = 2 * a + b
    counts = np.bincount(cell_of, minlength=4)

    if abs(phi_coefficient(counts) - rho_target) <= PHI_TOL:
        return np.arange(attrs.n)

    diag_cap = int(min(counts[0], counts[3]))
    off_cap = int(min(counts[1], counts[2]))
    r_lo, r_hi = rho_target - PHI_TOL, rho_target + PHI_TOL
    best_t, best_u, best_size = 0, 0, 0
    # u = 0 keeps only diagonal pairs, so phi is exactly 1
    if r_hi >= 1.0 and diag_cap >= 1:
        best_t, best_u, best_size = diag_cap, 0, 2 * diag_cap
    if off_cap >= 1 and r_lo < 1.0:
        # for fixed u, phi = (t - u) / (t + u) is increasing in t, so the
        # feasible t form an interval with closed-form endpoints
        u = np.arange(1, off_cap + 1, dtype=float)
        if r_lo > -1.0:
            t_lo = np.maximum(np.ceil(u * (1 + r_lo) / (1 - r_lo)), 0.0)
        else:
            t_lo = np.zeros_like(u)
        if r_hi >= 1.0:
            t_hi = np.full(u.shape, float(diag_cap))
        else:
            t_hi = np.minimum(np.floor(u * (1 + r_hi) / (1 - r_hi)), diag_cap)
        feasible = t_hi >= t_lo
        if feasible.any():
            sizes = np.where(feasible, 2 * (t_hi + u), 0.0)
            i = int(np.argmax(sizes))
            if sizes[i] > best_size:
                best_t, best_u, best_size = int(t_hi[i]), int(u[i]), int(sizes[i])
    if best_size == 0:
        raise Infeasible(
            f"no nonzero equal-marginal subset reaches phi={rho_target} "
            f"from cells {tuple(int(c) for c in counts)}"
        )

    keep = []
    for cell, quota in zip(range(4), (best_t, best_u, best_u, best_t)):
        rows = np.flatnonzero(cell_of == cell)
        order = rng.permutation(len(rows))
        keep.append(rows[order[:quota]])
    return np.sort(np.concatenate(keep))


def _bilinear_lattice(values, h, w):
    """Bilinearly interpolate a grid of lattice values onto an h x w field."""
    g = values.shape[-1]
    ys = np.linspace(0.0, g - 1.0, h)
    xs = np.linspace(0.0, g - 1.0, w)
    y0 = np.minimum(ys.astype(int), g - 2)
    x0 = np.minimum(xs.astype(int), g - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = values[..., y0[:, None], x0[None, :]]
    v01 = values[..., y0[:, None], x0[None, :] + 1]
    v10 = values[..., y0[:, None] + 1, x0[None, :]]
    v11 = values[..., y0[:, None] + 1, x0[None, :] + 1]
    return (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )


def occlusion_masks(count, h, w, params, rng):
    """Batch of contiguous boolean masks, each with an exact pixel budget."""
    rng = as_rng(rng)
    k = int(np.rint(params.level * h * w))
    lattice = rng.random((count, params.grid, params.grid))
    masks = np.zeros((count, h * w), dtype=bool)
    if k > 0:
        noise = _bilinear_lattice(lattice, h, w).reshape(count, h * w)
        top = np.argpartition(noise, h * w - k, axis=1)[:, h * w - k :]
        np.put_along_axis(masks, top, True, axis=1)
    return masks.reshape(count, h, w)


def occlusion_mask(h, w, params, rng):
    """Single contiguous boolean mask with exactly round(level * h * w) pixels."""
    return occlusion_masks(1, h, w, params, rng)[0]


def parse_idx(data):
    """Decode an IDX byte blob into a u8 image tensor or label vector."""
    if len(data) < 4:
        raise TruncatedPayload(f"blob of {len(data)} bytes has no complete header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_IMAGE_MAGIC:
        ndim = 3
    elif magic == IDX_LABEL_MAGIC:
        ndim = 1
    else:
        raise BadMagic(f"unrecognized IDX magic 0x{magic:08X}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedPayload(
            f"header needs {header} bytes, blob has only {len(data)}"
        )
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims))
    payload = data[header:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"declared {expected} payload bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(array):
    """Encode a u8 array as IDX bytes, inverse of parse_idx."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim == 3:
        magic = IDX_IMAGE_MAGIC
    elif array.ndim == 1:
        magic = IDX_LABEL_MAGIC
    else:
        raise ValueError(f"IDX supports 1-d labels or 3-d images, got ndim={array.ndim}")
    header = struct.pack(f">{1 + array.ndim}I", magic, *array.shape)
    return header + array.tobytes()


def read_idx_file(path):
    path = Path(path)
    if not path.exists():
        raise MissingData(f"expected IDX file at {path}")
    return parse_idx(path.read_bytes())


def resize_bilinear(images, out_h, out_w):
    """Bilinear resize with half-pixel centers over the trailing two axes."""
    images = np.asarray(images, dtype=float)
    h, w = images.shape[-2:]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.minimum(ys.astype(int), h - 2)
    x0 = np.minimum(xs.astype(int), w - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    v00 = images[..., y0[:, None], x0[None, :]]
    v01 = images[..., y0[:, None], x0[None, :] + 1]
    v10 = images[..., y0[:, None] + 1, x0[None, :]]
    v11 = images[..., y0[:, None] + 1, x0[None, :] + 1]
    return (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )


def _as_unit_pool(pool):
    pool = np.asarray(pool)
    if len(pool) == 0:
        raise EmptyPool("digit pool is empty")
    pool = pool.astype(float)
    if pool.size and pool.max() > 1.0:
        pool = pool / 255.0
    return pool


def make_pair_batch(pool_3, pool_8, rho, occlusion, batch, rng):
    """Assemble a batch of occluded left-right digit pairs.

    Per example: the left-right combination is drawn so P(match) is
    (1 + rho) / 2 and uniform within the match and mismatch groups;
    an instance is drawn uniformly from each side's pool; each side is
    resized to 32x32 and occluded independently with gray fill; the two
    halves are concatenated into a 32x64 image.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must be in [-1, 1], got {rho}")
    rng = as_rng(rng)
    pools = [_as_unit_pool(pool_3), _as_unit_pool(pool_8)]

    match = rng.random(batch) < (1.0 + rho) / 2.0
    left = rng.integers(0, 2, size=batch)
    right = np.where(match, left, 1 - left)
    u_left = rng.random(batch)
    u_right = rng.random(batch)

    halves = []
    for labels, u in ((left, u_left), (right, u_right)):
        imgs = np.empty((batch, 28, 28))
        for digit in (0, 1):
            rows = labels == digit
            idx = (u[rows] * len(pools[digit])).astype(int)
            imgs[rows] = pools[digit][idx]
        resized = resize_bilinear(imgs, 32, 32)
        masks = occlusion_masks(batch, 32, 32, occlusion, rng)
        resized[masks] = occlusion.fill_value
        halves.append(np.clip(resized, 0.0, 1.0))

    images = np.concatenate(halves, axis=2)
    return DigitPairBatch(images=images, left_labels=left, right_labels=right)


def mask_labels(attrs, fraction, rng):
    """Retain labels on a uniform round(fraction * n) rows per attribute."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = as_rng(rng)
    keep = int(np.rint(fraction * attrs.n))
    mask = np.zeros(attrs.label_mask.shape, dtype=bool)
    for k in range(attrs.K):
        rows = rng.permutation(attrs.n)[:keep]
        mask[rows, k] = True
    return AttributeTable(s=attrs.s, label_mask=attrs.label_mask & mask)


@dataclass(frozen=True)
class MnistSplits:
    """Train/validation/test images and labels, u8 throughout."""

    train_images: np.ndarray
    train_labels: np.ndarray
    val_images: np.ndarray
    val_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


def mnist_paths(data_root):
    root = Path(data_root) / "mnist"
    return {
        "train_images": root / "train-images.idx",
        "train_labels": root / "train-labels.idx",
        "test_images": root / "test-images.idx",
        "test_labels": root / "test-labels.idx",
    }


def load_mnist_splits(data_root):
    """Load the IDX cache and hold out the last sixth of train as validation.

    On the canonical 60k-row train file this yields the 50k/10k/10k
    train/validation/test split.
    """
    paths = mnist_paths(data_root)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise MissingData("missing IDX files: " + ", ".join(missing))
    train_images = read_idx_file(paths["train_images"])
    train_labels = read_idx_file(paths["train_labels"])
    test_images = read_idx_file(paths["test_images"])
    test_labels = read_idx_file(paths["test_labels"])
    if len(train_images) != len(train_labels) or len(test_images) != len(test_labels):
        raise TruncatedPayload("image and label counts disagree")
    n_val = len(train_images) // 6
    cut = len(train_images) - n_val
    return MnistSplits(
        train_images=train_images[:cut],
        train_labels=train_labels[:cut],
        val_images=train_images[cut:],
        val_labels=train_labels[cut:],
        test_images=test_images,
        test_labels=test_labels,
    )


def digit_pools(images, labels, digits=(3, 8)):
    """Restrict an image set to the given digit classes, keyed by digit."""
    labels = np.asarray(labels)
    return {d: np.asarray(images)[labels == d] for d in digits}
