"""Correlation-shift sweeps, subgroup analysis, and disentanglement metrics.

Model-facing ops take a plain ``predict_fn(x) -> (n, K) int labels`` callable
so that trained bundles (:func:`condis.training.predict`), analytic solutions,
and constant baselines all plug into the same machinery.  Metric ops work
directly on arrays of latents and discrete factors.

Conventions fixed here (printed into every report): histogram mutual
information uses 20 equal-width bins per latent dimension by default, and
seed aggregation reports the mean with a 68% confidence half-width (one
standard error).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import COND_LIMIT, as_matrix
from .errors import (
    ArityError,
    DegenerateLatentWarning,
    LabelOutOfRange,
    ShapeMismatch,
    SingularCovariance,
)

DEFAULT_BINS = 20

SWEEP_SCHEMA = "sweep-report.v1"
SUBGROUP_SCHEMA = "subgroup-report.v1"
METRIC_SCHEMA = "metric-report.v1"


def mean_and_ci68(values, axis=-1):
    """Mean and 68% confidence half-width (one standard error) along an axis.

    A single observation has no spread estimate; its half-width is 0.
    """
    v = np.asarray(values, dtype=float)
    m = v.mean(axis=axis)
    if v.shape[axis] < 2:
        return m, np.zeros_like(m)
    return m, v.std(axis=axis, ddof=1) / np.sqrt(v.shape[axis])


# ---------------------------------------------------------------------------
# correlation-shift sweep


@dataclass(frozen=True, eq=False)
class ShiftSweepReport:
    """Per-attribute test accuracy across a grid of test-time correlations.

    ``accuracies`` has shape (n_rhos, n_seeds, K).  ``train_rho`` and
    ``reference_accuracy`` (an uncorrelated-baseline accuracy, when known)
    are carried as metadata for plotting.
    """

    rhos: tuple
    seeds: tuple
    accuracies: np.ndarray
    noise_level: float
    train_rho: float = None
    reference_accuracy: float = None

    def __post_init__(self):
        acc = np.asarray(self.accuracies, dtype=float)
        if acc.shape[:2] != (len(self.rhos), len(self.seeds)):
            raise ShapeMismatch(
                f"accuracies shape {acc.shape} does not match "
                f"{len(self.rhos)} rhos x {len(self.seeds)} seeds"
            )
        if acc.size and (acc.min() < 0.0 or acc.max() > 1.0):
            raise ValueError("accuracies must lie in [0, 1]")
        if any(abs(r) > 1.0 for r in self.rhos):
            raise ValueError("rho grid must lie within [-1, 1]")
        object.__setattr__(self, "accuracies", acc)

    @property
    def per_seed_mean(self):
        """Mean over attributes, shape (n_rhos, n_seeds)."""
        return self.accuracies.mean(axis=2)

    @property
    def mean(self):
        return self.per_seed_mean.mean(axis=1)

    @property
    def ci68(self):
        _, half = mean_and_ci68(self.per_seed_mean, axis=1)
        return half

    def rows(self):
        """Flat records (rho, seed, attribute, accuracy) for the CSV table."""
        out = []
        for i, rho in enumerate(self.rhos):
            for j, seed in enumerate(self.seeds):
                for k in range(self.accuracies.shape[2]):
                    out.append(
                        {
                            "rho": rho,
                            "seed": seed,
                            "attribute": k,
                            "accuracy": float(self.accuracies[i, j, k]),
                        }
                    )
        return out

    def to_dict(self):
        mean, half = self.mean, self.ci68
        return {
            "schema": SWEEP_SCHEMA,
            "train_rho": self.train_rho,
            "noise_level": self.noise_level,
            "rhos": list(self.rhos),
            "seeds": list(self.seeds),
            "mean_accuracy": mean.tolist(),
            "ci68": half.tolist(),
            "per_attribute_mean": self.accuracies.mean(axis=1).tolist(),
            "reference_accuracy": self.reference_accuracy,
        }


def accuracy_sweep(
    predict_fn,
    generator,
    rhos,
    noise,
    seeds,
    n_test=10_000,
    train_rho=None,
    reference_accuracy=None,
    workers=1,
):
    """Evaluate ``predict_fn`` on fresh data at each test correlation.

    ``generator(rho, noise, n, rng)`` must return a labeled batch.  Each
    (rho, seed) cell draws its own generator stream, so results are
    deterministic per seed and independent across grid points.  With
    ``workers > 1`` cells run in a thread pool; aggregation order is fixed
    by grid position either way.
    """
    rhos = tuple(float(r) for r in rhos)
    seeds = tuple(int(s) for s in seeds)
    if not rhos or not seeds:
        raise ValueError("need at least one rho and one seed")

    def cell(idx):
        i, j = idx
        rng = np.random.default_rng([i, seeds[j]])
        batch = generator(rhos[i], noise, n_test, rng)
        preds = np.asarray(predict_fn(batch.x))
        labels = np.asarray(batch.labels)
        if preds.shape != labels.shape:
            raise ShapeMismatch(
                f"predictions {preds.shape} vs labels {labels.shape}"
            )
        accs = np.empty(labels.shape[1])
        for k in range(labels.shape[1]):
            m = np.asarray(batch.mask)[:, k]
            if not m.any():
                raise ValueError(f"attribute {k} has no labeled evaluation rows")
            accs[k] = np.mean(preds[m, k] == labels[m, k])
        return accs

    grid = [(i, j) for i in range(len(rhos)) for j in range(len(seeds))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(cell, grid))
    else:
        results = [cell(idx) for idx in grid]

    acc = np.stack(results).reshape(len(rhos), len(seeds), -1)
    return ShiftSweepReport(
        rhos=rhos,
        seeds=seeds,
        accuracies=acc,
        noise_level=float(noise),
        train_rho=train_rho,
        reference_accuracy=reference_accuracy,
    )


# ---------------------------------------------------------------------------
# confusion and subgroup analysis


def _full_batch_labels(predict_fn, batch, n_classes, op_name):
    labels = np.asarray(batch.labels)
    if not np.asarray(batch.mask).all():
        raise ValueError(f"{op_name} requires fully labeled rows")
    preds = np.asarray(predict_fn(batch.x))
    if preds.shape != labels.shape:
        raise ShapeMismatch(f"predictions {preds.shape} vs labels {labels.shape}")
    for name, arr in (("labels", labels), ("predictions", preds)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"{name} outside [0, {n_classes})")
    return preds, labels


def confusion(predict_fn, batch, n_classes=2):
    """Per-attribute confusion counts, shape (K, C, C): rows true, cols predicted."""
    preds, labels = _full_batch_labels(predict_fn, batch, n_classes, "confusion")
    k_attrs = labels.shape[1]
    mats = np.zeros((k_attrs, n_classes, n_classes), dtype=np.int64)
    for k in range(k_attrs):
        np.add.at(mats[k], (labels[:, k], preds[:, k]), 1)
    return mats


@dataclass(frozen=True)
class CellStats:
    count: int
    errors: int

    @property
    def error_rate(self):
        """None when the cell is empty: missing, not zero."""
        if self.count == 0:
            return None
        return self.errors / self.count


@dataclass(frozen=True, eq=False)
class SubgroupReport:
    """Error rate per (s1, s2) label cell; a row errs if either attribute is wrong."""

    cells: dict = field(default_factory=dict)

    def missing(self):
        return sorted(key for key, stats in self.cells.items() if stats.count == 0)

    def to_dict(self):
        return {
            "schema": SUBGROUP_SCHEMA,
            "cells": [
                {
                    "s1": int(v1),
                    "s2": int(v2),
                    "count": stats.count,
                    "errors": stats.errors,
                    "error_rate": stats.error_rate,
                }
                for (v1, v2), stats in sorted(self.cells.items())
            ],
        }


def subgroup_error(predict_fn, batch, n_classes=2):
    """Error rates over the (s1, s2) grid of a two-attribute task."""
    labels = np.asarray(batch.labels)
    if labels.shape[1] != 2:
        raise ArityError(f"subgroup_error expects 2 attributes, got {labels.shape[1]}")
    preds, labels = _full_batch_labels(predict_fn, batch, n_classes, "subgroup_error")
    wrong = (preds != labels).any(axis=1)
    cells = {}
    for v1 in range(n_classes):
        for v2 in range(n_classes):
            rows = (labels[:, 0] == v1) & (labels[:, 1] == v2)
            cells[(v1, v2)] = CellStats(int(rows.sum()), int(wrong[rows].sum()))
    return SubgroupReport(cells=cells)


# ---------------------------------------------------------------------------
# disentanglement metrics


def _check_metric_inputs(latents, factors, bins):
    z = as_matrix(latents, "latents")
    f = np.asarray(factors)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2 or f.shape[0] != z.shape[0]:
        raise ShapeMismatch(
            f"factors shape {f.shape} incompatible with {z.shape[0]} latent rows"
        )
    if z.shape[0] == 0:
        raise ValueError("need at least one row")
    if bins is not None and int(bins) < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    return z, f


def _discretize(values, bins):
    """Equal-width codes in [0, bins); a constant column maps to a single bin."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.intp)
    edges = np.linspace(lo, hi, bins + 1)
    return np.searchsorted(edges[1:-1], values, side="right")


def _factor_codes(column):
    _, inv = np.unique(column, return_inverse=True)
    return inv, int(inv.max()) + 1


def _entropy_from_codes(codes, card):
    p = np.bincount(codes, minlength=card).astype(float)
    p /= p.sum()
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def _mi_from_codes(a, b, card_a, card_b):
    """Plug-in mutual information (nats) of two code columns."""
    joint = np.bincount(a * card_b + b, minlength=card_a * card_b)
    p = joint.reshape(card_a, card_b).astype(float)
    p /= p.sum()
    outer = p.sum(axis=1, keepdims=True) * p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(outer[nz]))))


def _informative_factors(f, op_name):
    """Yield (k, codes, cardinality), warning on and skipping constant factors."""
    out = []
    for k in range(f.shape[1]):
        codes, card = _factor_codes(f[:, k])
        if card < 2:
            warnings.warn(
                f"factor {k} has zero entropy; excluded from {op_name}",
                DegenerateLatentWarning,
                stacklevel=3,
            )
            continue
        out.append((k, codes, card))
    return out


def mig(latents, factors, bins=DEFAULT_BINS):
    """Mutual information gap: mean over factors of (I1 - I2) / H(factor).

    I1 and I2 are the two largest latent-dimension MIs with the factor,
    estimated by equal-width histogram discretization of each latent
    dimension.  Constant latent dimensions contribute MI 0; zero-entropy
    factors are excluded with a warning.
    """
    z, f = _check_metric_inputs(latents, factors, bins)
    codes = [_discretize(z[:, j], bins) for j in range(z.shape[1])]
    gaps = []
    for _, fk, card in _informative_factors(f, "mig"):
        h = _entropy_from_codes(fk, card)
        mis = sorted((_mi_from_codes(c, fk, bins, card) for c in codes), reverse=True)
        second = mis[1] if len(mis) > 1 else 0.0
        gaps.append((mis[0] - second) / h)
    if not gaps:
        warnings.warn(
            "no informative factors; mig is 0 by convention",
            DegenerateLatentWarning,
            stacklevel=2,
        )
        return 0.0
    return float(np.mean(gaps))


def _threshold_score(values, labels01):
    """Best single-threshold balanced accuracy, rescaled to [0, 1].

    Both cut directions are searched; a constant column scores 0.  The raw
    balanced accuracy a of the best realizable threshold is reported as
    2a - 1 so that chance maps to 0 and a perfect split to 1.
    """
    n1 = int(labels01.sum())
    n0 = labels01.size - n1
    if n0 == 0 or n1 == 0:
        return 0.0
    order = np.argsort(values, kind="stable")
    v, y = values[order], labels01[order]
    cum1 = np.cumsum(y)
    cum0 = np.arange(1, y.size + 1) - cum1
    # cutting after sorted position i predicts class 1 strictly above the cut
    bacc = 0.5 * (cum0 / n0 + (n1 - cum1) / n1)
    realizable = np.ones(y.size, dtype=bool)
    realizable[:-1] = v[:-1] < v[1:]  # a cut between tied values is not a threshold
    lo = float(bacc[realizable].min())
    hi = float(bacc[realizable].max())
    return 2.0 * max(hi, 1.0 - lo, 0.5) - 1.0


def sap(latents, factors):
    """Separated-attribute predictability: mean top-two gap of per-dimension scores.

    Each (dimension, factor) score is the best-threshold balanced accuracy of
    predicting the binary factor from that single dimension, rescaled to
    [0, 1].  Factors must be binary; zero-entropy factors are excluded with
    a warning.
    """
    z, f = _check_metric_inputs(latents, factors, None)
    gaps = []
    for k, fk, card in _informative_factors(f, "sap"):
        if card != 2:
            raise ArityError(f"sap requires binary factors, factor {k} has {card} values")
        scores = sorted(
            (_threshold_score(z[:, j], fk) for j in range(z.shape[1])), reverse=True
        )
        second = scores[1] if len(scores) > 1 else 0.0
        gaps.append(scores[0] - second)
    if not gaps:
        warnings.warn(
            "no informative factors; sap is 0 by convention",
            DegenerateLatentWarning,
            stacklevel=2,
        )
        return 0.0
    return float(np.mean(gaps))


def gaussian_total_correlation(latents):
    """Total correlation of a Gaussian fit: (sum_i ln Var(z_i) - ln det Cov) / 2.

    Zero iff the empirical covariance is diagonal.  Requires more rows than
    dimensions and a covariance with condition number below 1e12.
    """
    z = as_matrix(latents, "latents")
    n, d = z.shape
    if n <= d:
        raise SingularCovariance(f"need more rows than dimensions, got {n} x {d}")
    cov = np.atleast_2d(np.cov(z, rowvar=False, ddof=1))
    eigs = np.linalg.eigvalsh(cov)
    if eigs[0] <= 0.0 or eigs[-1] / eigs[0] > COND_LIMIT:
        raise SingularCovariance(
            f"covariance condition number exceeds {COND_LIMIT:.0e}"
        )
    _, logdet = np.linalg.slogdet(cov)
    # Hadamard guarantees nonnegativity; clamp the last-ulp float residue
    return max(0.0, 0.5 * (float(np.sum(np.log(np.diag(cov)))) - float(logdet)))


def mutual_info_score(latents, factors, bins=DEFAULT_BINS):
    """Mean histogram MI (nats) between latent dims and non-corresponding factors.

    Dimension j corresponds to factor j; all index-mismatched (dimension,
    factor) pairs are averaged.  No off-pairs (e.g. D = K = 1) gives 0 by
    convention.
    """
    z, f = _check_metric_inputs(latents, factors, bins)
    codes = [_discretize(z[:, j], bins) for j in range(z.shape[1])]
    values = []
    for k, fk, card in _informative_factors(f, "mutual_info_score"):
        for j in range(z.shape[1]):
            if j == k:
                continue
            values.append(_mi_from_codes(codes[j], fk, bins, card))
    if not values:
        return 0.0
    return float(np.mean(values))


@dataclass(frozen=True)
class MetricReport:
    """The four computed disentanglement metrics plus evaluation-set metadata."""

    mig: float
    sap: float
    gaussian_total_correlation: float
    mutual_info_score: float
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mig", "sap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.gaussian_total_correlation < 0.0:
            raise ValueError("gaussian total correlation must be >= 0")

    def to_dict(self):
        return {
            "schema": METRIC_SCHEMA,
            "mig": self.mig,
            "sap": self.sap,
            "gaussian_total_correlation": self.gaussian_total_correlation,
            "mutual_info_score": self.mutual_info_score,
            "descriptor": dict(self.descriptor),
        }


def metric_report(latents, factors, bins=DEFAULT_BINS, descriptor=None):
    """Compute all four metrics on one evaluation set.

    The descriptor records what the set was (size, bins, provenance notes)
    so reports remain interpretable on their own.
    """
    z, f = _check_metric_inputs(latents, factors, bins)
    info = {"n_rows": int(z.shape[0]), "bins": int(bins), "ci": "68% (one standard error)"}
    info.update(descriptor or {})
    return MetricReport(
        mig=mig(z, f, bins),
        sap=sap(z, f),
        gaussian_total_correlation=gaussian_total_correlation(z),
        mutual_info_score=mutual_info_score(z, f, bins),
        descriptor=info,
    )
