"""Exact information theory over finite discrete joint distributions.

All quantities operate on dense probability tables and are reported in
nats.  Tables are exact, so equalities like the chain rule hold to float
round-off rather than estimator error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_rng
from .errors import ArityError, OverlappingSubsets, UnknownVariable

MAX_CELLS = 10**6


@dataclass(frozen=True)
class DiscreteJoint:
    """Dense joint probability table over named variables.

    variable_names: one name per table axis.
    probs: nonnegative array, one axis per variable, summing to 1.
    """

    variable_names: tuple
    probs: np.ndarray

    def __post_init__(self):
        names = tuple(self.variable_names)
        probs = np.asarray(self.probs, dtype=np.float64)
        if len(names) != probs.ndim:
            raise ValueError(
                f"{len(names)} variable names for a table of rank {probs.ndim}"
            )
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        if probs.size > MAX_CELLS:
            raise ValueError(f"table has {probs.size} cells, cap is {MAX_CELLS}")
        if probs.min() < 0:
            raise ValueError("probabilities must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        object.__setattr__(self, "variable_names", names)
        object.__setattr__(self, "probs", probs)

    @property
    def cardinalities(self) -> tuple:
        return self.probs.shape

    def _axes(self, vars) -> tuple:
        axes = []
        for v in vars:
            if v not in self.variable_names:
                raise UnknownVariable(v)
            axes.append(self.variable_names.index(v))
        return tuple(axes)

    def marginal(self, vars) -> "DiscreteJoint":
        """Marginal joint over the given subset, axes in the requested order."""
        keep = self._axes(vars)
        drop = tuple(i for i in range(self.probs.ndim) if i not in keep)
        table = self.probs.sum(axis=drop) if drop else self.probs
        # sum() preserves the original axis order of the kept variables
        kept_in_order = [n for n in self.variable_names if n in vars]
        table = np.moveaxis(
            table,
            [kept_in_order.index(v) for v in vars],
            range(len(vars)),
        )
        return DiscreteJoint(variable_names=tuple(vars), probs=table)


def _plogp_sum(p: np.ndarray) -> float:
    """Sum of -p ln p with the 0 ln 0 = 0 convention."""
    mask = p > 0
    return float(-(p[mask] * np.log(p[mask])).sum())


def entropy(j: DiscreteJoint, vars) -> float:
    """Shannon entropy (nats) of the marginal over `vars`."""
    vars = list(vars)
    if not vars:
        raise ValueError("vars must be a nonempty subset")
    # Canonicalize to table axis order: the value is order-independent, and a
    # fixed summation order makes identities like symmetry hold exactly.
    axes = sorted(j._axes(vars))
    canonical = [j.variable_names[i] for i in axes]
    return _plogp_sum(j.marginal(canonical).probs)


def _check_disjoint(*subsets):
    seen = set()
    for sub in subsets:
        for v in sub:
            if v in seen:
                raise OverlappingSubsets(f"variable {v!r} appears in two subsets")
            seen.add(v)


def mutual_information(j: DiscreteJoint, vars_a, vars_b) -> float:
    """I(a; b) = H(a) + H(b) - H(a, b), in nats."""
    vars_a, vars_b = list(vars_a), list(vars_b)
    _check_disjoint(vars_a, vars_b)
    return entropy(j, vars_a) + entropy(j, vars_b) - entropy(j, vars_a + vars_b)


def conditional_mi(j: DiscreteJoint, vars_a, vars_b, cond) -> float:
    """I(a; b | c) = H(a, c) + H(b, c) - H(a, b, c) - H(c), in nats."""
    vars_a, vars_b, cond = list(vars_a), list(vars_b), list(cond)
    _check_disjoint(vars_a, vars_b, cond)
    return (
        entropy(j, vars_a + cond)
        + entropy(j, vars_b + cond)
        - entropy(j, vars_a + vars_b + cond)
        - entropy(j, cond)
    )


def interaction_information(j: DiscreteJoint, vars) -> float:
    """Signed interaction information of 3 or 4 single variables.

    I(a; b; c) = I(a; b) - I(a; b | c) and
    I(a; b; c; d) = I(a; b; c) - I(a; b; c | d), where the conditional
    3-way term expands through conditional MIs.  Symmetric in its arguments.
    """
    vars = list(vars)
    _check_disjoint(*[[v] for v in vars])
    if len(vars) == 3:
        a, b, c = vars
        return mutual_information(j, [a], [b]) - conditional_mi(j, [a], [b], [c])
    if len(vars) == 4:
        a, b, c, d = vars
        unconditional = mutual_information(j, [a], [b]) - conditional_mi(j, [a], [b], [c])
        conditional = conditional_mi(j, [a], [b], [d]) - conditional_mi(j, [a], [b], [c, d])
        return unconditional - conditional
    raise ArityError(f"interaction information takes 3 or 4 variables, got {len(vars)}")


@dataclass(frozen=True)
class CounterexampleReport:
    """Outcome of a randomized counterexample search over binary joints."""

    trials: int
    seed: int
    relaxed: bool
    n_correlated: int  # joints passing the source-dependence filter
    counterexamples: tuple = field(default_factory=tuple)

    @property
    def found(self) -> bool:
        return len(self.counterexamples) > 0


_SEARCH_NAMES = ("s1", "s2", "z1", "z2")


def _identity_coded_joint(rng: np.random.Generator) -> DiscreteJoint:
    """Joint where each code copies its source exactly, over a random source table."""
    q = rng.dirichlet(np.ones(4)).reshape(2, 2)
    p = np.zeros((2, 2, 2, 2))
    for a in range(2):
        for b in range(2):
            p[a, b, a, b] = q[a, b]
    return DiscreteJoint(variable_names=_SEARCH_NAMES, probs=p)


def independence_counterexample_search(
    trials: int, rng_seed: int = 0, relaxed: bool = False
) -> CounterexampleReport:
    """Search for binary joints with dependent sources, independent codes,
    and lossless per-variable codes, all at once.

    Each trial draws one symmetric-Dirichlet(1) table over
    (s1, s2, z1, z2) and one identity-coded table (z_k = s_k exactly, with
    a random source distribution).  A joint counts when

        I(s1; s2) > 0.01,
        I(z1; z2) < 1e-6          (skipped when relaxed=True), and
        I(z_k; s_k) >= H(s_k) - 1e-6 for both k.

    No joint can satisfy all three: losslessness forces the codes to carry
    the source dependence.  The relaxed search demonstrates the first and
    third conditions are jointly attainable (identity codes qualify).
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = as_rng(rng_seed)
    n_correlated = 0
    hits = []
    for _ in range(trials):
        dense = DiscreteJoint(
            variable_names=_SEARCH_NAMES, probs=rng.dirichlet(np.ones(16)).reshape(2, 2, 2, 2)
        )
        for j in (dense, _identity_coded_joint(rng)):
            if mutual_information(j, ["s1"], ["s2"]) <= 0.01:
                continue
            n_correlated += 1
            if not relaxed and mutual_information(j, ["z1"], ["z2"]) >= 1e-6:
                continue
            lossless = all(
                mutual_information(j, [f"z{k}"], [f"s{k}"]) >= entropy(j, [f"s{k}"]) - 1e-6
                for k in (1, 2)
            )
            if lossless:
                hits.append(j)
    return CounterexampleReport(
        trials=trials,
        seed=int(rng_seed) if not isinstance(rng_seed, np.random.Generator) else -1,
        relaxed=relaxed,
        n_correlated=n_correlated,
        counterexamples=tuple(hits),
    )
