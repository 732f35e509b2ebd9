"""Closed-form encoders for the linear-Gaussian disentanglement problem.

The generative model is x = A s + n with s ~ N(0, C_s) and n ~ N(0, C_n).
Three linear encoders z = W x with per-subspace readouts s_hat_k = R_k z_k
are available in closed form:

* the unconstrained least-squares solution (posterior mean),
* the solution constrained to unconditionally independent latents
  (whiten, then rotate to maximize variance explained),
* the solution constrained to conditionally independent latents
  (invert the mixing matrix, then rescale each coordinate).

All information quantities are reported in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    COND_LIMIT,
    as_square_matrix,
    check_symmetric_psd,
    condition_number,
)
from .errors import InfeasibleCorrelation, ShapeMismatch, SingularCovariance, SingularMixing

OBJECTIVE_TAGS = ("Base", "BaseMI", "BaseCMI")


@dataclass(frozen=True)
class LinearGaussianModel:
    """The generative process x = A s + n.

    A:   K x K mixing matrix.
    C_s: K x K source covariance (symmetric PSD).
    C_n: K x K noise covariance (symmetric PSD).
    """

    A: np.ndarray
    C_s: np.ndarray
    C_n: np.ndarray

    def __post_init__(self):
        A = as_square_matrix(self.A, "A")
        C_s = check_symmetric_psd(self.C_s, "C_s")
        C_n = check_symmetric_psd(self.C_n, "C_n")
        if not (A.shape == C_s.shape == C_n.shape):
            raise ShapeMismatch(
                f"A, C_s, C_n must share a K x K shape, got {A.shape}, {C_s.shape}, {C_n.shape}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C_s", C_s)
        object.__setattr__(self, "C_n", C_n)

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def C_x(self) -> np.ndarray:
        """Observation covariance A C_s A^T + C_n."""
        return self.A @ self.C_s @ self.A.T + self.C_n


@dataclass(frozen=True)
class LinearSolution:
    """A linear encoder W with scalar per-coordinate readouts R.

    The effective regressor is M = diag(R) @ W, so s_hat = M x.
    """

    W: np.ndarray
    R: np.ndarray
    objective_tag: str

    def __post_init__(self):
        W = as_square_matrix(self.W, "W")
        R = np.asarray(self.R, dtype=np.float64)
        if R.shape != (W.shape[0],):
            raise ShapeMismatch(f"R must have one scalar per subspace, got shape {R.shape}")
        if self.objective_tag not in OBJECTIVE_TAGS:
            raise ValueError(f"objective_tag must be one of {OBJECTIVE_TAGS}")
        if not np.all(np.isfinite(np.diag(R) @ W)):
            raise ValueError("effective regressor is not finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "R", R)

    @property
    def M(self) -> np.ndarray:
        """Effective regressor diag(R) @ W."""
        return np.diag(self.R) @ self.W


@dataclass(frozen=True)
class VarianceReport:
    """Variance explained on the training model and under test-time correlation shifts."""

    ve_train: float
    ve_test_by_rho: tuple = field(default_factory=tuple)  # tuples of (rho, ve)


def make_correlated_covariance(rho: float, K: int) -> np.ndarray:
    """Equicorrelation matrix: unit diagonal, every off-diagonal equal to rho.

    PSD requires rho >= -1/(K-1); values below that bound (up to a 1e-9
    guard) raise InfeasibleCorrelation.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if not -1.0 <= rho <= 1.0:
        raise InfeasibleCorrelation(f"rho must lie in [-1, 1], got {rho}")
    bound = -1.0 / (K - 1)
    if rho < bound + 1e-9:
        raise InfeasibleCorrelation(
            f"equicorrelation with rho={rho} and K={K} is not PSD (bound {bound})"
        )
    c = np.full((K, K), float(rho))
    np.fill_diagonal(c, 1.0)
    return c


def _invert_covariance(c: np.ndarray, name: str) -> np.ndarray:
    if condition_number(c) > COND_LIMIT:
        raise SingularCovariance(f"{name} is numerically singular")
    return np.linalg.inv(c)


def base_solution(model: LinearGaussianModel) -> LinearSolution:
    """Unconstrained least-squares encoder W = C_s A^T (A C_s A^T + C_n)^-1.

    The readout is the identity; W itself is the optimal regressor.
    """
    C_x_inv = _invert_covariance(model.C_x, "C_x")
    W = model.C_s @ model.A.T @ C_x_inv
    return LinearSolution(W=W, R=np.ones(model.K), objective_tag="Base")


def _pca_whitening(C_x: np.ndarray) -> np.ndarray:
    """Whitening transform L with L C_x L^T = I.

    Uses the eigenbasis with eigenvalues in descending order.  Each
    eigenvector's sign is fixed so its largest-magnitude component is
    positive, which makes the transform deterministic.
    """
    if condition_number(C_x) > COND_LIMIT:
        raise SingularCovariance("C_x is numerically singular")
    eigvals, eigvecs = np.linalg.eigh(C_x)
    order = np.argsort(-eigvals, kind="stable")  # descending, ties keep natural order
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for j in range(eigvecs.shape[1]):
        i = int(np.argmax(np.abs(eigvecs[:, j])))
        if eigvecs[i, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    return np.diag(1.0 / np.sqrt(eigvals)) @ eigvecs.T


def _rotation(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def _golden_section_maximize(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section search for the maximizer of a unimodal f on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _readout_for(W: np.ndarray, model: LinearGaussianModel) -> np.ndarray:
    """Per-coordinate least-squares readout r_k = Cov(s_k, z_k) / Var(z_k)."""
    cov_sz = model.C_s @ model.A.T @ W.T
    var_z = np.diag(W @ model.C_x @ W.T)
    return np.diag(cov_sz) / var_z


def mi_constrained_solution(model: LinearGaussianModel) -> LinearSolution:
    """Best linear encoder whose latents are unconditionally independent.

    Whitening makes Cov(z) = I for every rotation angle, so the encoder is
    W = Rotation(phi) @ Whiten(C_x) with phi chosen to maximize variance
    explained on the training model.  Only K = 2 has this closed form.

    The maximizer is located by a coarse scan followed by golden-section
    refinement to 1e-10; among equally good angles the smallest |phi| wins.
    """
    if model.K != 2:
        raise ValueError("the rotation-search closed form is only available for K = 2")
    W0 = _pca_whitening(model.C_x)
    tr_cs = float(np.trace(model.C_s))

    def ve_of(phi: float) -> float:
        # With Cov(z) = I the optimal readout is r_k = Cov(s_k, z_k), and
        # the variance explained reduces to sum_k r_k^2 / Tr(C_s).
        W = _rotation(phi) @ W0
        r = np.diag(model.C_s @ model.A.T @ W.T)
        return float(np.sum(r**2) / tr_cs)

    grid = np.linspace(-math.pi / 2, math.pi / 2, 1441, endpoint=False)
    values = np.array([ve_of(p) for p in grid])
    best = values.max()
    candidates = grid[values >= best - 1e-13]
    phi0 = float(candidates[np.argmin(np.abs(candidates))])
    step = grid[1] - grid[0]
    phi = _golden_section_maximize(ve_of, phi0 - 2 * step, phi0 + 2 * step)
    if ve_of(0.0) >= ve_of(phi) - 1e-13:
        phi = 0.0  # tie-break: no rotation when rotation buys nothing
    W = _rotation(phi) @ W0
    return LinearSolution(W=W, R=_readout_for(W, model), objective_tag="BaseMI")


def cmi_constrained_solution(model: LinearGaussianModel) -> LinearSolution:
    """Encoder whose latents are independent conditioned on each source.

    Inverting the mixing matrix gives z = s + A^-1 n, whose coordinates are
    conditionally independent given any s_k.  Each coordinate then gets a
    scalar least-squares readout r_k = Var(s_k) / (Var(s_k) + noise_kk).
    """
    if condition_number(model.A) > COND_LIMIT:
        raise SingularMixing("A is numerically singular")
    W = np.linalg.inv(model.A)
    noise = W @ model.C_n @ W.T
    r = np.diag(model.C_s) / (np.diag(model.C_s) + np.diag(noise))
    return LinearSolution(W=W, R=r, objective_tag="BaseCMI")


def variance_explained(
    sol: LinearSolution, model_train: LinearGaussianModel, C_s_test: np.ndarray
) -> float:
    """Variance explained 1 - E[|s - M x|^2] / Tr(C_s_test), in closed form.

    The test distribution keeps the training A and C_n and replaces the
    source covariance with C_s_test.
    """
    C_s_test = check_symmetric_psd(C_s_test, "C_s_test")
    if C_s_test.shape != model_train.C_s.shape:
        raise ShapeMismatch("C_s_test shape does not match the model")
    M = sol.M
    D = np.eye(model_train.K) - M @ model_train.A
    err = float(np.trace(D @ C_s_test @ D.T) + np.trace(M @ model_train.C_n @ M.T))
    return 1.0 - err / float(np.trace(C_s_test))


def gaussian_mi(C: np.ndarray, part_a, part_b) -> float:
    """Mutual information of jointly Gaussian blocks, in nats.

    I = 0.5 (ln det C_aa + ln det C_bb - ln det C) for a partition (a, b)
    of the coordinates of C.
    """
    C = check_symmetric_psd(C, "C")
    a = np.asarray(part_a, dtype=int)
    b = np.asarray(part_b, dtype=int)
    n = C.shape[0]
    combined = np.concatenate([a, b])
    if len(set(combined.tolist())) != len(combined) or sorted(combined.tolist()) != list(range(n)):
        raise ValueError("partition must be disjoint and cover all coordinates")

    def logdet(block: np.ndarray, name: str) -> float:
        sign, val = np.linalg.slogdet(block)
        if sign <= 0 or condition_number(block) > COND_LIMIT:
            raise SingularCovariance(f"{name} block is rank deficient")
        return val

    lda = logdet(C[np.ix_(a, a)], "a")
    ldb = logdet(C[np.ix_(b, b)], "b")
    ld = logdet(C, "joint")
    return 0.5 * (lda + ldb - ld)


def gaussian_cmi(C: np.ndarray, part_a, part_b, cond) -> float:
    """Conditional mutual information I(a; b | cond) for a joint Gaussian.

    The conditional covariance of (a, b) given the conditioning block is the
    Schur complement; the unconditional formula then applies to it.
    """
    C = check_symmetric_psd(C, "C")
    a = np.asarray(part_a, dtype=int)
    b = np.asarray(part_b, dtype=int)
    c = np.asarray(cond, dtype=int)
    if set(a.tolist()) & set(b.tolist()) or set(a.tolist()) & set(c.tolist()) or set(
        b.tolist()
    ) & set(c.tolist()):
        raise ValueError("index sets must be disjoint")
    ab = np.concatenate([a, b])
    C_ab = C[np.ix_(ab, ab)]
    C_cc = C[np.ix_(c, c)]
    if condition_number(C_cc) > COND_LIMIT:
        raise SingularCovariance("conditioning block is singular")
    C_ab_c = C[np.ix_(ab, c)]
    cond_cov = C_ab - C_ab_c @ np.linalg.solve(C_cc, C_ab_c.T)
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    # Schur complements can dip a hair below PSD in floating point.
    eigmin = float(np.linalg.eigvalsh(cond_cov).min())
    if eigmin < 0:
        cond_cov = cond_cov + (1e-15 - eigmin) * np.eye(cond_cov.shape[0])
    na = len(a)
    return gaussian_mi(cond_cov, np.arange(na), np.arange(na, na + len(b)))


def sweep_test_correlation(
    sol: LinearSolution, model: LinearGaussianModel, rhos
) -> VarianceReport:
    """Variance explained of a fixed solution across test-time correlations."""
    ve_train = variance_explained(sol, model, model.C_s)
    entries = tuple(
        (float(rho), variance_explained(sol, model, make_correlated_covariance(rho, model.K)))
        for rho in rhos
    )
    return VarianceReport(ve_train=ve_train, ve_test_by_rho=entries)
