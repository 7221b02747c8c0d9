"""Gaussian process prior and predictive machinery.

Stationary kernels (Matern-5/2 and squared-exponential) with
per-dimension lengthscales, prior covariance assembly, and the
noise-free conditional used to read a latent utility surface out of
fitted latent values.  The conditional optionally propagates a Gaussian
covariance over the latent training values, which is how a Laplace
approximation of a non-Gaussian choice likelihood feeds uncertainty
back into prediction:

    mean(Q) = Kqx Kxx^-1 m
    cov(Q)  = Kqq - Kqx Kxx^-1 Kxq + Kqx Kxx^-1 S Kxx^-1 Kxq

where m and S are the mean and covariance of the latent values at the
training points.  With S = 0 this reduces to the familiar noise-free
GP conditional; with m = f and S the inverse curvature at a mode it is
the standard Laplace predictive.

The prior mean is identically zero.  Before any data arrive the
predictive mean at every point is zero and the predictive covariance
equals the prior kernel matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError

_SQRT5 = math.sqrt(5.0)

KERNEL_FAMILIES = ("matern52", "squared-exponential")


def _as_points(points, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ContractError(f"{name} must be a (n, d) array, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class KernelConfig:
    """Stationary kernel specification.

    lengthscales may be a scalar (isotropic) or a length-d vector, all
    entries strictly positive.  jitter is added to the diagonal of any
    self-covariance matrix; None selects 1e-6 * signal_variance.
    """

    family: str = "matern52"
    lengthscales: object = 1.0
    signal_variance: float = 1.0
    jitter: float | None = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ContractError(
                f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}"
            )
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.ndim > 1 or not np.all(np.isfinite(ls)) or not np.all(ls > 0):
            raise ContractError("lengthscales must be finite and strictly positive")
        object.__setattr__(self, "lengthscales", ls if ls.ndim else float(ls))
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ContractError("signal_variance must be finite and strictly positive")
        if self.jitter is not None and (not np.isfinite(self.jitter) or self.jitter < 0):
            raise ContractError("jitter must be non-negative when given")

    @property
    def effective_jitter(self) -> float:
        if self.jitter is None:
            return 1e-6 * self.signal_variance
        return float(self.jitter)

    def lengthscale_vector(self, dim: int) -> np.ndarray:
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.ndim == 0:
            return np.full(dim, float(ls))
        if ls.shape[0] != dim:
            raise ContractError(
                f"lengthscales have dimension {ls.shape[0]} but points have dimension {dim}"
            )
        return ls

    def to_dict(self) -> dict:
        ls = np.asarray(self.lengthscales, dtype=float)
        return {
            "family": self.family,
            "lengthscales": ls.tolist() if ls.ndim else float(ls),
            "signal_variance": float(self.signal_variance),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "KernelConfig":
        return cls(
            family=payload["family"],
            lengthscales=payload["lengthscales"],
            signal_variance=payload["signal_variance"],
            jitter=payload.get("jitter"),
        )


@dataclass(frozen=True)
class GpPrior:
    """Zero-mean GP prior over the utility surface."""

    kernel: KernelConfig = field(default_factory=KernelConfig)
    mean: float = 0.0

    def __post_init__(self):
        if self.mean != 0.0:
            raise ContractError("the prior mean is fixed at zero")


def _scaled_diffs(a: np.ndarray, b: np.ndarray, ls: np.ndarray) -> np.ndarray:
    return (a[:, None, :] - b[None, :, :]) / ls


def kernel_matrix(points_a, points_b, config: KernelConfig) -> np.ndarray:
    """Cross-covariance between two point sets.

    When both arguments are the same set (same object or equal arrays)
    the result is symmetrized exactly and jitter is added to the
    diagonal, so the returned matrix is positive definite.
    """
    a = _as_points(points_a, "points_a")
    b = _as_points(points_b, "points_b")
    if a.shape[1] != b.shape[1]:
        raise ContractError(
            f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    ls = config.lengthscale_vector(a.shape[1]) if a.shape[1] else np.ones(0)
    diffs = _scaled_diffs(a, b, ls) if a.shape[1] else np.zeros((a.shape[0], b.shape[0], 0))
    sq = np.einsum("nmd,nmd->nm", diffs, diffs)
    if config.family == "squared-exponential":
        k = config.signal_variance * np.exp(-0.5 * sq)
    else:
        r = np.sqrt(sq)
        k = config.signal_variance * (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-_SQRT5 * r)
    same = points_a is points_b or (a.shape == b.shape and np.array_equal(a, b))
    if same:
        k = 0.5 * (k + k.T)
        k[np.diag_indices_from(k)] += config.effective_jitter
    return k


def kernel_cross_gradients(queries, points, config: KernelConfig) -> np.ndarray:
    """Gradients of k(q, x_i) with respect to q, for a batch of queries.

    Returns an array of shape (n_queries, n_points, d).  Both families
    have gradients that vanish smoothly at q = x_i, so no special
    casing is needed at zero distance.
    """
    q = _as_points(queries, "queries")
    x = _as_points(points, "points")
    if q.shape[1] != x.shape[1]:
        raise ContractError(f"dimension mismatch: {q.shape[1]} vs {x.shape[1]}")
    ls = config.lengthscale_vector(q.shape[1])
    diffs = _scaled_diffs(q, x, ls)
    sq = np.einsum("qnd,qnd->qn", diffs, diffs)
    if config.family == "squared-exponential":
        k = config.signal_variance * np.exp(-0.5 * sq)
        return -k[:, :, None] * diffs / ls
    r = np.sqrt(sq)
    coeff = -config.signal_variance * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    return coeff[:, :, None] * diffs / ls


def chol_spd(mat: np.ndarray, base_jitter: float) -> np.ndarray:
    """Cholesky factor of a nominally SPD matrix.

    On failure the diagonal is inflated, starting at base_jitter and
    doubling, for at most eight retries before raising NumericalError.
    """
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    extra = max(base_jitter, 1e-12)
    for _ in range(8):
        try:
            return np.linalg.cholesky(mat + extra * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            extra *= 2.0
    raise NumericalError(
        f"matrix is not positive definite even after diagonal inflation {extra:.3e}"
    )


def chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    y = solve_triangular(chol, rhs, lower=True)
    return solve_triangular(chol.T, y, lower=False)


@dataclass
class PredictiveDistribution:
    """Gaussian predictive over query points."""

    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.covariance), 0.0, None)


def gp_predict(
    prior: GpPrior,
    train_points,
    latent_mean,
    latent_cov,
    test_points,
) -> PredictiveDistribution:
    """Noise-free GP conditional with optional latent-value covariance.

    latent_cov may be None (treated as zero, exact latent values) or an
    (n, n) PSD matrix.  With no training points the prior is returned.
    """
    q = _as_points(test_points, "test_points")
    cfg = prior.kernel
    kqq = kernel_matrix(q, q, cfg)
    if train_points is None or np.asarray(train_points, dtype=float).size == 0:
        return PredictiveDistribution(mean=np.zeros(q.shape[0]), covariance=kqq)
    x = _as_points(train_points, "train_points")
    m = np.asarray(latent_mean, dtype=float).reshape(-1)
    if m.shape[0] != x.shape[0]:
        raise ContractError(
            f"latent_mean has length {m.shape[0]} but there are {x.shape[0]} training points"
        )
    kxx = kernel_matrix(x, x, cfg)
    kxq = kernel_matrix(x, q, cfg)
    chol = chol_spd(kxx, cfg.effective_jitter)
    solved = chol_solve(chol, kxq)
    mean = solved.T @ m
    cov = kqq - kxq.T @ solved
    if latent_cov is not None:
        s = np.asarray(latent_cov, dtype=float)
        if s.shape != (x.shape[0], x.shape[0]):
            raise ContractError(
                f"latent_cov must have shape {(x.shape[0], x.shape[0])}, got {s.shape}"
            )
        cov = cov + solved.T @ s @ solved
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov).copy()
    tol = 100.0 * cfg.effective_jitter + 1e-10
    if np.any(diag < -tol):
        raise NumericalError(
            f"predictive variance fell below -{tol:.3e}; the latent covariance is inconsistent"
        )
    fix = diag < 0.0
    if np.any(fix):
        cov[np.diag_indices_from(cov)] = np.where(fix, 0.0, diag)
    return PredictiveDistribution(mean=mean, covariance=cov)


def posterior_mean_gradient(prior: GpPrior, train_points, latent_mean, query) -> np.ndarray:
    """Analytic gradient of the predictive mean at a single query point."""
    qarr = np.asarray(query, dtype=float).reshape(1, -1)
    if train_points is None or np.asarray(train_points, dtype=float).size == 0:
        return np.zeros(qarr.shape[1])
    x = _as_points(train_points, "train_points")
    m = np.asarray(latent_mean, dtype=float).reshape(-1)
    kxx = kernel_matrix(x, x, prior.kernel)
    chol = chol_spd(kxx, prior.kernel.effective_jitter)
    alpha = chol_solve(chol, m)
    grads = kernel_cross_gradients(qarr, x, prior.kernel)[0]
    return grads.T @ alpha
