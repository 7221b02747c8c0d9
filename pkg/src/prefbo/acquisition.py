"""Batch proposal machinery over a fitted latent posterior.

The proposer builds each round's K candidates in three steps:

1. maximize expected improvement over the box (Sobol screen followed
   by multi-start projected gradient ascent),
2. lay a bridge of K points between the incumbent and the EI point at
   mixing weights gamma in [0, 1],
3. estimate the covariance of the posterior mean gradient over a small
   ball around the incumbent, pick the dominant eigen-subspace by the
   first spectral gap, and perturb the bridge points inside that
   subspace with eigenvalue-weighted amplitudes.

All randomness flows through the caller's Generator, so proposals are
reproducible bit for bit given the same posterior and seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import ContractError
from .gp import chol_solve, kernel_cross_gradients, kernel_matrix
from .likelihoods import LatentPosterior

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BoxBounds:
    """Axis-aligned search box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ContractError("lower and upper must be non-empty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractError("bounds must be finite")
        if not np.all(lo < hi):
            raise ContractError("each lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points, atol: float = 1e-9) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return bool(
            np.all(pts >= self.lower - atol) and np.all(pts <= self.upper + atol)
        )

    def clip(self, points) -> np.ndarray:
        return np.clip(np.asarray(points, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lower + rng.random((count, self.dim)) * self.width

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "BoxBounds":
        return cls(lower=payload["lower"], upper=payload["upper"])


@dataclass(frozen=True)
class DbsConfig:
    """Knobs of the batch proposer.

    The gamma schedule defaults to num_candidates evenly spaced weights
    from 0 to 1 so the incumbent and the EI point are always shown.
    perturb_scale multiplies the mean box width; grad_samples and
    neighborhood_scale shape the gradient-covariance estimate.
    """

    num_candidates: int = 4
    gammas: tuple | None = None
    grad_samples: int = 32
    neighborhood_scale: float = 0.05
    perturb_scale: float = 0.1
    spectral_threshold: float = 2.0
    ei_restarts: int = 50
    ei_raw_samples: int = 4096
    ei_max_iter: int = 200
    ei_step_tol: float = 1e-6

    def __post_init__(self):
        if self.num_candidates < 2:
            raise ContractError("num_candidates must be at least 2")
        if self.gammas is not None:
            g = tuple(float(v) for v in self.gammas)
            if len(g) != self.num_candidates:
                raise ContractError("gammas must match num_candidates")
            if any(not (0.0 <= v <= 1.0) for v in g):
                raise ContractError("gammas must lie in [0, 1]")
            object.__setattr__(self, "gammas", g)
        if self.grad_samples < 1:
            raise ContractError("grad_samples must be positive")
        if not 0.0 < self.neighborhood_scale:
            raise ContractError("neighborhood_scale must be positive")
        if self.perturb_scale < 0.0:
            raise ContractError("perturb_scale must be non-negative")
        if self.spectral_threshold <= 1.0:
            raise ContractError("spectral_threshold must exceed 1")
        if self.ei_restarts < 1 or self.ei_raw_samples < 1:
            raise ContractError("ei_restarts and ei_raw_samples must be positive")

    @property
    def gamma_schedule(self) -> np.ndarray:
        if self.gammas is None:
            return np.linspace(0.0, 1.0, self.num_candidates)
        return np.asarray(self.gammas, dtype=float)

    def to_dict(self) -> dict:
        return {
            "num_candidates": self.num_candidates,
            "gammas": list(self.gammas) if self.gammas is not None else None,
            "grad_samples": self.grad_samples,
            "neighborhood_scale": self.neighborhood_scale,
            "perturb_scale": self.perturb_scale,
            "spectral_threshold": self.spectral_threshold,
            "ei_restarts": self.ei_restarts,
            "ei_raw_samples": self.ei_raw_samples,
            "ei_max_iter": self.ei_max_iter,
            "ei_step_tol": self.ei_step_tol,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DbsConfig":
        data = dict(payload)
        if data.get("gammas") is not None:
            data["gammas"] = tuple(data["gammas"])
        return cls(**data)


def expected_improvement(mean, variance, best: float) -> np.ndarray:
    """Closed-form EI of Gaussian beliefs against a best value.

    Degenerate points (deviation at or below 1e-12) fall back to the
    deterministic improvement max(mean - best, 0).  Output is clipped
    at zero to absorb cancellation in the far-left tail.
    """
    mu = np.asarray(mean, dtype=float)
    var = np.clip(np.asarray(variance, dtype=float), 0.0, None)
    s = np.sqrt(var)
    degenerate = s <= 1e-12
    safe_s = np.where(degenerate, 1.0, s)
    z = (mu - best) / safe_s
    smooth = s * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    ei = np.where(degenerate, np.maximum(mu - best, 0.0), smooth)
    return np.clip(ei, 0.0, None)


class PosteriorSurface:
    """Cached predictive algebra for one fitted posterior.

    Precomputes the weights alpha = K^-1 f_map and the quadratic form
    matrix M = K^-1 - K^-1 S K^-1, so predictive means, variances, and
    their gradients evaluate with one kernel block per query batch.
    """

    def __init__(self, posterior: LatentPosterior):
        self.kernel = posterior.kernel
        self.archive = np.asarray(posterior.archive, dtype=float)
        self.alpha = chol_solve(posterior.prior_chol, posterior.f_map)
        identity = np.eye(self.archive.shape[0])
        kinv = chol_solve(posterior.prior_chol, identity)
        m = kinv - kinv @ posterior.posterior_cov @ kinv
        self.quad = 0.5 * (m + m.T)
        self.diag_base = self.kernel.signal_variance + self.kernel.effective_jitter

    def mean(self, points) -> np.ndarray:
        kq = kernel_matrix(np.atleast_2d(points), self.archive, self.kernel)
        return kq @ self.alpha

    def mean_at_archive(self) -> np.ndarray:
        kq = kernel_matrix(self.archive, self.archive, self.kernel)
        return kq @ self.alpha

    def variance(self, points) -> np.ndarray:
        kq = kernel_matrix(np.atleast_2d(points), self.archive, self.kernel)
        quad = np.einsum("qn,nm,qm->q", kq, self.quad, kq)
        return np.clip(self.diag_base - quad, 0.0, None)

    def mean_variance_grads(self, points):
        """Means, variances, and their gradients for a batch of points."""
        pts = np.atleast_2d(points)
        kq = kernel_matrix(pts, self.archive, self.kernel)
        grads = kernel_cross_gradients(pts, self.archive, self.kernel)
        mean = kq @ self.alpha
        mean_grad = np.einsum("qnd,n->qd", grads, self.alpha)
        half = kq @ self.quad
        var = np.clip(self.diag_base - np.einsum("qn,qn->q", kq, half), 0.0, None)
        var_grad = -2.0 * np.einsum("qnd,qn->qd", grads, half)
        return mean, var, mean_grad, var_grad

    def ei(self, points, best: float) -> np.ndarray:
        pts = np.atleast_2d(points)
        kq = kernel_matrix(pts, self.archive, self.kernel)
        mean = kq @ self.alpha
        var = np.clip(
            self.diag_base - np.einsum("qn,nm,qm->q", kq, self.quad, kq), 0.0, None
        )
        return expected_improvement(mean, var, best)

    def ei_and_grad(self, points, best: float):
        mean, var, mean_grad, var_grad = self.mean_variance_grads(points)
        ei = expected_improvement(mean, var, best)
        s = np.sqrt(var)
        degenerate = s <= 1e-12
        safe_s = np.where(degenerate, 1.0, s)
        z = (mean - best) / safe_s
        cdf = ndtr(z)
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        d_mean = np.where(degenerate, (mean > best).astype(float), cdf)
        d_s = np.where(degenerate, 0.0, pdf)
        grad = d_mean[:, None] * mean_grad + (d_s / (2.0 * safe_s))[:, None] * var_grad
        return ei, grad


def _sobol_points(bounds: BoxBounds, count: int, rng: np.random.Generator) -> np.ndarray:
    engine = qmc.Sobol(d=bounds.dim, scramble=True, seed=int(rng.integers(2**31 - 1)))
    m = max(1, math.ceil(math.log2(count)))
    unit = engine.random_base2(m=m)[:count]
    return bounds.lower + unit * bounds.width


def _raw_ei_screen(surface: PosteriorSurface, bounds: BoxBounds, config: DbsConfig, rng):
    best = float(np.max(surface.mean_at_archive()))
    raw = _sobol_points(bounds, config.ei_raw_samples, rng)
    values = surface.ei(raw, best)
    order = np.argsort(-values, kind="stable")
    return best, raw, values, order


def _ascend_ei(surface, bounds: BoxBounds, config: DbsConfig, starts, best: float):
    x = np.array(starts, dtype=float)
    width_norm = float(np.linalg.norm(bounds.width))
    tol = config.ei_step_tol * width_norm
    ei, grad = surface.ei_and_grad(x, best)
    grad_norm = np.linalg.norm(grad, axis=1)
    step = 0.02 * width_norm / np.maximum(grad_norm, 1e-12)
    active = np.ones(x.shape[0], dtype=bool)
    for _ in range(config.ei_max_iter):
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        candidate = bounds.clip(x[idx] + step[idx, None] * grad[idx])
        cand_ei, cand_grad = surface.ei_and_grad(candidate, best)
        moved = np.linalg.norm(candidate - x[idx], axis=1)
        improved = cand_ei > ei[idx]
        accept = idx[improved]
        x[accept] = candidate[improved]
        ei[accept] = cand_ei[improved]
        grad[accept] = cand_grad[improved]
        step[accept] *= 1.3
        reject = idx[~improved]
        step[reject] *= 0.5
        stalled = idx[(moved < tol) | (~improved & (step[idx] * np.linalg.norm(grad[idx], axis=1) < tol))]
        active[stalled] = False
    return x, ei


def maximize_ei(
    posterior: LatentPosterior,
    bounds: BoxBounds,
    config: DbsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Locate the EI maximizer via Sobol screen plus multi-start ascent.

    Falls back to the best screened point (with a logged warning) when
    EI is zero everywhere, which happens once the posterior believes
    no candidate can improve on the incumbent.
    """
    surface = PosteriorSurface(posterior)
    return _maximize_ei_impl(surface, bounds, config, rng)


def _maximize_ei_impl(surface, bounds, config, rng) -> np.ndarray:
    best, raw, values, order = _raw_ei_screen(surface, bounds, config, rng)
    top = order[: config.ei_restarts]
    if values[order[0]] <= 0.0:
        logger.warning(
            "expected improvement is zero everywhere on the screen; "
            "returning the first screened point"
        )
        return raw[order[0]].copy()
    starts = raw[top]
    refined, refined_ei = _ascend_ei(surface, bounds, config, starts, best)
    winner = int(np.argmax(refined_ei))
    if refined_ei[winner] >= values[order[0]]:
        return refined[winner]
    return raw[order[0]].copy()


def ei_topk_propose(
    posterior: LatentPosterior,
    bounds: BoxBounds,
    config: DbsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch baseline: the top num_candidates points of the EI screen."""
    surface = PosteriorSurface(posterior)
    _, raw, _, order = _raw_ei_screen(surface, bounds, config, rng)
    return raw[order[: config.num_candidates]].copy()


def gradient_covariance(
    posterior: LatentPosterior,
    center,
    bounds: BoxBounds,
    config: DbsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Second moment of the predictive mean gradient near the incumbent.

    Draws grad_samples points uniformly from the ball of radius
    neighborhood_scale * ||width|| around the center (clipped to the
    box) and averages the outer products of the mean gradients there.
    """
    surface = PosteriorSurface(posterior)
    return _gradient_covariance_impl(surface, center, bounds, config, rng)


def _gradient_covariance_impl(surface, center, bounds, config, rng) -> np.ndarray:
    c = np.asarray(center, dtype=float).reshape(-1)
    if c.shape[0] != bounds.dim:
        raise ContractError("center dimension does not match the bounds")
    radius = config.neighborhood_scale * float(np.linalg.norm(bounds.width))
    dirs = rng.standard_normal((config.grad_samples, bounds.dim))
    norms = np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    radii = radius * rng.random(config.grad_samples) ** (1.0 / bounds.dim)
    points = bounds.clip(c + dirs / norms * radii[:, None])
    _, _, grads, _ = surface.mean_variance_grads(points)
    cov = grads.T @ grads / config.grad_samples
    return 0.5 * (cov + cov.T)


def spectral_gap_dim(eigenvalues, threshold: float = 2.0) -> int:
    """Subspace dimension from the first spectral gap.

    Given non-negative eigenvalues sorted in non-increasing order,
    returns the smallest i with lam[i-1] / lam[i] >= threshold
    (1-based), falling back to the largest ratio when no gap clears
    the threshold.  Ratios with a zero denominator count as infinite
    when the numerator is positive and as 1 when both are zero.  A
    single eigenvalue yields dimension 1.
    """
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)
    if lam.size == 0:
        raise ContractError("eigenvalues must be non-empty")
    if np.any(lam < -1e-12):
        raise ContractError("eigenvalues must be non-negative")
    lam = np.clip(lam, 0.0, None)
    if np.any(lam[:-1] < lam[1:] - 1e-12 * max(1.0, float(lam[0]))):
        raise ContractError("eigenvalues must be sorted in non-increasing order")
    if lam.size < 2:
        return 1
    num, den = lam[:-1], lam[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(
            den > 0.0, num / np.where(den > 0.0, den, 1.0),
            np.where(num > 0.0, np.inf, 1.0),
        )
    above = np.nonzero(ratios >= threshold)[0]
    if above.size:
        return int(above[0]) + 1
    return int(np.argmax(ratios)) + 1


@dataclass
class SubspaceBasis:
    """Eigen-decomposition of the gradient covariance, largest first."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    selected_dim: int


@dataclass
class DbsInfo:
    """Diagnostics of one batch proposal."""

    x_ei: np.ndarray
    basis: SubspaceBasis
    bridge: np.ndarray


def _force_distinct(candidates: np.ndarray, bounds: BoxBounds) -> np.ndarray:
    out = candidates.copy()
    eps = 1e-6 * bounds.width
    for i in range(1, out.shape[0]):
        attempt = 0
        while any(np.array_equal(out[i], out[j]) for j in range(i)):
            dim = attempt % bounds.dim
            sign = 1.0 if (attempt // bounds.dim) % 2 == 0 else -1.0
            nudged = out[i].copy()
            nudged[dim] += sign * (attempt + 1) * eps[dim]
            out[i] = bounds.clip(nudged)
            attempt += 1
            if attempt > 4 * bounds.dim:
                raise ContractError("could not separate duplicate candidates")
    return out


def dbs_propose(
    posterior: LatentPosterior,
    incumbent,
    bounds: BoxBounds,
    config: DbsConfig,
    rng: np.random.Generator,
    return_info: bool = False,
):
    """Propose the next batch of candidates.

    Returns a (num_candidates, d) array inside the bounds with pairwise
    distinct rows; with return_info=True also returns the DbsInfo
    diagnostics (EI point, eigen-basis, selected dimension, bridge).
    """
    x_best = np.asarray(incumbent, dtype=float).reshape(-1)
    if x_best.shape[0] != bounds.dim:
        raise ContractError("incumbent dimension does not match the bounds")
    if not bounds.contains(x_best):
        raise ContractError("incumbent must lie inside the bounds")
    surface = PosteriorSurface(posterior)
    x_ei = _maximize_ei_impl(surface, bounds, config, rng)
    gammas = config.gamma_schedule
    bridge = x_best[None, :] + gammas[:, None] * (x_ei - x_best)[None, :]
    cov = _gradient_covariance_impl(surface, x_best, bounds, config, rng)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    dim = spectral_gap_dim(vals, config.spectral_threshold)
    basis = SubspaceBasis(eigenvalues=vals, vectors=vecs, selected_dim=dim)
    sigma = config.perturb_scale * float(np.mean(bounds.width))
    candidates = bounds.clip(bridge)
    if sigma > 0.0 and vals[0] > 1e-12:
        weights = np.sqrt(vals[:dim] / vals[0])
        for _ in range(10):
            coeff = rng.uniform(-1.0, 1.0, size=(config.num_candidates, dim))
            shifted = bridge + sigma * (coeff * weights) @ vecs[:, :dim].T
            candidates = bounds.clip(shifted)
            if len({tuple(row) for row in candidates}) == config.num_candidates:
                break
    if len({tuple(row) for row in candidates}) != config.num_candidates:
        candidates = _force_distinct(candidates, bounds)
    if return_info:
        return candidates, DbsInfo(x_ei=x_ei, basis=basis, bridge=bridge)
    return candidates
