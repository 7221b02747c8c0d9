"""Choice likelihoods over latent utilities and the Laplace fit.

A round shows the user K candidates; the user reports a winner (or a
winning subset).  Each feedback kind maps latent utilities f to a
log-likelihood:

- pairwise-probit: P(a beats b) = Phi((f_a - f_b) / (sqrt(2) * sigma))
- pairwise-logit:  the two-candidate softmax applied to f / (sqrt(2) * sigma)
- multinomial-logit: P(winner j) = exp(f_j) / sum_i exp(f_i)
- subset-logit: P(subset A) = prod_{j in A} e^{f_j} / (prod_i (1 + e^{f_i}) - 1),
  the normalizer running over all non-empty subsets of the K candidates

All four are computed in log space.  The subset normalizer uses
T = sum_i softplus(f_i) and log(e^T - 1) = T + log(-expm1(-T)), which
stays finite for strongly negative utilities.

The Laplace fit runs a damped Newton ascent of the unnormalized log
posterior (zero-mean GP prior plus the data terms) from f = 0, with
step halving to guarantee monotone ascent, and returns the mode
together with the Gaussian curvature approximation
(K^-1 + W)^-1 where W is the negative data Hessian at the mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_ndtr

from .errors import ContractError, NumericalError
from .gp import KernelConfig, chol_solve, chol_spd, kernel_matrix

LIKELIHOOD_KINDS = (
    "pairwise-probit",
    "pairwise-logit",
    "multinomial-logit",
    "subset-logit",
)

DEFAULT_NOISE_SCALE = 1.0 / math.sqrt(2.0)

MAX_SUBSET_CHOICES = 12

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LikelihoodModel:
    """Feedback model specification.

    noise_scale is the latent noise deviation of the pairwise kinds; at
    the default 1/sqrt(2) the pairwise comparison operates directly on
    utility differences.  The multinomial and subset kinds take the
    utilities at unit scale.
    """

    kind: str = "multinomial-logit"
    noise_scale: float = DEFAULT_NOISE_SCALE

    def __post_init__(self):
        if self.kind not in LIKELIHOOD_KINDS:
            raise ContractError(
                f"unknown likelihood kind {self.kind!r}; expected one of {LIKELIHOOD_KINDS}"
            )
        if not (np.isfinite(self.noise_scale) and self.noise_scale > 0):
            raise ContractError("noise_scale must be finite and strictly positive")

    @property
    def comparison_scale(self) -> float:
        """Multiplier applied to utility differences by the pairwise kinds."""
        return 1.0 / (math.sqrt(2.0) * self.noise_scale)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "noise_scale": self.noise_scale}

    @classmethod
    def from_dict(cls, payload: dict) -> "LikelihoodModel":
        return cls(kind=payload["kind"], noise_scale=payload["noise_scale"])


@dataclass(frozen=True)
class PreferenceObservation:
    """One recorded round: which archive entries were shown, which won.

    choice_set holds distinct archive indices.  winners holds positions
    within the choice set (0-based), sorted and distinct.
    """

    choice_set: tuple
    winners: tuple

    def __post_init__(self):
        cs = tuple(int(i) for i in self.choice_set)
        wn = tuple(sorted(int(w) for w in self.winners))
        if len(cs) < 2:
            raise ContractError("a choice set needs at least two candidates")
        if len(set(cs)) != len(cs):
            raise ContractError("choice_set entries must be distinct")
        if any(i < 0 for i in cs):
            raise ContractError("choice_set entries must be non-negative archive indices")
        if not wn:
            raise ContractError("winners must be non-empty")
        if len(set(wn)) != len(wn):
            raise ContractError("winners must be distinct")
        if wn[0] < 0 or wn[-1] >= len(cs):
            raise ContractError("winners must be positions within the choice set")
        object.__setattr__(self, "choice_set", cs)
        object.__setattr__(self, "winners", wn)

    def to_dict(self) -> dict:
        return {"choice_set": list(self.choice_set), "winners": list(self.winners)}

    @classmethod
    def from_dict(cls, payload: dict) -> "PreferenceObservation":
        return cls(choice_set=tuple(payload["choice_set"]), winners=tuple(payload["winners"]))


def validate_observation(obs: PreferenceObservation, model: LikelihoodModel) -> None:
    k = len(obs.choice_set)
    if model.kind in ("pairwise-probit", "pairwise-logit"):
        if k != 2:
            raise ContractError(f"{model.kind} needs exactly two candidates, got {k}")
        if len(obs.winners) != 1:
            raise ContractError(f"{model.kind} needs exactly one winner")
    elif model.kind == "multinomial-logit":
        if len(obs.winners) != 1:
            raise ContractError("multinomial-logit needs exactly one winner")
    else:
        if k > MAX_SUBSET_CHOICES:
            raise ContractError(
                f"subset-logit enumerates subsets and is limited to {MAX_SUBSET_CHOICES} candidates"
            )


def _as_utilities(f, name: str = "f") -> np.ndarray:
    arr = np.asarray(f, dtype=float).reshape(-1)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


def _mnl_terms(f_subset: np.ndarray, winner: int):
    m = np.max(f_subset)
    lse = m + math.log(np.sum(np.exp(f_subset - m)))
    ll = float(f_subset[winner] - lse)
    p = np.exp(f_subset - lse)
    grad = -p
    grad[winner] += 1.0
    w = np.diag(p) - np.outer(p, p)
    return ll, grad, w


def _probit_terms(f_pair: np.ndarray, winner: int, scale: float):
    loser = 1 - winner
    z = scale * (f_pair[winner] - f_pair[loser])
    ll = float(log_ndtr(z))
    log_pdf = -0.5 * z * z - 0.5 * _LOG_2PI
    ratio = math.exp(log_pdf - ll)
    grad = np.zeros(2)
    grad[winner] = scale * ratio
    grad[loser] = -scale * ratio
    curve = scale * scale * ratio * (z + ratio)
    w = np.empty((2, 2))
    w[winner, winner] = w[loser, loser] = curve
    w[winner, loser] = w[loser, winner] = -curve
    return ll, grad, w


def _subset_terms(f_subset: np.ndarray, winners) -> tuple:
    softplus_total = float(np.sum(np.logaddexp(0.0, f_subset)))
    log_norm_minus = math.log(-math.expm1(-softplus_total))
    ll = float(np.sum(f_subset[list(winners)])) - softplus_total - log_norm_minus
    sig = expit(f_subset)
    beta = math.exp(-log_norm_minus)
    grad = -beta * sig
    grad[list(winners)] += 1.0
    shrink = beta * beta * math.exp(-softplus_total)
    w = beta * np.diag(sig * (1.0 - sig)) - shrink * np.outer(sig, sig)
    return ll, grad, w


def pairwise_loglik(f_pair, winner: int, model: LikelihoodModel) -> float:
    """Log-probability that position `winner` beats the other candidate."""
    f = _as_utilities(f_pair, "f_pair")
    if f.shape[0] != 2:
        raise ContractError(f"f_pair must have length 2, got {f.shape[0]}")
    if winner not in (0, 1):
        raise ContractError("winner must be 0 or 1")
    if model.kind == "pairwise-probit":
        return _probit_terms(f, winner, model.comparison_scale)[0]
    if model.kind == "pairwise-logit":
        return _mnl_terms(model.comparison_scale * f, winner)[0]
    raise ContractError(f"{model.kind} is not a pairwise likelihood")


def multinomial_logit_loglik(f_subset, winner: int) -> float:
    """Log-softmax of the winner position over the choice set."""
    f = _as_utilities(f_subset, "f_subset")
    if f.shape[0] < 2:
        raise ContractError("the choice set needs at least two candidates")
    if not 0 <= winner < f.shape[0]:
        raise ContractError("winner must be a position within the choice set")
    return _mnl_terms(f, winner)[0]


def subset_loglik(f_subset, winners) -> float:
    """Log-probability of the winning subset under the N-of-K model."""
    f = _as_utilities(f_subset, "f_subset")
    if f.shape[0] < 2:
        raise ContractError("the choice set needs at least two candidates")
    if f.shape[0] > MAX_SUBSET_CHOICES:
        raise ContractError(
            f"subset-logit enumerates subsets and is limited to {MAX_SUBSET_CHOICES} candidates"
        )
    wn = tuple(sorted(int(w) for w in winners))
    if not wn or len(set(wn)) != len(wn) or wn[0] < 0 or wn[-1] >= f.shape[0]:
        raise ContractError("winners must be distinct positions within the choice set")
    return _subset_terms(f, wn)[0]


def subset_marginals(f_subset) -> tuple:
    """Exact inclusion marginals of the N-of-K subset distribution.

    Enumerates all 2^K - 1 non-empty subsets (K <= 12) and returns
    (singleton, pairwise): singleton[j] = P(j in A), and
    pairwise[j, k] = P(j in A and k in A) with singleton on its diagonal.
    """
    f = _as_utilities(f_subset, "f_subset")
    k = f.shape[0]
    if k < 1:
        raise ContractError("the choice set must be non-empty")
    if k > MAX_SUBSET_CHOICES:
        raise ContractError(
            f"subset enumeration is limited to {MAX_SUBSET_CHOICES} candidates"
        )
    masks = np.arange(1, 2**k, dtype=np.int64)
    member = (masks[:, None] >> np.arange(k)) & 1
    member = member.astype(float)
    log_w = member @ f
    log_w -= log_w.max()
    weights = np.exp(log_w)
    probs = weights / weights.sum()
    pairwise = (member * probs[:, None]).T @ member
    singleton = np.diag(pairwise).copy()
    return singleton, pairwise


def observation_loglik(f_full, obs: PreferenceObservation, model: LikelihoodModel) -> float:
    f = _as_utilities(f_full, "f_full")
    if max(obs.choice_set) >= f.shape[0]:
        raise ContractError("observation references a point beyond the archive")
    sub = f[list(obs.choice_set)]
    validate_observation(obs, model)
    if model.kind == "pairwise-probit":
        return _probit_terms(sub, obs.winners[0], model.comparison_scale)[0]
    if model.kind == "pairwise-logit":
        return _mnl_terms(model.comparison_scale * sub, obs.winners[0])[0]
    if model.kind == "multinomial-logit":
        return _mnl_terms(sub, obs.winners[0])[0]
    return _subset_terms(sub, obs.winners)[0]


def total_loglik(f_full, observations, model: LikelihoodModel) -> float:
    return float(sum(observation_loglik(f_full, obs, model) for obs in observations))


def loglik_grad_hess(f_full, observations, model: LikelihoodModel) -> tuple:
    """Gradient and negative Hessian of the summed data log-likelihood.

    Returns (grad, w) where grad has the length of f_full and
    w = -d^2/df^2 of the data term, assembled by scattering each
    observation's local block into the full matrix.
    """
    f = _as_utilities(f_full, "f_full")
    n = f.shape[0]
    grad = np.zeros(n)
    w = np.zeros((n, n))
    for obs in observations:
        if max(obs.choice_set) >= n:
            raise ContractError("observation references a point beyond the archive")
        validate_observation(obs, model)
        idx = np.asarray(obs.choice_set, dtype=int)
        sub = f[idx]
        if model.kind == "pairwise-probit":
            _, g_loc, w_loc = _probit_terms(sub, obs.winners[0], model.comparison_scale)
        elif model.kind == "pairwise-logit":
            scale = model.comparison_scale
            _, g_loc, w_loc = _mnl_terms(scale * sub, obs.winners[0])
            g_loc = scale * g_loc
            w_loc = scale * scale * w_loc
        elif model.kind == "multinomial-logit":
            _, g_loc, w_loc = _mnl_terms(sub, obs.winners[0])
        else:
            _, g_loc, w_loc = _subset_terms(sub, obs.winners)
        grad[idx] += g_loc
        w[np.ix_(idx, idx)] += w_loc
    w = 0.5 * (w + w.T)
    return grad, w


def _repair_psd(mat: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues to zero (deterministic symmetric repair)."""
    vals, vecs = np.linalg.eigh(mat)
    if vals[0] >= 0.0:
        return mat
    clipped = np.clip(vals, 0.0, None)
    repaired = (vecs * clipped) @ vecs.T
    return 0.5 * (repaired + repaired.T)


@dataclass
class LatentPosterior:
    """Laplace approximation of the latent utilities at the archive."""

    archive: np.ndarray
    kernel: KernelConfig
    model: LikelihoodModel
    observations: list
    f_map: np.ndarray
    prior_cov: np.ndarray
    prior_chol: np.ndarray
    posterior_cov: np.ndarray
    grad_norm: float
    iterations: int

    def log_posterior_gradient(self) -> np.ndarray:
        """Gradient of the unnormalized log posterior at the stored mode."""
        g_data, _ = loglik_grad_hess(self.f_map, self.observations, self.model)
        return g_data - chol_solve(self.prior_chol, self.f_map)

    def to_dict(self) -> dict:
        return {
            "f_map": self.f_map.tolist(),
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
        }


def _log_posterior(f: np.ndarray, prior_chol: np.ndarray, observations, model) -> float:
    quad = float(f @ chol_solve(prior_chol, f))
    return total_loglik(f, observations, model) - 0.5 * quad


def laplace_fit(
    archive_points,
    observations,
    kernel: KernelConfig,
    model: LikelihoodModel,
    *,
    f_init=None,
    grad_tol: float = 1e-6,
    max_iter: int = 100,
    max_step_halvings: int = 20,
) -> LatentPosterior:
    """Damped Newton ascent to the posterior mode over archive utilities.

    Starts from f = 0 (or f_init), halves the step until the
    unnormalized log posterior does not decrease, and stops when the
    max-norm of its gradient falls to grad_tol.  Raises NumericalError
    when the ascent stalls or the iteration cap is hit first.
    """
    archive = np.asarray(archive_points, dtype=float)
    if archive.ndim == 1:
        archive = archive[:, None]
    n = archive.shape[0]
    observations = list(observations)
    for obs in observations:
        if max(obs.choice_set) >= n:
            raise ContractError("observation references a point beyond the archive")
        validate_observation(obs, model)
    prior_cov = kernel_matrix(archive, archive, kernel)
    prior_chol = chol_spd(prior_cov, kernel.effective_jitter)
    f = np.zeros(n) if f_init is None else np.asarray(f_init, dtype=float).copy()
    if f.shape != (n,):
        raise ContractError(f"f_init must have shape ({n},)")

    identity = np.eye(n)
    prior_inv = chol_solve(prior_chol, identity)
    prior_inv = 0.5 * (prior_inv + prior_inv.T)

    current = _log_posterior(f, prior_chol, observations, model)
    converged = False
    grad_norm = math.inf
    iterations = 0
    w = np.zeros((n, n))
    for iterations in range(1, max_iter + 1):
        g_data, w = loglik_grad_hess(f, observations, model)
        grad = g_data - prior_inv @ f
        grad_norm = float(np.max(np.abs(grad))) if n else 0.0
        if grad_norm <= grad_tol:
            converged = True
            break
        curvature = prior_inv + w
        try:
            step_chol = np.linalg.cholesky(curvature)
        except np.linalg.LinAlgError:
            w = _repair_psd(w)
            curvature = prior_inv + w
            step_chol = chol_spd(curvature, kernel.effective_jitter)
        direction = chol_solve(step_chol, grad)
        scale = 1.0
        accepted = False
        for _ in range(max_step_halvings + 1):
            candidate = f + scale * direction
            value = _log_posterior(candidate, prior_chol, observations, model)
            if value >= current:
                f = candidate
                current = value
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            g_data, _ = loglik_grad_hess(f, observations, model)
            grad_norm = float(np.max(np.abs(g_data - prior_inv @ f)))
            if grad_norm <= grad_tol * 10.0:
                converged = True
                break
            raise NumericalError(
                f"Newton ascent stalled at gradient norm {grad_norm:.3e}"
            )
    if not converged:
        raise NumericalError(
            f"Laplace fit did not reach gradient tolerance {grad_tol:.1e} "
            f"in {max_iter} iterations (last norm {grad_norm:.3e})"
        )

    _, w = loglik_grad_hess(f, observations, model)
    w = _repair_psd(w)
    curvature = prior_inv + w
    curvature = 0.5 * (curvature + curvature.T)
    curv_chol = chol_spd(curvature, kernel.effective_jitter)
    posterior_cov = chol_solve(curv_chol, identity)
    posterior_cov = 0.5 * (posterior_cov + posterior_cov.T)
    return LatentPosterior(
        archive=archive,
        kernel=kernel,
        model=model,
        observations=observations,
        f_map=f,
        prior_cov=prior_cov,
        prior_chol=prior_chol,
        posterior_cov=posterior_cov,
        grad_norm=grad_norm,
        iterations=iterations,
    )
