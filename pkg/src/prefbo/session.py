"""The interactive optimization loop and its persistence format.

A session proposes batches of K candidates, waits for the round's
winners, refits the latent posterior over the whole archive, and
tracks the incumbent (the archive point with the highest posterior
mean).  The first init_batches rounds come from a scrambled Sobol
schedule drawn once at session creation; later rounds come from the
configured proposer.

All randomness lives in one Generator seeded from the config, so a
session is a deterministic function of (config, sequence of winners).
States serialize to a versioned JSON document after every transition;
replaying the recorded winners from the config reproduces the archive,
posterior, and incumbent exactly, which is both the crash-recovery
story and a strong regression check.

The comparison budget covers the post-init rounds by default; setting
init_counts_against_budget makes the init rounds consume it too.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .acquisition import (
    BoxBounds,
    DbsConfig,
    PosteriorSurface,
    dbs_propose,
    ei_topk_propose,
)
from .errors import BudgetExhausted, ContractError, NumericalError, ProtocolError
from .gp import KernelConfig
from .likelihoods import (
    LatentPosterior,
    LikelihoodModel,
    MAX_SUBSET_CHOICES,
    PreferenceObservation,
    laplace_fit,
)
from .objectives import (
    ChoiceNoiseModel,
    HiddenObjective,
    objective_eval,
    objective_from_descriptor,
    render_candidate,
    simulate_choice,
)

SESSION_FORMAT = "prefbo-session"
SESSION_VERSION = 1

PROPOSAL_KINDS = ("dbs", "ei-top-k", "random")


@dataclass(frozen=True)
class SessionConfig:
    bounds: BoxBounds
    budget: int = 50
    choices_per_round: int = 4
    init_batches: int = 10
    kernel: KernelConfig | None = None
    likelihood: LikelihoodModel = field(default_factory=LikelihoodModel)
    dbs: DbsConfig | None = None
    proposal: str = "dbs"
    init_counts_against_budget: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise ContractError("budget must be non-negative")
        if self.choices_per_round < 2:
            raise ContractError("choices_per_round must be at least 2")
        if self.init_batches < 1:
            raise ContractError("init_batches must be at least 1")
        if self.proposal not in PROPOSAL_KINDS:
            raise ContractError(f"proposal must be one of {PROPOSAL_KINDS}")
        if self.likelihood.kind in ("pairwise-probit", "pairwise-logit"):
            if self.choices_per_round != 2:
                raise ContractError("pairwise likelihoods need choices_per_round = 2")
        if self.likelihood.kind == "subset-logit" and self.choices_per_round > MAX_SUBSET_CHOICES:
            raise ContractError(
                f"subset-logit sessions are limited to {MAX_SUBSET_CHOICES} choices per round"
            )
        if self.dbs is not None and self.dbs.num_candidates != self.choices_per_round:
            raise ContractError("dbs num_candidates must equal choices_per_round")

    def resolved_dbs(self) -> DbsConfig:
        if self.dbs is not None:
            return self.dbs
        return DbsConfig(num_candidates=self.choices_per_round)

    def total_rounds(self) -> int:
        if self.init_counts_against_budget:
            return self.budget
        return self.init_batches + self.budget

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.to_dict(),
            "budget": self.budget,
            "choices_per_round": self.choices_per_round,
            "init_batches": self.init_batches,
            "kernel": self.kernel.to_dict() if self.kernel is not None else None,
            "likelihood": self.likelihood.to_dict(),
            "dbs": self.dbs.to_dict() if self.dbs is not None else None,
            "proposal": self.proposal,
            "init_counts_against_budget": self.init_counts_against_budget,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SessionConfig":
        return cls(
            bounds=BoxBounds.from_dict(payload["bounds"]),
            budget=payload["budget"],
            choices_per_round=payload["choices_per_round"],
            init_batches=payload["init_batches"],
            kernel=KernelConfig.from_dict(payload["kernel"]) if payload.get("kernel") else None,
            likelihood=LikelihoodModel.from_dict(payload["likelihood"]),
            dbs=DbsConfig.from_dict(payload["dbs"]) if payload.get("dbs") else None,
            proposal=payload["proposal"],
            init_counts_against_budget=payload["init_counts_against_budget"],
            seed=payload["seed"],
        )


@dataclass
class PendingBatch:
    round_index: int
    batch_id: str
    indices: list
    subspace_dim: int | None = None

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "batch_id": self.batch_id,
            "indices": list(self.indices),
            "subspace_dim": self.subspace_dim,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PendingBatch":
        return cls(
            round_index=payload["round_index"],
            batch_id=payload["batch_id"],
            indices=list(payload["indices"]),
            subspace_dim=payload.get("subspace_dim"),
        )


@dataclass
class TrajectoryRow:
    round_index: int
    incumbent_index: int
    incumbent_value: float
    true_objective: float | None = None
    regret: float | None = None
    subspace_dim: int | None = None

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "incumbent_index": self.incumbent_index,
            "incumbent_value": self.incumbent_value,
            "true_objective": self.true_objective,
            "regret": self.regret,
            "subspace_dim": self.subspace_dim,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrajectoryRow":
        return cls(**payload)


@dataclass
class SessionBest:
    theta: np.ndarray
    value: float
    render: object = None


class SessionState:
    """Mutable session record; transitions happen through the functions below."""

    def __init__(self, config: SessionConfig, kernel: KernelConfig, rng: np.random.Generator,
                 init_schedule: np.ndarray):
        self.config = config
        self.kernel = kernel
        self.rng = rng
        self.init_schedule = init_schedule
        self.archive = np.zeros((0, config.bounds.dim))
        self.observations: list = []
        self.posterior: LatentPosterior | None = None
        self.incumbent_index: int | None = None
        self.incumbent_value: float | None = None
        self.pending: PendingBatch | None = None
        self.trajectory: list = []
        self.task: HiddenObjective | None = None

    @property
    def completed_rounds(self) -> int:
        return len(self.observations)

    def remaining_rounds(self) -> int:
        return self.config.total_rounds() - self.completed_rounds

    def pending_points(self) -> np.ndarray:
        if self.pending is None:
            raise ProtocolError("no batch is awaiting feedback")
        return self.archive[self.pending.indices].copy()


def _median_heuristic_kernel(points: np.ndarray) -> KernelConfig:
    # Per-dimension median heuristic: the median absolute coordinate gap
    # tracks each box width, so wide and narrow inputs get equal resolution.
    iu, ju = np.triu_indices(points.shape[0], k=1)
    gaps = np.abs(points[iu] - points[ju])
    scales = np.median(gaps, axis=0)
    fallback = float(np.median(gaps[gaps > 0])) if np.any(gaps > 0) else 1.0
    scales = np.where(scales > 0, scales, fallback)
    return KernelConfig(
        family="matern52",
        lengthscales=tuple(float(s) for s in scales),
        signal_variance=1.0,
    )


def session_init(config: SessionConfig) -> SessionState:
    """Draw the Sobol init schedule, resolve the kernel, open round 1."""
    rng = np.random.default_rng(config.seed)
    engine = qmc.Sobol(
        d=config.bounds.dim, scramble=True, seed=int(rng.integers(2**31 - 1))
    )
    total = config.init_batches * config.choices_per_round
    exponent = max(1, math.ceil(math.log2(total)))
    unit = engine.random_base2(m=exponent)[:total]
    points = config.bounds.lower + unit * config.bounds.width
    schedule = points.reshape(config.init_batches, config.choices_per_round, config.bounds.dim)
    kernel = config.kernel if config.kernel is not None else _median_heuristic_kernel(points)
    state = SessionState(config=config, kernel=kernel, rng=rng, init_schedule=schedule)
    _open_batch(state, schedule[0], subspace_dim=None)
    return state


def _open_batch(state: SessionState, points: np.ndarray, subspace_dim) -> None:
    start = state.archive.shape[0]
    state.archive = np.vstack([state.archive, points])
    round_index = state.completed_rounds + 1
    state.pending = PendingBatch(
        round_index=round_index,
        batch_id=f"round-{round_index}",
        indices=list(range(start, start + points.shape[0])),
        subspace_dim=subspace_dim,
    )


def session_record_choice(state: SessionState, winners) -> SessionState:
    """Record the round's winners, refit the posterior, update the incumbent."""
    if state.pending is None:
        raise ProtocolError("no batch is awaiting feedback")
    positions = sorted(int(w) for w in winners)
    if not positions:
        raise ContractError("winners must be non-empty")
    k = len(state.pending.indices)
    if len(set(positions)) != len(positions) or positions[0] < 0 or positions[-1] >= k:
        raise ContractError("winners must be distinct positions within the pending batch")
    if state.config.likelihood.kind != "subset-logit" and len(positions) != 1:
        raise ContractError(
            f"{state.config.likelihood.kind} accepts exactly one winner per round"
        )
    observation = PreferenceObservation(
        choice_set=tuple(state.pending.indices), winners=tuple(positions)
    )
    pending = state.pending
    state.observations.append(observation)
    state.posterior = laplace_fit(
        state.archive, state.observations, state.kernel, state.config.likelihood
    )
    surface = PosteriorSurface(state.posterior)
    means = surface.mean_at_archive()
    state.incumbent_index = int(np.argmax(means))
    state.incumbent_value = float(means[state.incumbent_index])
    state.pending = None
    state.trajectory.append(
        TrajectoryRow(
            round_index=state.completed_rounds,
            incumbent_index=state.incumbent_index,
            incumbent_value=state.incumbent_value,
            subspace_dim=pending.subspace_dim,
        )
    )
    return state


def session_next_batch(state: SessionState) -> np.ndarray:
    """Propose the next round: the Sobol schedule during init, then the proposer."""
    if state.pending is not None:
        raise ProtocolError("a batch is already awaiting feedback")
    completed = state.completed_rounds
    if completed >= state.config.total_rounds():
        raise BudgetExhausted(
            f"all {state.config.total_rounds()} rounds have been consumed"
        )
    if completed < state.config.init_batches:
        points = state.init_schedule[completed]
        dim = None
    else:
        if state.posterior is None:
            raise ProtocolError("cannot propose before the first posterior fit")
        dbs_cfg = state.config.resolved_dbs()
        if state.config.proposal == "dbs":
            incumbent = state.archive[state.incumbent_index]
            points, info = dbs_propose(
                state.posterior, incumbent, state.config.bounds, dbs_cfg, state.rng,
                return_info=True,
            )
            dim = info.basis.selected_dim
        elif state.config.proposal == "ei-top-k":
            points = ei_topk_propose(state.posterior, state.config.bounds, dbs_cfg, state.rng)
            dim = None
        else:
            points = state.config.bounds.sample(state.rng, state.config.choices_per_round)
            dim = None
    _open_batch(state, points, subspace_dim=dim)
    return state.pending_points()


def session_best(state: SessionState) -> SessionBest:
    """Incumbent parameters, posterior mean value, and render for warp tasks."""
    if state.posterior is None:
        raise ProtocolError("no posterior has been fitted yet")
    theta = state.archive[state.incumbent_index].copy()
    render = None
    if state.task is not None and state.task.kind == "warp-match":
        render = render_candidate(state.task, theta)
    return SessionBest(theta=theta, value=float(state.incumbent_value), render=render)


def run_autonomous(
    config: SessionConfig,
    objective: HiddenObjective,
    choice_model: ChoiceNoiseModel,
) -> SessionState:
    """Close the loop with a simulated chooser; fills true regret per round."""
    if objective.bounds.dim != config.bounds.dim:
        raise ContractError("objective bounds do not match the session bounds")
    if not (
        np.allclose(objective.bounds.lower, config.bounds.lower)
        and np.allclose(objective.bounds.upper, config.bounds.upper)
    ):
        raise ContractError("objective bounds do not match the session bounds")
    if choice_model.kind == "subset-threshold" and config.likelihood.kind != "subset-logit":
        raise ContractError("subset-threshold feedback requires the subset-logit likelihood")
    state = session_init(config)
    state.task = objective
    choice_rng = np.random.default_rng([int(config.seed), 0x5EED])
    true_values: dict = {}
    while True:
        points = state.pending_points()
        values = np.array([objective_eval(objective, theta) for theta in points])
        for pos, idx in enumerate(state.pending.indices):
            true_values[idx] = float(values[pos])
        winners = simulate_choice(values, choice_model, choice_rng)
        session_record_choice(state, winners)
        row = state.trajectory[-1]
        row.true_objective = true_values[state.incumbent_index]
        row.regret = objective.best_value - row.true_objective
        if state.completed_rounds >= state.config.total_rounds():
            break
        session_next_batch(state)
    return state


def trajectory_tsv(state: SessionState) -> str:
    """Tabular export: round, incumbent_value, true_objective, regret."""
    lines = ["round\tincumbent_value\ttrue_objective\tregret"]
    for row in state.trajectory:
        true_text = repr(row.true_objective) if row.true_objective is not None else ""
        regret_text = repr(row.regret) if row.regret is not None else ""
        lines.append(
            f"{row.round_index}\t{row.incumbent_value!r}\t{true_text}\t{regret_text}"
        )
    return "\n".join(lines) + "\n"


def session_to_dict(state: SessionState) -> dict:
    return {
        "format": SESSION_FORMAT,
        "version": SESSION_VERSION,
        "config": state.config.to_dict(),
        "kernel": state.kernel.to_dict(),
        "rng_state": state.rng.bit_generator.state,
        "init_schedule": state.init_schedule.tolist(),
        "archive": state.archive.tolist(),
        "observations": [obs.to_dict() for obs in state.observations],
        "pending": state.pending.to_dict() if state.pending is not None else None,
        "incumbent_index": state.incumbent_index,
        "incumbent_value": state.incumbent_value,
        "posterior": state.posterior.to_dict() if state.posterior is not None else None,
        "trajectory": [row.to_dict() for row in state.trajectory],
        "task": state.task.to_dict() if state.task is not None else None,
    }


def session_from_dict(payload: dict) -> SessionState:
    if payload.get("format") != SESSION_FORMAT:
        raise ContractError("not a session document")
    if payload.get("version") != SESSION_VERSION:
        raise ContractError(f"unsupported session version {payload.get('version')}")
    config = SessionConfig.from_dict(payload["config"])
    kernel = KernelConfig.from_dict(payload["kernel"])
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng_state"]
    state = SessionState(
        config=config,
        kernel=kernel,
        rng=rng,
        init_schedule=np.asarray(payload["init_schedule"], dtype=float),
    )
    state.archive = np.asarray(payload["archive"], dtype=float).reshape(-1, config.bounds.dim)
    state.observations = [PreferenceObservation.from_dict(o) for o in payload["observations"]]
    state.pending = (
        PendingBatch.from_dict(payload["pending"]) if payload.get("pending") else None
    )
    state.incumbent_index = payload.get("incumbent_index")
    state.incumbent_value = payload.get("incumbent_value")
    state.trajectory = [TrajectoryRow.from_dict(r) for r in payload["trajectory"]]
    if payload.get("task") is not None:
        state.task = objective_from_descriptor(payload["task"])
    if payload.get("posterior") is not None:
        # The live flow fits before the next batch is appended, so the
        # restored fit must cover only the rows observed at save time.
        fitted = state.archive
        if state.pending is not None:
            fitted = np.delete(state.archive, state.pending.indices, axis=0)
        state.posterior = laplace_fit(
            fitted,
            state.observations,
            state.kernel,
            config.likelihood,
            f_init=np.asarray(payload["posterior"]["f_map"], dtype=float),
        )
    return state


def save_session(state: SessionState, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(session_to_dict(state), handle)
        handle.write("\n")


def load_session(path) -> SessionState:
    with open(path, "r", encoding="utf-8") as handle:
        return session_from_dict(json.load(handle))


@dataclass
class ReplayReport:
    rounds: int
    max_archive_diff: float
    max_f_map_diff: float
    incumbent_match: bool
    rng_match: bool

    @property
    def passed(self) -> bool:
        return (
            self.max_archive_diff <= 1e-12
            and self.max_f_map_diff <= 1e-12
            and self.incumbent_match
            and self.rng_match
        )


def replay_session(payload: dict) -> ReplayReport:
    """Re-run a recorded session from its config and compare the outcome.

    The fresh run replays the recorded winners in order; archives,
    posterior modes, incumbents, and the generator state must all
    reproduce.
    """
    recorded = session_from_dict(payload)
    fresh = session_init(recorded.config)
    total = len(recorded.observations)
    for index, observation in enumerate(recorded.observations):
        if fresh.pending is None or tuple(fresh.pending.indices) != observation.choice_set:
            raise NumericalError(
                f"replay diverged at round {index + 1}: choice set mismatch"
            )
        session_record_choice(fresh, observation.winners)
        if index + 1 < total or payload.get("pending") is not None:
            session_next_batch(fresh)
    if fresh.archive.shape != recorded.archive.shape:
        raise NumericalError("replay diverged: archive size mismatch")
    archive_diff = (
        float(np.max(np.abs(fresh.archive - recorded.archive))) if fresh.archive.size else 0.0
    )
    if fresh.posterior is not None and recorded.posterior is not None:
        f_map_diff = float(np.max(np.abs(fresh.posterior.f_map - recorded.posterior.f_map)))
    else:
        f_map_diff = 0.0 if (fresh.posterior is None) == (recorded.posterior is None) else math.inf
    incumbent_match = fresh.incumbent_index == recorded.incumbent_index
    if fresh.incumbent_value is not None and recorded.incumbent_value is not None:
        incumbent_match = incumbent_match and abs(
            fresh.incumbent_value - recorded.incumbent_value
        ) <= 1e-12
    rng_match = fresh.rng.bit_generator.state == recorded.rng.bit_generator.state
    return ReplayReport(
        rounds=total,
        max_archive_diff=archive_diff,
        max_f_map_diff=f_map_diff,
        incumbent_match=incumbent_match,
        rng_match=rng_match,
    )
