"""Benchmark ablations: feedback richness, choice-set size, proposer parts.

Each ablation runs paired autonomous sessions over a seed sweep (seed s
drives both the optimizer and, for warp tasks, the hidden warp, so
variants face identical task instances) and aggregates simple regret
per round into median and quartile curves.

Reports are byte-deterministic: variants are run in a fixed order,
seeds ascending, and all floats serialize via repr.  Every variant
carries a hash of its full configuration for provenance.

The acquisition settings default to a lighter screen than interactive
sessions use; benchmark sweeps run hundreds of rounds on one core and
the extra polish does not change the direction results.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import DbsConfig
from .errors import ContractError
from .likelihoods import LikelihoodModel
from .objectives import ChoiceNoiseModel, make_objective
from .session import SessionConfig, run_autonomous

NOISE_MODES = ("argmax", "k-scaled")


@dataclass(frozen=True)
class BenchmarkSpec:
    objective: str = "warp-affine8"
    budget: int = 50
    seeds: int = 20
    seed_offset: int = 0
    k_values: tuple = (2, 4, 6, 10)
    noise: str = "k-scaled"
    init_batches: int = 10
    field_size: int = 48
    ei_restarts: int = 8
    ei_raw_samples: int = 1024
    ei_max_iter: int = 60
    grad_samples: int = 32

    def __post_init__(self):
        if self.seeds < 1:
            raise ContractError("seeds must be at least 1")
        if self.budget < 0:
            raise ContractError("budget must be non-negative")
        if any(k < 2 for k in self.k_values):
            raise ContractError("all k values must be at least 2")
        if self.noise not in NOISE_MODES:
            raise ContractError(f"noise must be one of {NOISE_MODES}")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "budget": self.budget,
            "seeds": self.seeds,
            "seed_offset": self.seed_offset,
            "k_values": list(self.k_values),
            "noise": self.noise,
            "init_batches": self.init_batches,
            "field_size": self.field_size,
            "ei_restarts": self.ei_restarts,
            "ei_raw_samples": self.ei_raw_samples,
            "ei_max_iter": self.ei_max_iter,
            "grad_samples": self.grad_samples,
        }


@dataclass
class VariantCurve:
    name: str
    k: int
    likelihood: str
    proposal: str
    noise: dict
    rounds: list
    median: list
    q25: list
    q75: list
    final_regrets: list
    config_hash: str
    dim_trace: list

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "k": self.k,
            "likelihood": self.likelihood,
            "proposal": self.proposal,
            "noise": self.noise,
            "rounds": self.rounds,
            "median": self.median,
            "q25": self.q25,
            "q75": self.q75,
            "final_regrets": self.final_regrets,
            "config_hash": self.config_hash,
            "dim_trace": self.dim_trace,
        }


@dataclass
class AblationReport:
    ablation: str
    spec: dict
    variants: list
    comparisons: dict

    def to_dict(self) -> dict:
        return {
            "ablation": self.ablation,
            "spec": self.spec,
            "variants": [v.to_dict() for v in self.variants],
            "comparisons": self.comparisons,
        }


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _noise_model(spec: BenchmarkSpec, k: int) -> ChoiceNoiseModel:
    if spec.noise == "argmax":
        return ChoiceNoiseModel(kind="argmax")
    return ChoiceNoiseModel(kind="gumbel-logit", temperature=1.0 + 0.15 * (k - 2))


def _dbs_config(spec: BenchmarkSpec, k: int, overrides: dict | None = None) -> DbsConfig:
    cfg = DbsConfig(
        num_candidates=k,
        ei_restarts=spec.ei_restarts,
        ei_raw_samples=spec.ei_raw_samples,
        ei_max_iter=spec.ei_max_iter,
        grad_samples=spec.grad_samples,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _run_variant(
    spec: BenchmarkSpec,
    name: str,
    k: int,
    likelihood_kind: str,
    noise: ChoiceNoiseModel,
    proposal: str = "dbs",
    dbs_overrides: dict | None = None,
    objective_name: str | None = None,
) -> VariantCurve:
    objective_name = objective_name or spec.objective
    likelihood = LikelihoodModel(kind=likelihood_kind)
    regrets = []
    dims = []
    for offset in range(spec.seeds):
        seed = spec.seed_offset + offset
        objective = make_objective(objective_name, task_seed=seed, size=spec.field_size)
        config = SessionConfig(
            bounds=objective.bounds,
            budget=spec.budget,
            choices_per_round=k,
            init_batches=spec.init_batches,
            likelihood=likelihood,
            dbs=_dbs_config(spec, k, dbs_overrides),
            proposal=proposal,
            seed=seed,
        )
        state = run_autonomous(config, objective, noise)
        regrets.append([row.regret for row in state.trajectory])
        dims.append([row.subspace_dim for row in state.trajectory])
    table = np.asarray(regrets, dtype=float)
    rounds = list(range(1, table.shape[1] + 1))
    median = [float(v) for v in np.median(table, axis=0)]
    q25 = [float(v) for v in np.percentile(table, 25, axis=0)]
    q75 = [float(v) for v in np.percentile(table, 75, axis=0)]
    dim_trace = []
    for round_pos in range(table.shape[1]):
        col = [d[round_pos] for d in dims if d[round_pos] is not None]
        dim_trace.append(float(np.median(col)) if col else None)
    hash_payload = {
        "spec": spec.to_dict(),
        "variant": name,
        "k": k,
        "likelihood": likelihood_kind,
        "proposal": proposal,
        "noise": noise.to_dict(),
        "dbs_overrides": dbs_overrides or {},
        "objective": objective_name,
    }
    return VariantCurve(
        name=name,
        k=k,
        likelihood=likelihood_kind,
        proposal=proposal,
        noise=noise.to_dict(),
        rounds=rounds,
        median=median,
        q25=q25,
        q75=q75,
        final_regrets=[float(r[-1]) for r in regrets],
        config_hash=config_hash(hash_payload),
        dim_trace=dim_trace,
    )


def _dominates_from(challenger: list, baseline: list) -> int | None:
    """First round from which the challenger's median never exceeds the baseline's."""
    limit = len(challenger)
    start = None
    for i in range(limit):
        if challenger[i] <= baseline[i] + 1e-12:
            if start is None:
                start = i + 1
        else:
            start = None
    return start


def run_ablation_pairwise_vs_multiwise(spec: BenchmarkSpec) -> AblationReport:
    """Two-candidate pairwise feedback against the K-candidate choice set."""
    k_multi = spec.k_values[1] if len(spec.k_values) >= 2 else 4
    noise = _noise_model(spec, 2) if spec.noise == "k-scaled" else ChoiceNoiseModel("argmax")
    pairwise = _run_variant(spec, "pairwise-k2", 2, "pairwise-logit", noise)
    noise_multi = (
        _noise_model(spec, k_multi) if spec.noise == "k-scaled" else ChoiceNoiseModel("argmax")
    )
    multiwise = _run_variant(
        spec, f"multiwise-k{k_multi}", k_multi, "multinomial-logit", noise_multi
    )
    wins = sum(
        1 for a, b in zip(multiwise.final_regrets, pairwise.final_regrets) if a < b
    )
    comparisons = {
        "final_median_pairwise": pairwise.median[-1],
        "final_median_multiwise": multiwise.median[-1],
        "multiwise_better_final": multiwise.median[-1] < pairwise.median[-1],
        "multiwise_final_win_rate": wins / spec.seeds,
        "multiwise_dominates_from_round": _dominates_from(
            multiwise.median, pairwise.median
        ),
    }
    return AblationReport(
        ablation="pairwise-vs-multiwise",
        spec=spec.to_dict(),
        variants=[pairwise, multiwise],
        comparisons=comparisons,
    )


def run_ablation_choice_k(spec: BenchmarkSpec) -> AblationReport:
    """Choice-set size sweep under the configured user model."""
    variants = []
    for k in spec.k_values:
        variants.append(
            _run_variant(spec, f"choice-k{k}", k, "multinomial-logit", _noise_model(spec, k))
        )
    finals = {v.k: v.median[-1] for v in variants}
    ordered = [finals[k] for k in spec.k_values]
    comparisons = {
        "final_median_by_k": {str(v.k): v.median[-1] for v in variants},
        "monotone_non_increasing": all(
            ordered[i + 1] <= ordered[i] + 1e-12 for i in range(len(ordered) - 1)
        ),
    }
    if 4 in finals and 10 in finals:
        comparisons["k10_minus_k4_final_median"] = finals[10] - finals[4]
        comparisons["k10_worse_than_k4"] = finals[10] > finals[4]
    return AblationReport(
        ablation="choice-k",
        spec=spec.to_dict(),
        variants=variants,
        comparisons=comparisons,
    )


def run_ablation_dbs_components(spec: BenchmarkSpec) -> AblationReport:
    """Isolate the proposer's parts: bridge, subspace, screen, random."""
    k = spec.k_values[0] if len(spec.k_values) == 1 else 4
    noise = ChoiceNoiseModel("argmax") if spec.noise == "argmax" else _noise_model(spec, k)
    variants = [
        _run_variant(spec, "full-dbs", k, "multinomial-logit", noise),
        _run_variant(
            spec, "bridge-only", k, "multinomial-logit", noise,
            dbs_overrides={"perturb_scale": 0.0},
        ),
        _run_variant(
            spec, "subspace-only", k, "multinomial-logit", noise,
            dbs_overrides={"gammas": tuple(0.0 for _ in range(k))},
        ),
        _run_variant(spec, "ei-top-k", k, "multinomial-logit", noise, proposal="ei-top-k"),
        _run_variant(spec, "random", k, "multinomial-logit", noise, proposal="random"),
    ]
    by_name = {v.name: v for v in variants}
    comparisons = {
        "final_median_by_variant": {v.name: v.median[-1] for v in variants},
        "full_dbs_beats_random": by_name["full-dbs"].median[-1]
        < by_name["random"].median[-1],
    }
    return AblationReport(
        ablation="dbs-components",
        spec=spec.to_dict(),
        variants=variants,
        comparisons=comparisons,
    )


def _variant_tsv(variant: VariantCurve) -> str:
    lines = ["round\tmedian_regret\tq25\tq75\tmedian_subspace_dim\tconfig_hash"]
    for i, round_no in enumerate(variant.rounds):
        dim = variant.dim_trace[i]
        dim_text = repr(dim) if dim is not None else ""
        lines.append(
            f"{round_no}\t{variant.median[i]!r}\t{variant.q25[i]!r}\t{variant.q75[i]!r}"
            f"\t{dim_text}\t{variant.config_hash}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: AblationReport, out_dir) -> list:
    """Write one TSV per variant plus summary.json; returns written paths."""
    base = Path(out_dir) / report.ablation
    base.mkdir(parents=True, exist_ok=True)
    written = []
    for variant in report.variants:
        path = base / f"{variant.name}.tsv"
        path.write_text(_variant_tsv(variant), encoding="utf-8")
        written.append(path)
    summary = base / "summary.json"
    summary.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(summary)
    return written
