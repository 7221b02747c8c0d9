import json

import numpy as np
import pytest

from prefbo.bench import (
    AblationReport,
    BenchmarkSpec,
    config_hash,
    run_ablation_choice_k,
    run_ablation_dbs_components,
    run_ablation_pairwise_vs_multiwise,
    write_report,
)
from prefbo.errors import ContractError

LIGHT = dict(
    objective="sphere-2d",
    budget=2,
    seeds=1,
    init_batches=2,
    ei_restarts=2,
    ei_raw_samples=64,
    ei_max_iter=20,
    grad_samples=16,
)


def test_spec_validation():
    with pytest.raises(ContractError):
        BenchmarkSpec(seeds=0)
    with pytest.raises(ContractError):
        BenchmarkSpec(budget=-1)
    with pytest.raises(ContractError):
        BenchmarkSpec(k_values=(1, 4))
    with pytest.raises(ContractError):
        BenchmarkSpec(noise="loud")


def test_choice_k_report_shape():
    spec = BenchmarkSpec(k_values=(2, 3), noise="k-scaled", **LIGHT)
    report = run_ablation_choice_k(spec)
    assert report.ablation == "choice-k"
    assert [v.k for v in report.variants] == [2, 3]
    total_rounds = spec.init_batches + spec.budget
    for variant in report.variants:
        assert variant.rounds == list(range(1, total_rounds + 1))
        assert len(variant.median) == total_rounds
        assert len(variant.q25) == total_rounds
        assert len(variant.q75) == total_rounds
        assert len(variant.final_regrets) == spec.seeds
        assert len(variant.dim_trace) == total_rounds
        # init rounds carry no subspace dimension, optimizer rounds do
        assert all(d is None for d in variant.dim_trace[: spec.init_batches])
        assert all(d is not None for d in variant.dim_trace[spec.init_batches :])
        assert all(
            lo <= mid <= hi
            for lo, mid, hi in zip(variant.q25, variant.median, variant.q75)
        )
    assert "final_median_by_k" in report.comparisons
    assert "monotone_non_increasing" in report.comparisons


def test_k_scaled_noise_grows_with_k():
    spec = BenchmarkSpec(k_values=(2, 4), noise="k-scaled", **LIGHT)
    report = run_ablation_choice_k(spec)
    temps = [v.noise["temperature"] for v in report.variants]
    assert temps[0] == pytest.approx(1.0)
    assert temps[1] == pytest.approx(1.3)
    assert all(v.noise["kind"] == "gumbel-logit" for v in report.variants)


def test_pairwise_equals_two_way_multinomial_bitwise():
    # with two candidates and noiseless feedback the two likelihoods are the
    # same model, so paired runs must agree to the last bit
    spec = BenchmarkSpec(k_values=(2, 2), noise="argmax", **LIGHT)
    report = run_ablation_pairwise_vs_multiwise(spec)
    pairwise, multiwise = report.variants
    assert pairwise.likelihood == "pairwise-logit"
    assert multiwise.likelihood == "multinomial-logit"
    assert multiwise.k == 2
    assert pairwise.median == multiwise.median
    assert pairwise.final_regrets == multiwise.final_regrets
    assert pairwise.config_hash != multiwise.config_hash


def test_dbs_components_variants():
    spec = BenchmarkSpec(k_values=(3,), noise="argmax", **{**LIGHT, "budget": 1})
    report = run_ablation_dbs_components(spec)
    names = [v.name for v in report.variants]
    assert names == ["full-dbs", "bridge-only", "subspace-only", "ei-top-k", "random"]
    assert "full_dbs_beats_random" in report.comparisons
    by_name = {v.name: v for v in report.variants}
    assert by_name["ei-top-k"].proposal == "ei-top-k"
    assert by_name["random"].proposal == "random"
    # proposals that skip the subspace step report no dimension
    assert all(d is None for d in by_name["random"].dim_trace)
    assert all(d is None for d in by_name["ei-top-k"].dim_trace)
    assert len({v.config_hash for v in report.variants}) == len(report.variants)


def test_reports_are_byte_deterministic(tmp_path):
    spec = BenchmarkSpec(k_values=(2, 3), noise="k-scaled", **LIGHT)
    first = run_ablation_choice_k(spec)
    second = run_ablation_choice_k(spec)
    paths_a = write_report(first, tmp_path / "a")
    paths_b = write_report(second, tmp_path / "b")
    assert [p.name for p in paths_a] == [p.name for p in paths_b]
    for pa, pb in zip(paths_a, paths_b):
        assert pa.read_bytes() == pb.read_bytes()


def test_write_report_layout(tmp_path):
    spec = BenchmarkSpec(k_values=(2,), noise="argmax", **{**LIGHT, "budget": 1})
    report = run_ablation_choice_k(spec)
    written = write_report(report, tmp_path)
    base = tmp_path / "choice-k"
    assert written[-1] == base / "summary.json"
    tsv = (base / "choice-k2.tsv").read_text(encoding="utf-8")
    lines = tsv.strip().split("\n")
    assert lines[0] == "round\tmedian_regret\tq25\tq75\tmedian_subspace_dim\tconfig_hash"
    assert len(lines) == 1 + spec.init_batches + spec.budget
    for line in lines[1:]:
        cells = line.split("\t")
        assert len(cells) == 6
        assert cells[5] == report.variants[0].config_hash
        float(cells[1]), float(cells[2]), float(cells[3])
    summary = json.loads((base / "summary.json").read_text(encoding="utf-8"))
    assert set(summary) == {"ablation", "spec", "variants", "comparisons"}
    assert summary["spec"] == spec.to_dict()
    round_trip = json.loads(json.dumps(report.to_dict(), sort_keys=True))
    assert summary == round_trip


def test_config_hash_is_canonical():
    payload = {"b": 1, "a": [1, 2]}
    assert config_hash(payload) == config_hash({"a": [1, 2], "b": 1})
    assert len(config_hash(payload)) == 64
    assert config_hash(payload) != config_hash({"a": [1, 2], "b": 2})


def test_regret_is_non_negative_and_final_row_matches():
    spec = BenchmarkSpec(k_values=(2,), noise="argmax", **LIGHT)
    report = run_ablation_choice_k(spec)
    variant = report.variants[0]
    assert all(m >= 0.0 for m in variant.median)
    assert variant.median[-1] == pytest.approx(
        float(np.median(variant.final_regrets))
    )
