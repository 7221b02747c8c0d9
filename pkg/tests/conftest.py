"""Shared fixtures: every Laplace fit anywhere in the suite is certified.

The wrapper below replaces laplace_fit in every module that bound it at
import time, checks the stationarity certificate on each successful fit,
and keeps a tally that the acceptance suite reports at the end.
"""

import numpy as np
import pytest

import prefbo
import prefbo.likelihoods
import prefbo.session

CERT_TOL = 1e-6

fit_log = {"count": 0, "max_grad_norm": 0.0}

_original_laplace_fit = prefbo.likelihoods.laplace_fit


def _certified_laplace_fit(*args, **kwargs):
    result = _original_laplace_fit(*args, **kwargs)
    tol = max(CERT_TOL, kwargs.get("grad_tol", 0.0))
    fit_log["count"] += 1
    fit_log["max_grad_norm"] = max(fit_log["max_grad_norm"], result.grad_norm)
    assert result.grad_norm <= tol, (
        f"Laplace fit returned grad norm {result.grad_norm:.3e} > {tol:.1e}"
    )
    return result


prefbo.likelihoods.laplace_fit = _certified_laplace_fit
prefbo.session.laplace_fit = _certified_laplace_fit
prefbo.laplace_fit = _certified_laplace_fit


acceptance_lines = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    acceptance_lines.append(f"[{status}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in acceptance_lines:
        terminalreporter.write_line(line)
    terminalreporter.write_line(
        f"(laplace fits certified across the whole run: {fit_log['count']}, "
        f"max grad norm {fit_log['max_grad_norm']:.3e})"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
