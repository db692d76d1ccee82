from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from nbarhmm.panel import CountryPanel, StandardizationReport, read_panel_csv
from nbarhmm.params import FULL_COVARIATES, ParameterSet, pi_from_logits

ACCEPTANCE_LINES = []


def record_acceptance(criterion, name, passed, detail=""):
    line = f"ACCEPTANCE {criterion} {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return Path(resources.files("nbarhmm") / "data" / "fixture")


@pytest.fixture(scope="session")
def fixture_panels(fixture_dir):
    report = StandardizationReport.from_json(fixture_dir / "report.json")
    return read_panel_csv(fixture_dir / "panel.csv", report)


def random_params(rng, covariates=FULL_COVARIATES, scale=1.0) -> ParameterSet:
    """Constraint-satisfying parameters with moderate magnitudes."""
    d = len(covariates)
    zeta = rng.normal(0, scale, (6, d))
    zeta[:, 0] -= 1.5
    beta = rng.normal(0, 0.3 * scale, (2, d))
    beta[:, 0] = np.sort(rng.normal(-3.5, 0.5, 2))
    a = np.sort(np.exp(rng.normal([-3.0, -1.0, 1.0], 0.5)))
    c = float(np.exp(rng.normal(-2.0, 0.3)))
    pi = pi_from_logits(rng.normal(-1.0, 0.5, 2))
    return ParameterSet(zeta, beta, a, c, pi, covariates=covariates)


def random_panel(rng, n, covariates=FULL_COVARIATES, label_share=0.2, max_count=30,
                 country_id="R") -> CountryPanel:
    d = len(covariates)
    x = rng.normal(0, 1, (n, d))
    x[:, 0] = 1.0
    for j, name in enumerate(covariates):
        if name in ("pre_cf", "cf"):
            x[:, j] = rng.random(n) < 0.3
    deaths = rng.integers(0, max_count, n) * (rng.random(n) < 0.6)
    label = (rng.random(n) < label_share) & (deaths == 0)
    weeks = np.datetime64("2000-01-03") + 7 * np.arange(n)
    return CountryPanel(country_id, weeks, deaths, x, covariates, label)
