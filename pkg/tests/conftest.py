import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from migstock.biasadjust import BiasCoefficients
from migstock.ingest import AGE_LABELS, COLUMNS, MigrantPanel
from migstock.simulate import SimulationDims, simulate

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_frame(rows):
    """Panel frame from partial row dicts; unspecified columns are blank."""
    base = {"origin": "MX", "se": np.nan, "wave_id": pd.NA, "population_count": pd.NA}
    return pd.DataFrame([{**base, **r} for r in rows], columns=list(COLUMNS))


@pytest.fixture
def tiny_survey():
    rows = [
        {"region": r, "age_group": a, "year": y, "proportion": p, "se": 0.1 * p, "source": "survey"}
        for r, shift in (("CA", 0.0), ("TX", 0.01))
        for y in (2015, 2016)
        for a, p in (("15-19", 0.02 + shift), ("20-24", 0.03 + shift), ("25-29", 0.05 + shift))
    ]
    return MigrantPanel(make_frame(rows), "MX")


@pytest.fixture(scope="session")
def small_dims():
    return SimulationDims(n_regions=3, n_survey_years=5, n_wave_years=2)


@pytest.fixture(scope="session")
def small_sim(small_dims):
    return simulate(small_dims, seed=11)


@pytest.fixture(scope="session")
def desk_sim():
    return simulate(seed=3)


def tiny_components(G=2):
    from migstock.components import PrincipalComponents
    from migstock.ingest import AGE_LABELS

    rng = np.random.default_rng(123)
    q, _ = np.linalg.qr(rng.normal(size=(G, 2)))
    z1, z2 = q[:, 0], q[:, 1]
    if z1.sum() > 0:
        z1 = -z1
    if z2[-1] < 0:
        z2 = -z2
    return PrincipalComponents(z1, z2, (2.0, 1.0), AGE_LABELS[:G])


def tiny_inputs(G=2, T=3, S=2, survey=(), social=(), sigma2_fb=0.0):
    """Model inputs on a small grid; observations are (x, t, s, y, var) tuples."""
    from migstock.model import ModelInputs

    comps = tiny_components(G)

    def unpack(rows):
        rows = list(rows)
        if not rows:
            return np.zeros((0, 3), dtype=int), np.zeros(0), np.zeros(0)
        arr = np.array(rows, dtype=float)
        return arr[:, :3].astype(int), arr[:, 3], arr[:, 4]

    sc, sy, sv = unpack(survey)
    fc, fy, fv = unpack(social)
    return ModelInputs(comps.age_index, np.arange(2000, 2000 + T), tuple(f"R{i}" for i in range(S)), comps,
                       sc, sy, sv, fc, fy, fv, np.ones(len(fy), dtype=int), sigma2_fb)


def random_state(rng, G, T, S):
    from migstock.model import ParameterState

    return ParameterState(
        beta1=rng.normal(3, 1, (T, S)), beta2=rng.normal(0, 1, (T, S)), phi=rng.normal(0, 1, T),
        eps=rng.normal(0, 0.3, (G, T, S)), rho=rng.uniform(size=(G, S)),
        sigma2_beta1=rng.uniform(0.05, 1), sigma2_beta=rng.uniform(0.05, 1), sigma2_phi=rng.uniform(0.05, 1),
        sigma2_eps=rng.uniform(0.05, 1), sigma2_ns=rng.uniform(0.05, 1))


REGIONS = [f"S{i:02d}" for i in range(51)]


def anchor_data(seed, noise=0.0, n_regions=51, alpha0=-0.4, alpha1=0.85):
    """Paired anchor panels generated from known coefficients."""
    rng = np.random.default_rng(seed)
    regions = REGIONS[:n_regions]
    age_fx = dict(zip(AGE_LABELS, np.r_[0.0, rng.normal(0, 0.3, len(AGE_LABELS) - 1)]))
    reg_fx = dict(zip(regions, np.r_[0.0, rng.normal(0, 0.3, n_regions - 1)]))
    cells = [(a, r) for r in regions for a in AGE_LABELS]
    log_fb = rng.uniform(np.log(0.005), np.log(0.05), len(cells))
    log_svy = np.array([alpha0 + alpha1 * x + age_fx[a] + reg_fx[r] for x, (a, r) in zip(log_fb, cells)])
    log_svy = log_svy + noise * rng.standard_normal(len(cells))
    survey = make_frame([{"region": r, "age_group": a, "year": 2016, "proportion": np.exp(v), "se": 0.001,
                          "source": "survey"} for (a, r), v in zip(cells, log_svy)])
    social = make_frame([{"region": r, "age_group": a, "year": 2017, "proportion": np.exp(v), "source": "social",
                          "wave_id": 1, "population_count": 10**6} for (a, r), v in zip(cells, log_fb)])
    truth = BiasCoefficients(alpha0, alpha1, age_fx, reg_fx)
    return MigrantPanel(survey, "MX"), MigrantPanel(social, "MX"), truth


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion and assert it."""
    def record(number, title, passed, detail):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        request.config.acceptance_lines.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)
