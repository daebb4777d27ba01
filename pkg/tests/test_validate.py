import json
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from migstock.exceptions import InsufficientData, InsufficientHistory, NoOverlap, NoWaveData, NotConverged
from migstock.ingest import MigrantPanel
from migstock.model import ModelConfig
from migstock.validate import (MODELS, moving_average, moving_average_forecast, rmse, run_validation, social_only,
                               social_only_forecast, stratified_rmse)

from conftest import make_frame


def test_moving_average_examples():
    assert moving_average([0.1, 0.2, 0.3]) == pytest.approx(0.2)
    assert moving_average([0.05] * 5) == pytest.approx(0.05, rel=1e-15)
    assert moving_average([0.9, 0.1, 0.2, 0.3]) == pytest.approx(0.2)
    with pytest.raises(InsufficientHistory):
        moving_average([0.1, 0.3])


def test_moving_average_forecast_skips_short_series():
    rows = [{"region": "CA", "age_group": "15-19", "year": y, "proportion": p, "se": 0.001, "source": "survey"}
            for y, p in ((2012, 0.5), (2013, 0.1), (2014, 0.2), (2015, 0.3), (2016, 0.9))]
    rows += [{"region": "TX", "age_group": "15-19", "year": y, "proportion": p, "se": 0.001, "source": "survey"}
             for y, p in ((2014, 0.1), (2016, 0.3))]
    out = moving_average_forecast(MigrantPanel(make_frame(rows), "MX"), holdout_year=2016)
    assert out.attrs["skipped"] == 1
    assert list(out["region"]) == ["CA"]
    assert out["prediction"].iloc[0] == pytest.approx(0.2)


def test_social_only_examples():
    assert social_only([np.log(0.05)]) == pytest.approx(0.05, rel=1e-14)
    assert social_only([np.log(0.04), np.log(0.09)]) == pytest.approx(0.06, rel=1e-14)
    with pytest.raises(NoWaveData):
        social_only([])
    adjusted = pd.DataFrame({"age_group": ["15-19"] * 3, "region": ["CA"] * 3, "year": [2016, 2016, 2017],
                             "log_adjusted": np.log([0.04, 0.09, 0.5])})
    out = social_only_forecast(adjusted, 2016)
    assert out["prediction"].iloc[0] == pytest.approx(0.06)
    with pytest.raises(NoWaveData):
        social_only_forecast(adjusted, 2015)


def test_rmse_examples():
    x = np.array([0.1, 0.2, 0.3])
    assert rmse(x, x) == 0.0
    assert rmse([0.2, 0.0], [0.1, 0.1]) == pytest.approx(0.1, rel=1e-14)
    a = pd.Series([1.0, 2.0, 3.0], index=["a", "b", "c"])
    b = pd.Series([1.0, 4.0], index=["b", "z"])
    assert rmse(a, b) == pytest.approx(1.0)
    with pytest.raises(NoOverlap):
        rmse(pd.Series([1.0], index=["a"]), pd.Series([1.0], index=["b"]))
    with pytest.raises(ValueError):
        rmse([1.0, 2.0], [1.0])


values = arrays(float, st.integers(1, 40), elements=st.floats(-10, 10))


@given(values, st.integers(0, 2**32 - 1))
def test_rmse_permutation_invariant(x, seed):
    t = np.zeros_like(x)
    perm = np.random.default_rng(seed).permutation(len(x))
    assert rmse(x[perm], t[perm]) == pytest.approx(rmse(x, t), rel=1e-12, abs=1e-300)
    assert rmse(x, x) == 0.0


@given(values, st.floats(0.01, 100))
def test_rmse_scales_linearly(err, c):
    t = np.linspace(0, 1, len(err))
    assert rmse(t + c * err, t) == pytest.approx(c * rmse(t + err, t), rel=1e-9, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 5))
def test_overall_equals_weighted_strata(seed, n_ages, n_regions):
    rng = np.random.default_rng(seed)
    cells = [(f"{15 + 5 * a}-{19 + 5 * a}", f"R{r}") for a in range(n_ages) for r in range(n_regions)]
    keep = rng.uniform(size=len(cells)) < 0.8
    keep[0] = True
    table = pd.DataFrame([c for c, k in zip(cells, keep) if k], columns=["age_group", "region"])
    table["truth"] = rng.uniform(0.001, 0.1, len(table))
    for m in MODELS:
        table[m] = table["truth"] + rng.normal(0, 0.01, len(table))
    for by in ("age_group", "region"):
        strata = stratified_rmse(table, by)
        assert strata.groupby("model")["n_cells"].sum().eq(len(table)).all()
        for m in MODELS:
            s = strata[strata["model"] == m]
            pooled = (s["n_cells"] * s["rmse"] ** 2).sum() / s["n_cells"].sum()
            assert abs(pooled - rmse(table[m], table["truth"]) ** 2) < 1e-12


QUICK = ModelConfig(n_chains=2, n_iter=80, n_warmup=40, thin=1, seed=2)


@pytest.fixture(scope="module")
def report(small_sim):
    survey, social, _ = small_sim
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        return run_validation(survey, social, QUICK)


def test_report_contents(report, small_sim):
    survey, _, _ = small_sim
    assert report.holdout_year == int(survey.survey().years[-1])
    assert set(report.overall_rmse) == set(MODELS)
    assert all(v >= 0 for v in report.overall_rmse.values())
    assert report.n_cells == 9 * 3
    assert report.diagnostics["anchor_year"] == report.holdout_year - 1
    for frame, by in ((report.by_age, "age_group"), (report.by_region, "region")):
        assert set(frame["model"]) == set(MODELS)
        assert (frame.groupby("model")["n_cells"].sum() == report.n_cells).all()
    truth = survey.survey().select(years=[report.holdout_year]).frame
    merged = report.predictions.merge(truth, on=["age_group", "region"])
    np.testing.assert_array_equal(merged["truth"], merged["proportion"])


def test_report_files(report, tmp_path):
    paths = report.write(tmp_path)
    data = json.loads(paths["report"].read_text())
    assert sorted(data["overall_rmse"]) == sorted(MODELS)
    overall = pd.read_csv(paths["overall"])
    assert list(overall.columns) == ["model", "rmse", "n_cells"]
    assert list(pd.read_csv(paths["by_age"]).columns) == ["model", "age_group", "rmse", "n_cells"]
    assert list(pd.read_csv(paths["by_region"]).columns) == ["model", "region", "rmse", "n_cells"]
    assert len(pd.read_csv(paths["predictions"])) == report.n_cells


def test_deterministic(report, small_sim):
    survey, social, _ = small_sim
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        again = run_validation(survey, social, QUICK)
    assert again.to_json() == report.to_json()


def test_needs_four_years(small_sim):
    survey, social, _ = small_sim
    short = survey.select(years=survey.years[-3:])
    with pytest.raises(InsufficientData):
        run_validation(short, social, QUICK)
