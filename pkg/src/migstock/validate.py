"""Holdout validation: forecast the final survey year with four models and
compare root mean squared errors overall, by age group and by region.

Models:

* ``moving_average``: mean of the last three observed survey proportions;
* ``social_only``: bias-adjusted social-media waves in the holdout year;
* ``survey_only``: the hierarchical model fitted on survey data alone;
* ``combined``: the hierarchical model fitted on both sources.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .biasadjust import adjust_wave, fit_bias_model
from .estimator import MigrantStockNowcaster
from .exceptions import InsufficientData, InsufficientHistory, NoOverlap, NoWaveData
from .ingest import MigrantPanel, sort_ages
from .model import ModelConfig

MODELS = ("moving_average", "social_only", "survey_only", "combined")
KEY = ["age_group", "region"]


def moving_average(values, window: int = 3) -> float:
    """Mean of the last ``window`` values of a series ordered by time."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if len(values) < window:
        raise InsufficientHistory(f"{len(values)} observations for a window of {window}")
    return float(values[-window:].mean())


def moving_average_forecast(panel: MigrantPanel, holdout_year: int | None = None, window: int = 3) -> pd.DataFrame:
    """Per-(age, region) moving-average prediction from survey years before
    ``holdout_year``.  Series that are too short are skipped; the count is in
    ``result.attrs["skipped"]``.
    """
    f = panel.survey().frame
    if holdout_year is not None:
        f = f[f["year"] < holdout_year]
    rows, skipped = [], 0
    for (age, region), g in f.sort_values("year").groupby(KEY, sort=False):
        try:
            rows.append((age, region, moving_average(g["proportion"], window)))
        except InsufficientHistory:
            skipped += 1
    out = pd.DataFrame(rows, columns=KEY + ["prediction"])
    out.attrs["skipped"] = skipped
    return out


def social_only(log_adjusted) -> float:
    """Geometric-mean style prediction from adjusted log proportions."""
    v = np.asarray(log_adjusted, dtype=float)
    if v.size == 0:
        raise NoWaveData("no adjusted waves for this cell")
    return float(np.exp(v.mean()))


def social_only_forecast(adjusted_social: pd.DataFrame, holdout_year: int) -> pd.DataFrame:
    f = adjusted_social[adjusted_social["year"] == holdout_year]
    if f.empty:
        raise NoWaveData(f"no social-media waves in {holdout_year}")
    out = (f.groupby(KEY, sort=False)["log_adjusted"].apply(social_only)
           .rename("prediction").reset_index())
    return out


def rmse(predictions, truth) -> float:
    """Root mean squared error over cells present (and finite) in both.

    Inputs are aligned on their index when both are pandas objects.
    """
    if isinstance(predictions, pd.Series) and isinstance(truth, pd.Series):
        predictions, truth = predictions.align(truth, join="inner")
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError("predictions and truth have different shapes")
    ok = np.isfinite(p) & np.isfinite(t)
    if not ok.any():
        raise NoOverlap("no cells to compare")
    return float(np.sqrt(np.mean((p[ok] - t[ok]) ** 2)))


def stratified_rmse(table: pd.DataFrame, by: str, models=MODELS) -> pd.DataFrame:
    rows = []
    for key, g in table.groupby(by, sort=False):
        for m in models:
            rows.append({"model": m, by: key, "rmse": rmse(g[m], g["truth"]), "n_cells": len(g)})
    return pd.DataFrame(rows, columns=["model", by, "rmse", "n_cells"])


@dataclass
class ValidationReport:
    holdout_year: int
    overall_rmse: dict
    by_age: pd.DataFrame
    by_region: pd.DataFrame
    n_cells: int
    predictions: pd.DataFrame = field(repr=False)
    skipped: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def overall_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"model": list(self.overall_rmse), "rmse": list(self.overall_rmse.values()),
                             "n_cells": self.n_cells})

    def to_dict(self) -> dict:
        return {
            "holdout_year": int(self.holdout_year),
            "overall_rmse": {k: float(v) for k, v in self.overall_rmse.items()},
            "by_age": self.by_age.to_dict(orient="records"),
            "by_region": self.by_region.to_dict(orient="records"),
            "n_cells": int(self.n_cells),
            "skipped": {k: int(v) for k, v in self.skipped.items()},
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> dict:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out_dir / "validation.json",
            "overall": out_dir / "rmse_overall.csv",
            "by_age": out_dir / "rmse_by_age.csv",
            "by_region": out_dir / "rmse_by_region.csv",
            "predictions": out_dir / "holdout_predictions.csv",
        }
        paths["report"].write_text(self.to_json() + "\n")
        fmt = "%.17g"
        self.overall_frame().to_csv(paths["overall"], index=False, float_format=fmt)
        self.by_age.to_csv(paths["by_age"], index=False, float_format=fmt)
        self.by_region.to_csv(paths["by_region"], index=False, float_format=fmt)
        self.predictions.to_csv(paths["predictions"], index=False, float_format=fmt)
        return paths


def _model_prediction(fitted: MigrantStockNowcaster, year: int) -> pd.DataFrame:
    s = fitted.summary()
    s = s[s["year"] == year]
    return s[KEY + ["median"]].rename(columns={"median": "prediction"})


def run_validation(survey: MigrantPanel, social: MigrantPanel, config: ModelConfig | None = None,
                   holdout_year: int | None = None, window: int = 3) -> ValidationReport:
    """Hold out the final survey year and score the four models on it.

    Training uses survey years before the holdout; the bias regression pairs
    the last training year with the first social wave; social waves after
    the holdout year are ignored.  Only cells predicted by every model and
    observed in the holdout year are scored.
    """
    config = config or ModelConfig()
    svy = survey.survey()
    years = svy.years
    if len(years) < 4:
        raise InsufficientData("validation needs at least 4 survey years")
    holdout = int(years[-1]) if holdout_year is None else int(holdout_year)
    train = svy.select(years=[y for y in years if y < holdout])
    truth = svy.select(years=[holdout]).frame[KEY + ["proportion"]].rename(columns={"proportion": "truth"})
    soc = social.social()
    soc = soc.select(years=[y for y in soc.years if y <= holdout])
    anchor = int(train.years[-1])

    preds = {"moving_average": moving_average_forecast(train, holdout, window)}
    skipped = {"moving_average": preds["moving_average"].attrs["skipped"]}
    coefs = fit_bias_model(train, soc, anchor)
    adjusted = adjust_wave(coefs, soc)
    preds["social_only"] = social_only_forecast(adjusted, holdout)

    fits = {}
    for name, use_social in (("survey_only", False), ("combined", True)):
        est = MigrantStockNowcaster(config, anchor_year=anchor, horizon=holdout - anchor, use_social=use_social)
        fits[name] = est.fit(train, soc if use_social else None)
        preds[name] = _model_prediction(fits[name], holdout)

    table = truth
    for m in MODELS:
        table = table.merge(preds[m].rename(columns={"prediction": m}), on=KEY, how="left")
    n_truth = len(table)
    table = table.dropna(subset=list(MODELS))
    for m in MODELS:
        skipped.setdefault(m, 0)
    skipped["not_in_common_support"] = n_truth - len(table)
    if table.empty:
        raise NoOverlap("no holdout cells are predicted by every model")
    order = {a: i for i, a in enumerate(sort_ages(table["age_group"]))}
    table = table.sort_values(["age_group", "region"], key=lambda c: c.map(order) if c.name == "age_group" else c)
    table = table.reset_index(drop=True)

    overall = {m: rmse(table[m], table["truth"]) for m in MODELS}
    diagnostics = {
        "anchor_year": anchor,
        "bias": {"alpha0": coefs.alpha0, "alpha1": coefs.alpha1, "sigma2_fb": coefs.sigma2_fb},
        "max_rhat": {k: fits[k].max_rhat() for k in fits},
    }
    return ValidationReport(holdout, overall, stratified_rmse(table, "age_group"), stratified_rmse(table, "region"),
                            len(table), table, skipped, diagnostics)
