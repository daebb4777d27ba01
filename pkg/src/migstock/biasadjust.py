"""Calibration of social-media proportions onto the survey scale.

A log-log regression with age-group and region fixed effects is fitted on one
anchor period, where both sources observe the same cells, and then frozen and
applied to later social-media waves.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientData, RankDeficient, UnseenLevel
from .ingest import MigrantPanel, sort_ages

ADJUSTED_COLUMNS = [
    "age_group",
    "year",
    "region",
    "wave_id",
    "proportion",
    "population_count",
    "log_adjusted",
]


@dataclass(frozen=True)
class BiasCoefficients:
    alpha0: float
    alpha1: float
    age_effects: dict = field(default_factory=dict)
    region_effects: dict = field(default_factory=dict)
    sigma2_fb: float = 0.0
    anchor_year: int | None = None
    n_obs: int = 0

    def __post_init__(self):
        if not self.sigma2_fb >= 0:
            raise ValueError("sigma2_fb must be non-negative")

    def predict_log(self, age_group, region, log_social) -> np.ndarray:
        age_group = np.asarray(age_group, dtype=object)
        region = np.asarray(region, dtype=object)
        unseen = sorted({a for a in age_group if a not in self.age_effects})
        if unseen:
            raise UnseenLevel(f"age group(s) absent from anchor fit: {unseen}")
        unseen = sorted({r for r in region if r not in self.region_effects})
        if unseen:
            raise UnseenLevel(f"region(s) absent from anchor fit: {unseen}")
        age_fx = np.array([self.age_effects[a] for a in age_group], dtype=float)
        reg_fx = np.array([self.region_effects[r] for r in region], dtype=float)
        return self.alpha0 + self.alpha1 * np.asarray(log_social, dtype=float) + age_fx + reg_fx

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "BiasCoefficients":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls(**json.loads(text))


class BiasAdjuster(TransformerMixin, BaseEstimator):
    """Log-scale OLS of survey on social-media proportions with fixed effects.

    ``X`` is a frame with columns ``age_group``, ``region`` and ``log_social``;
    ``y`` is the matched log survey proportion.  Reference levels default to
    the lexicographically first age group and region seen in ``fit``.
    """

    def __init__(self, reference_age=None, reference_region=None):
        self.reference_age = reference_age
        self.reference_region = reference_region

    def _design(self, X):
        ages = X["age_group"].astype(str).to_numpy()
        regions = X["region"].astype(str).to_numpy()
        cols = [np.ones(len(X)), X["log_social"].to_numpy(dtype=float)]
        cols += [(ages == a).astype(float) for a in self.age_levels_[1:]]
        cols += [(regions == r).astype(float) for r in self.region_levels_[1:]]
        return np.column_stack(cols)

    @staticmethod
    def _levels(values, reference):
        levels = sorted(set(values))
        if reference is not None:
            if reference not in levels:
                raise UnseenLevel(f"reference level {reference!r} not in data")
            levels.remove(reference)
            levels.insert(0, reference)
        return levels

    def fit(self, X: pd.DataFrame, y, anchor_year=None):
        y = np.asarray(y, dtype=float)
        if len(X) == 0:
            raise InsufficientData("no paired anchor cells")
        if len(y) != len(X):
            raise ValueError("X and y have different lengths")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X["log_social"].to_numpy(dtype=float)))):
            raise ValueError("non-finite values in anchor data")
        self.age_levels_ = self._levels(X["age_group"].astype(str), self.reference_age)
        self.region_levels_ = self._levels(X["region"].astype(str), self.reference_region)
        D = self._design(X)
        n, k = D.shape
        if n < k:
            raise InsufficientData(f"{n} paired cells for {k} free coefficients")
        if np.linalg.matrix_rank(D) < k:
            raise RankDeficient("anchor design matrix is collinear")
        coef, *_ = np.linalg.lstsq(D, y, rcond=None)
        resid = y - D @ coef
        rss = float(resid @ resid)
        n_age = len(self.age_levels_) - 1
        self.coef_ = coef
        self.residuals_ = resid
        self.coefficients_ = BiasCoefficients(
            alpha0=float(coef[0]),
            alpha1=float(coef[1]),
            age_effects={self.age_levels_[0]: 0.0,
                         **{a: float(c) for a, c in zip(self.age_levels_[1:], coef[2:2 + n_age])}},
            region_effects={self.region_levels_[0]: 0.0,
                            **{r: float(c) for r, c in zip(self.region_levels_[1:], coef[2 + n_age:])}},
            sigma2_fb=rss / (n - k) if n > k else 0.0,
            anchor_year=None if anchor_year is None else int(anchor_year),
            n_obs=int(n),
        )
        return self

    def transform(self, X: pd.DataFrame) -> np.ndarray:
        check_is_fitted(self, "coefficients_")
        return self.coefficients_.predict_log(X["age_group"].astype(str), X["region"].astype(str),
                                              X["log_social"])

    def predict(self, X: pd.DataFrame) -> np.ndarray:
        return self.transform(X)


def anchor_pairs(survey: MigrantPanel, social: MigrantPanel, anchor_year=None, wave_id=None) -> pd.DataFrame:
    """Match anchor-year survey cells with the first (or given) social wave.

    Cells present in only one source are dropped.
    """
    svy = survey.survey().frame
    soc = social.social().frame
    if anchor_year is None:
        if svy.empty:
            raise InsufficientData("no survey observations")
        anchor_year = int(svy["year"].max())
    if soc.empty:
        raise InsufficientData("no social-media observations")
    if wave_id is None:
        wave_id = int(soc["wave_id"].min())
    svy = svy[svy["year"] == anchor_year]
    soc = soc[soc["wave_id"] == wave_id]
    if soc.duplicated(["age_group", "region"]).any():
        raise InsufficientData(f"wave {wave_id} repeats (age, region) cells")
    pairs = svy[["age_group", "region", "proportion"]].merge(
        soc[["age_group", "region", "proportion"]], on=["age_group", "region"], suffixes=("_survey", "_social"))
    if pairs.empty:
        raise InsufficientData(f"no cells observed by both sources (anchor year {anchor_year}, wave {wave_id})")
    order = {a: i for i, a in enumerate(sort_ages(pairs["age_group"]))}
    pairs = pairs.sort_values(["region", "age_group"], key=lambda c: c.map(order) if c.name == "age_group" else c)
    pairs["log_survey"] = np.log(pairs.pop("proportion_survey"))
    pairs["log_social"] = np.log(pairs.pop("proportion_social"))
    pairs.attrs.update(anchor_year=int(anchor_year), wave_id=int(wave_id))
    return pairs.reset_index(drop=True)


def fit_bias_model(survey_anchor: MigrantPanel, social_anchor: MigrantPanel, anchor_year=None) -> BiasCoefficients:
    pairs = anchor_pairs(survey_anchor, social_anchor, anchor_year)
    model = BiasAdjuster().fit(pairs[["age_group", "region", "log_social"]], pairs["log_survey"],
                               anchor_year=pairs.attrs["anchor_year"])
    return model.coefficients_


def adjust_wave(coefs: BiasCoefficients, social: MigrantPanel) -> pd.DataFrame:
    """Bias-adjusted log proportions, one row per social-media observation."""
    f = social.social().frame
    out = f[["age_group", "year", "region", "wave_id", "proportion", "population_count"]].copy()
    out["log_adjusted"] = coefs.predict_log(f["age_group"], f["region"], np.log(f["proportion"].to_numpy()))
    return out.reset_index(drop=True)[ADJUSTED_COLUMNS]
