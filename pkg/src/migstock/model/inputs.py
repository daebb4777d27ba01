from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd

from ..components import PrincipalComponents
from ..exceptions import AgeGridMismatch, DomainError, EmptyInputs
from ..ingest import MigrantPanel


@dataclass(frozen=True, eq=False)
class ModelInputs:
    """Observations indexed into a dense (age, year, region) grid.

    Cell indices are rows ``(x, t, s)`` of the ``*_cell`` arrays.  Survey
    variances are final; social variances hold the sampling variance plus the
    frozen bias-regression variance, and the non-sampling variance is added
    when the likelihood is evaluated.
    """

    ages: tuple
    years: np.ndarray
    regions: tuple
    components: PrincipalComponents
    survey_cell: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))
    survey_y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    survey_var: np.ndarray = field(default_factory=lambda: np.zeros(0))
    social_cell: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))
    social_y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    social_var: np.ndarray = field(default_factory=lambda: np.zeros(0))
    social_wave: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    sigma2_fb: float = 0.0

    def __post_init__(self):
        G, T, S = self.shape
        if tuple(self.components.age_index) != tuple(self.ages):
            raise AgeGridMismatch("components are defined on a different age grid")
        for name in ("survey", "social"):
            cell = np.asarray(getattr(self, f"{name}_cell"), dtype=int).reshape(-1, 3)
            object.__setattr__(self, f"{name}_cell", cell)
            if len(cell) and ((cell.min(axis=0) < 0).any() or (cell.max(axis=0) >= (G, T, S)).any()):
                raise ValueError(f"{name} cell index outside the grid")
            var = np.asarray(getattr(self, f"{name}_var"), dtype=float)
            if np.any(~(var > 0)):
                raise DomainError(f"{name} observation variances must be positive")
        object.__setattr__(self, "years", np.asarray(self.years, dtype=int))

    @property
    def shape(self) -> tuple:
        return len(self.ages), len(self.years), len(self.regions)

    @property
    def z1(self) -> np.ndarray:
        return self.components.z1

    @property
    def z2(self) -> np.ndarray:
        return self.components.z2

    @property
    def n_obs(self) -> int:
        return len(self.survey_y) + len(self.social_y)

    @cached_property
    def survey_precision(self) -> tuple:
        """Per-cell sums of ``1/var`` and ``y/var`` for survey rows, (G, T, S) each."""
        return self._accumulate(self.survey_cell, self.survey_y, self.survey_var)

    @cached_property
    def social_flat(self) -> np.ndarray:
        return np.ravel_multi_index(self.social_cell.T, self.shape) if len(self.social_cell) \
            else np.zeros(0, dtype=int)

    def _accumulate(self, cell, y, var):
        size = int(np.prod(self.shape))
        if len(cell) == 0:
            return np.zeros(self.shape), np.zeros(self.shape)
        flat = np.ravel_multi_index(cell.T, self.shape)
        prec = np.bincount(flat, weights=1.0 / var, minlength=size).reshape(self.shape)
        lin = np.bincount(flat, weights=y / var, minlength=size).reshape(self.shape)
        return prec, lin

    def precision(self, sigma2_ns: float) -> tuple:
        """Total per-cell precision and precision-weighted sum given ``sigma2_ns``."""
        prec, lin = self.survey_precision
        if len(self.social_y) == 0:
            return prec, lin
        size = int(np.prod(self.shape))
        w = 1.0 / (self.social_var + sigma2_ns)
        prec = prec + np.bincount(self.social_flat, weights=w, minlength=size).reshape(self.shape)
        lin = lin + np.bincount(self.social_flat, weights=w * self.social_y, minlength=size).reshape(self.shape)
        return prec, lin

    def observed_years(self) -> np.ndarray:
        t = np.concatenate([self.survey_cell[:, 1], self.social_cell[:, 1]])
        return np.unique(self.years[t]) if len(t) else np.zeros(0, dtype=int)

    def without_social(self) -> "ModelInputs":
        return ModelInputs(self.ages, self.years, self.regions, self.components,
                           self.survey_cell, self.survey_y, self.survey_var, sigma2_fb=self.sigma2_fb)


def _index(values, lookup, what):
    try:
        return np.array([lookup[v] for v in values], dtype=int)
    except KeyError as exc:
        raise AgeGridMismatch(f"{what} {exc.args[0]!r} is not on the model grid") from None


def build_inputs(survey: MigrantPanel, adjusted_social=None, sigma2_fb: float = 0.0,
                 components: PrincipalComponents = None, horizon: int = 0, allow_overlap: bool = True) -> ModelInputs:
    """Index survey rows and bias-adjusted social rows onto the model grid.

    The year axis runs from the first survey year to the later of the last
    social year and ``last survey year + horizon``.  With ``allow_overlap``
    false, social rows in survey years are dropped.
    """
    if components is None:
        raise ValueError("components are required")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    svy = survey.survey().log_observations()
    if svy.empty:
        raise EmptyInputs("no survey observations")
    if not sigma2_fb >= 0:
        raise DomainError("sigma2_fb must be non-negative")
    ages = tuple(components.age_index)
    extra = sorted(set(survey.frame["age_group"]) - set(ages))
    if extra:
        raise AgeGridMismatch(f"age groups {extra} have no component loadings")

    soc = adjusted_social if adjusted_social is not None else pd.DataFrame(
        columns=["age_group", "year", "region", "wave_id", "proportion", "population_count", "log_adjusted"])
    if len(soc) and not allow_overlap:
        soc = soc[~soc["year"].isin(set(svy["year"]))]
    first = int(svy["year"].min())
    last = int(svy["year"].max()) + int(horizon)
    if len(soc):
        last = max(last, int(soc["year"].max()))
        if int(soc["year"].min()) < first:
            raise ValueError("social observations precede the first survey year")
    years = np.arange(first, last + 1)
    regions = tuple(sorted(set(svy["region"]) | set(soc["region"].astype(str))))
    age_ix = {a: i for i, a in enumerate(ages)}
    year_ix = {int(y): i for i, y in enumerate(years)}
    region_ix = {r: i for i, r in enumerate(regions)}

    svy_cell = np.column_stack([
        _index(svy["age_group"], age_ix, "age group"),
        _index(svy["year"].astype(int), year_ix, "year"),
        _index(svy["region"], region_ix, "region"),
    ])
    kwargs = dict(survey_cell=svy_cell, survey_y=svy["log_p"].to_numpy(float), survey_var=svy["var_log"].to_numpy(float))
    if len(soc):
        extra = sorted(set(soc["age_group"]) - set(ages))
        if extra:
            raise AgeGridMismatch(f"age groups {extra} have no component loadings")
        p = soc["proportion"].to_numpy(float)
        n = soc["population_count"].to_numpy(float)
        kwargs.update(
            social_cell=np.column_stack([
                _index(soc["age_group"], age_ix, "age group"),
                _index(soc["year"].astype(int), year_ix, "year"),
                _index(soc["region"].astype(str), region_ix, "region"),
            ]),
            social_y=soc["log_adjusted"].to_numpy(float),
            # binomial variance of p mapped to the log scale by the delta method
            social_var=(1 - p) / (p * n) + sigma2_fb,
            social_wave=soc["wave_id"].to_numpy(int),
        )
    return ModelInputs(ages, years, regions, components, sigma2_fb=float(sigma2_fb), **kwargs)
