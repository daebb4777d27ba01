"""Estimator-style wrapper around the full nowcasting pipeline."""
from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .biasadjust import adjust_wave, fit_bias_model
from .components import build_log_matrix, compute_components, impute_missing
from .forecast import project
from .ingest import MigrantPanel
from .model import ModelConfig, build_inputs, run_mcmc, summarize


class MigrantStockNowcaster(BaseEstimator):
    """Bias-adjust social-media waves, extract age components and sample the
    hierarchical model in one ``fit``.

    Parameters
    ----------
    config : ModelConfig, optional
        Sampler settings; defaults to ``ModelConfig()``.
    anchor_year : int, optional
        Survey year paired with the first social wave for the bias
        regression.  Defaults to the last survey year.
    horizon : int
        Extra unobserved years appended to the modelled period.
    use_social : bool
        If false the social panel is ignored (survey-only model).
    """

    def __init__(self, config=None, anchor_year=None, horizon=0, use_social=True):
        self.config = config
        self.anchor_year = anchor_year
        self.horizon = horizon
        self.use_social = use_social

    def fit(self, survey: MigrantPanel, social: MigrantPanel | None = None):
        config = self.config if self.config is not None else ModelConfig()
        survey = survey.survey()
        self.components_ = compute_components(impute_missing(build_log_matrix(survey)))
        self.bias_ = None
        self.adjusted_ = None
        sigma2_fb = 0.0
        if self.use_social and social is not None and len(social.social()):
            self.bias_ = fit_bias_model(survey, social, self.anchor_year)
            self.adjusted_ = adjust_wave(self.bias_, social)
            sigma2_fb = self.bias_.sigma2_fb
        self.inputs_ = build_inputs(survey, self.adjusted_, sigma2_fb, self.components_, int(self.horizon))
        self.samples_ = run_mcmc(self.inputs_, config)
        return self

    @property
    def rhat_(self) -> pd.Series:
        check_is_fitted(self, "samples_")
        return self.samples_.rhat

    def summary(self) -> pd.DataFrame:
        check_is_fitted(self, "samples_")
        return summarize(self.samples_)

    def predict(self, X: pd.DataFrame | None = None):
        """Posterior median proportions.

        Without ``X`` the full per-cell summary is returned; otherwise ``X``
        needs ``age_group``, ``year`` and ``region`` columns and a vector of
        medians aligned with its rows comes back (NaN off the model grid).
        """
        table = self.summary()
        if X is None:
            return table
        keys = ["age_group", "year", "region"]
        left = X[keys].astype({"year": int}).reset_index(drop=True)
        merged = left.merge(table[keys + ["median"]], on=keys, how="left")
        return merged["median"].to_numpy(dtype=float)

    def forecast(self, horizon: int, seed=None, include_estimates=False) -> pd.DataFrame:
        check_is_fitted(self, "samples_")
        seed = self.samples_.rng_seed if seed is None else seed
        return project(self.samples_, self.inputs_, horizon, seed, include_estimates)

    def max_rhat(self) -> float:
        r = self.rhat_
        return float(r.max()) if r is not None and len(r) else np.nan
