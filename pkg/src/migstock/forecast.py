"""Forward projection of fitted processes beyond the last modelled year.

Every posterior draw is pushed forward on its own: the level coefficients
follow their random walk, the national mean walks on and the shape
coefficients scatter around it, and the age residuals continue their AR(1)
recursion.  Summaries are taken over the projected draws.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .model.diagnostics import quantile_summary, summarize
from .model.sampler import PosteriorSamples

SUMMARY_COLUMNS = ["age_group", "year", "region", "median", "lower95", "upper95", "kind"]


def _flat(a):
    return np.asarray(a).reshape((-1,) + np.shape(a)[2:])


def project_draws(samples: PosteriorSamples, horizon: int, seed: int = 0, include_eps: bool = True) -> dict:
    """Simulate ``horizon`` future years per posterior draw.

    Returns arrays with a leading draw axis: ``beta1``/``beta2`` (n, h, S),
    ``phi`` (n, h), ``eps`` and ``log_mu`` (n, G, h, S), plus ``years``.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    d = samples.draws
    beta1 = _flat(d["beta1"])[:, -1].copy()
    phi = _flat(d["phi"])[:, -1].copy()
    eps = _flat(d["eps"])[:, :, -1].copy()
    rho = _flat(d["rho"])
    sd = {k: np.sqrt(_flat(d[k])) for k in ("sigma2_beta1", "sigma2_beta", "sigma2_phi", "sigma2_eps")}
    n, S = beta1.shape
    G = eps.shape[1]
    if n == 0:
        raise ValueError("no draws to project")
    if not include_eps:
        eps = np.zeros_like(eps)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    out = {
        "beta1": np.empty((n, horizon, S)),
        "beta2": np.empty((n, horizon, S)),
        "phi": np.empty((n, horizon)),
        "eps": np.empty((n, G, horizon, S)),
    }
    for h in range(horizon):
        beta1 = beta1 + sd["sigma2_beta1"][:, None] * rng.standard_normal((n, S))
        phi = phi + sd["sigma2_phi"] * rng.standard_normal(n)
        beta2 = phi[:, None] + sd["sigma2_beta"][:, None] * rng.standard_normal((n, S))
        shock = sd["sigma2_eps"][:, None, None] * rng.standard_normal((n, G, S))
        eps = rho * eps + shock if include_eps else eps
        out["beta1"][:, h] = beta1
        out["beta2"][:, h] = beta2
        out["phi"][:, h] = phi
        out["eps"][:, :, h] = eps
    z1, z2 = np.asarray(samples.z1), np.asarray(samples.z2)
    out["log_mu"] = (z1[None, :, None, None] * out["beta1"][:, None]
                     + z2[None, :, None, None] * out["beta2"][:, None] + out["eps"])
    last = int(np.asarray(samples.years)[-1])
    out["years"] = np.arange(last + 1, last + 1 + horizon)
    return out


def project(samples: PosteriorSamples, inputs=None, horizon: int = 1, seed: int = 0,
            include_estimates: bool = False) -> pd.DataFrame:
    """Median and 95% interval of projected proportions for each future year.

    With ``include_estimates`` the in-sample summary is prepended, tagged
    ``kind="estimate"``.
    """
    if inputs is not None and len(inputs.years) != len(samples.years):
        raise ValueError("samples and inputs cover different years")
    proj = project_draws(samples, horizon, seed)
    fc = quantile_summary(proj["log_mu"], samples.ages, proj["years"], samples.regions)
    fc["kind"] = "forecast"
    if not include_estimates:
        return fc[SUMMARY_COLUMNS]
    est = summarize(samples)
    est["kind"] = "estimate"
    return pd.concat([est, fc], ignore_index=True)[SUMMARY_COLUMNS]
