from __future__ import annotations

import numpy as np
import pandas as pd

from ..exceptions import TooFewChains
from .state import VARIANCE_NAMES

MONITORED = ("beta1", "beta2", "phi") + VARIANCE_NAMES


def split_rhat(chains) -> np.ndarray:
    """Split-chain potential scale reduction factor.

    ``chains`` is (n_chains, n_draws, ...); the result has the trailing shape.
    Zero within- and between-chain variance gives 1 by convention.  The
    estimate is floored at 1: values below it carry no extra information.
    """
    x = np.asarray(chains, dtype=float)
    if x.shape[0] < 2:
        raise TooFewChains("R-hat needs at least 2 chains")
    if x.shape[1] < 10:
        raise ValueError("R-hat needs at least 10 draws per chain")
    n = x.shape[1] // 2
    halves = np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean(axis=0)
    between = means.var(axis=0, ddof=1)  # B / n
    var_plus = (n - 1) / n * within + between
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / within)
    r = np.where(within > 0, r, np.where(between > 0, np.inf, 1.0))
    return np.maximum(r, 1.0)


def _labels(name, samples):
    years, regions, ages = samples.years, samples.regions, samples.ages
    if name in ("beta1", "beta2"):
        return [f"{name}[{y},{r}]" for y in years for r in regions]
    if name == "phi":
        return [f"phi[{y}]" for y in years]
    if name == "eps":
        return [f"eps[{a},{y},{r}]" for a in ages for y in years for r in regions]
    if name == "rho":
        return [f"rho[{a},{r}]" for a in ages for r in regions]
    return [name]


def scalar_draws(samples, names=None, eps_fraction=0.1) -> dict:
    """Map ``label -> (n_chains, n_draws)`` for the selected parameters.

    With ``names=None`` the monitored set is used, plus every
    ``round(1 / eps_fraction)``-th AR error.
    """
    names = list(MONITORED) if names is None else list(names)
    out = {}
    for name in names:
        arr = samples.draws[name]
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        for j, label in enumerate(_labels(name, samples)):
            out[label] = flat[:, :, j]
    if eps_fraction and "eps" not in names:
        arr = samples.draws["eps"]
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        labels = _labels("eps", samples)
        step = max(1, int(round(1 / eps_fraction)))
        for j in range(0, flat.shape[2], step):
            out[labels[j]] = flat[:, :, j]
    return out


def gelman_rubin(samples, selector=None) -> pd.Series:
    """Split R-hat per scalar parameter.

    ``selector`` is ``None`` (monitored set), a list of parameter names, or a
    predicate on labels applied to the full parameter list.
    """
    if samples.n_chains < 2:
        raise TooFewChains("R-hat needs at least 2 chains")
    if callable(selector):
        draws = scalar_draws(samples, list(samples.draws), eps_fraction=0)
        draws = {k: v for k, v in draws.items() if selector(k)}
    elif selector is None:
        draws = scalar_draws(samples)
    else:
        draws = scalar_draws(samples, selector, eps_fraction=0)
    if not draws:
        return pd.Series(dtype=float, name="rhat")
    stacked = np.stack(list(draws.values()), axis=-1)
    return pd.Series(split_rhat(stacked), index=list(draws), name="rhat")


def quantile_summary(log_draws, ages, years, regions) -> pd.DataFrame:
    """Median and 95% interval on the proportion scale.

    ``log_draws`` is (n_samples, G, T, S) on the log scale.
    """
    p = np.exp(np.asarray(log_draws))
    lower, median, upper = np.quantile(p, [0.025, 0.5, 0.975], axis=0)
    G, T, S = median.shape
    grid = pd.MultiIndex.from_product([list(ages), [int(y) for y in years], list(regions)],
                                      names=["age_group", "year", "region"]).to_frame(index=False)
    grid["median"] = median.ravel()
    grid["lower95"] = lower.ravel()
    grid["upper95"] = upper.ravel()
    return grid


def summarize(samples) -> pd.DataFrame:
    """Per-cell posterior median and 2.5%/97.5% quantiles of mu."""
    log_mu = samples.log_mu()
    if log_mu.shape[0] * log_mu.shape[1] == 0:
        raise ValueError("no draws to summarise")
    flat = log_mu.reshape((-1,) + log_mu.shape[2:])
    return quantile_summary(flat, samples.ages, samples.years, samples.regions)
