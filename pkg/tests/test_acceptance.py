"""Acceptance criteria 1-8, each reported as one pass/fail line.

Run on their own with ``pytest tests/test_acceptance.py -v -s``; the lines
are also collected in an "acceptance criteria" section of the pytest
summary.  Criteria 4 and 6 fit the model many times and take several minutes.
"""
import json
import time
import warnings

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.linalg import subspace_angles

from migstock.biasadjust import adjust_wave, fit_bias_model
from migstock.cli import main
from migstock.components import compute_components
from migstock.exceptions import NotConverged
from migstock.forecast import project_draws
from migstock.model import ModelConfig, PosteriorSamples, build_inputs, run_mcmc
from migstock.model.blocks import (random_walk_precision, sample_block_tridiagonal, sample_dense_gaussian,
                                   sample_rho, scale_logpdf, slice_sample)
from migstock.model.density import initial_variance_factor
from migstock.model.sampler import GibbsSampler
from migstock.simulate import Truth, default_components, simulate
from migstock.validate import run_validation

from conftest import anchor_data, random_state, tiny_inputs

N_DRAWS = 100_000


def batch_se(x, n_batches=100):
    x = np.asarray(x)
    b = x[: len(x) // n_batches * n_batches].reshape(n_batches, -1).mean(axis=1)
    return b.std(ddof=1) / np.sqrt(n_batches)


def test_criterion_1_svd_against_gram_oracle(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_angle = worst_orth = 0.0
    for _ in range(100):
        X = rng.normal(size=(20, 9))
        pc = compute_components(X)
        w, V = np.linalg.eigh(X.T @ X)
        order = np.argsort(w)[::-1]
        for z, v in ((pc.z1, V[:, order[0]]), (pc.z2, V[:, order[1]])):
            worst_angle = max(worst_angle, float(subspace_angles(z[:, None], v[:, None])[0]))
        worst_orth = max(worst_orth, abs(pc.z1 @ pc.z1 - 1), abs(pc.z2 @ pc.z2 - 1), abs(pc.z1 @ pc.z2))
    elapsed = time.perf_counter() - start
    acceptance(1, "SVD matches Gram eigendecomposition", worst_angle < 1e-8 and worst_orth < 1e-10 and elapsed < 5,
               f"max angle {worst_angle:.1e}, max orthonormality error {worst_orth:.1e}, {elapsed:.1f}s")


def test_criterion_2_bias_regression_recovery(acceptance):
    start = time.perf_counter()
    survey, social, truth = anchor_data(0)
    fit = fit_bias_model(survey, social)
    err = max(abs(fit.alpha0 - truth.alpha0), abs(fit.alpha1 - truth.alpha1),
              max(abs(fit.age_effects[k] - v) for k, v in truth.age_effects.items()),
              max(abs(fit.region_effects[k] - v) for k, v in truth.region_effects.items()))
    s2 = [fit_bias_model(*anchor_data(seed, noise=0.1)[:2]).sigma2_fb for seed in range(1, 101)]
    mean_s2 = float(np.mean(s2))
    elapsed = time.perf_counter() - start
    in_range = all(0.005 <= v <= 0.015 for v in s2)
    ok = err < 1e-9 and abs(mean_s2 - 0.01) < 0.001 and in_range and elapsed < 10
    acceptance(2, "bias regression recovery", ok,
               f"noiseless max error {err:.1e}, mean residual variance {mean_s2:.5f} over 100 seeds "
               f"(range {min(s2):.5f} to {max(s2):.5f}), {elapsed:.1f}s")


def _within(draws, mean, var, se_mean=None):
    """Sample mean and variance within 3 standard errors of their targets."""
    n = len(draws)
    se_mean = np.sqrt(var / n) if se_mean is None else se_mean
    m_ok = abs(np.mean(draws) - mean) < 3 * se_mean
    v_ok = abs(np.var(draws) - var) < 3 * var * np.sqrt(2 / n) if se_mean is None else True
    return bool(m_ok and v_ok), (np.mean(draws) - mean) / se_mean


def _quadrature_moments(logf, lo, hi, transform=lambda x: x, points=None):
    peak = max(logf(x) for x in np.linspace(lo, hi, 2001)[1:-1])
    dens = lambda x: np.exp(logf(x) - peak)  # noqa: E731
    norm = integrate.quad(dens, lo, hi, points=points, limit=200)[0]
    m1 = integrate.quad(lambda x: transform(x) * dens(x), lo, hi, points=points, limit=200)[0] / norm
    m2 = integrate.quad(lambda x: transform(x) ** 2 * dens(x), lo, hi, points=points, limit=200)[0] / norm
    return m1, m2 - m1**2


def test_criterion_3_conditional_updates(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    results = {}

    # random-walk node pair observed once: the latent-process block
    diag, off = random_walk_precision(2, 0.5, 4.0, extra_precision=np.array([0.0, 4.0]))
    Q = np.array([[diag[0], off[1]], [off[1], diag[1]]])
    b = np.array([0.0, 5.2])
    cov = np.linalg.inv(Q)
    draws = sample_block_tridiagonal(np.broadcast_to(diag.reshape(1, 2, 1, 1), (N_DRAWS, 2, 1, 1)),
                                     np.broadcast_to(off.reshape(1, 2, 1, 1), (N_DRAWS, 2, 1, 1)),
                                     np.broadcast_to(b.reshape(1, 2, 1), (N_DRAWS, 2, 1)), rng)[:, :, 0]
    results["latent block"] = [_within(draws[:, i], (cov @ b)[i], cov[i, i]) for i in range(2)]

    # conjugate Normal pair: the collapsed national-mean draw
    prior = np.array([[2.0, 0.8], [0.8, 1.0]])
    Q = np.linalg.inv(prior) + np.diag([1 / 0.3, 1 / 0.6])
    b = np.array([0.4 / 0.3, -1.1 / 0.6])
    cov = np.linalg.inv(Q)
    draws = np.array([sample_dense_gaussian(Q, b, rng) for _ in range(N_DRAWS)])
    results["national mean"] = [_within(draws[:, i], (cov @ b)[i], cov[i, i]) for i in range(2)]

    # non-centred scale update: Normal restricted to the positive half-line
    sampler = GibbsSampler(tiny_inputs(), ModelConfig(variance_floor=1e-300))
    A, B = 30.0, 4.0
    q = A + 1.0
    sigma = np.sqrt([sampler._scale_given_innovations(A, B, rng) for _ in range(N_DRAWS)])
    m, sd = B / q, 1 / np.sqrt(q)
    tm, tv = stats.truncnorm.stats(-m / sd, np.inf, loc=m, scale=sd, moments="mv")
    results["scale (non-centred)"] = [_within(sigma, float(tm), float(tv))]

    # centred scale update by slice sampling on the log scale
    logf = scale_logpdf(12, 3.0, 1.0)
    u, out = 0.0, np.empty(N_DRAWS)
    for i in range(N_DRAWS):
        u = slice_sample(logf, u, rng)
        out[i] = np.exp(2 * u)
    mean, _ = _quadrature_moments(logf, -10, 5, transform=lambda x: np.exp(2 * x))
    results["scale (centred)"] = [_within(out, mean, 0.0, se_mean=batch_se(out))]

    # non-sampling variance given per-observation variances
    inputs = tiny_inputs(social=[(0, 0, 0, -3.0, 0.01), (1, 1, 1, -2.5, 0.05), (0, 2, 1, -3.4, 0.02),
                                 (1, 2, 0, -2.8, 0.03)])
    state = random_state(np.random.default_rng(0), *inputs.shape)
    logf = GibbsSampler(inputs, ModelConfig())._ns_logpdf(state)
    u, out = 0.0, np.empty(N_DRAWS)
    for i in range(N_DRAWS):
        u = slice_sample(logf, u, rng)
        out[i] = np.exp(2 * u)
    mean, _ = _quadrature_moments(logf, -12, 4, transform=lambda x: np.exp(2 * x))
    results["non-sampling scale"] = [_within(out, mean, 0.0, se_mean=batch_se(out))]

    # AR coefficients: independent chains started uniformly, checked against quadrature
    e = np.array([0.4, 0.3, 0.35, 0.1, 0.2, 0.05])
    sigma2, cap = 0.1, 1e3

    def rho_logpdf(r):
        ll = stats.norm.logpdf(e[0], 0, np.sqrt(sigma2 * initial_variance_factor(r, cap)))
        return ll + stats.norm.logpdf(e[1:], r * e[:-1], np.sqrt(sigma2)).sum()

    rho = rng.uniform(size=(1, N_DRAWS))
    eps = np.broadcast_to(e[None, :, None], (1, len(e), N_DRAWS)).copy()
    for _ in range(30):
        rho, _ = sample_rho(eps, rho, sigma2, cap, rng)
    mean, var = _quadrature_moments(rho_logpdf, 0.0, 1.0)
    results["AR coefficient"] = [_within(rho[0], mean, var)]

    elapsed = time.perf_counter() - start
    ok = all(o for checks in results.values() for o, _ in checks) and elapsed < 60
    worst = max(abs(z) for checks in results.values() for _, z in checks)
    failed = [k for k, checks in results.items() if not all(o for o, _ in checks)]
    acceptance(3, "conditional updates match closed-form posteriors", ok,
               f"{len(results)} updates at {N_DRAWS} draws, worst mean deviation {worst:.2f} SE, "
               f"failed {failed or 'none'}, {elapsed:.1f}s")


CAL_CONFIG = dict(n_chains=4, n_iter=2000, n_warmup=1000, thin=2)


@pytest.mark.slow
def test_criterion_4_calibration(acceptance):
    start = time.perf_counter()
    coverage, max_rhat = [], []
    for seed in range(20):
        survey, social, record = simulate(seed=seed)
        truth = Truth.from_dict(record)
        coefs = fit_bias_model(survey, social)
        # the true components pin down what the level coefficients mean
        inputs = build_inputs(survey, adjust_wave(coefs, social), coefs.sigma2_fb, truth.components)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            s = run_mcmc(inputs, ModelConfig(seed=seed, **CAL_CONFIG))
        b1 = s.draws["beta1"].reshape((-1,) + s.draws["beta1"].shape[2:])
        lo, hi = np.quantile(b1, [0.025, 0.975], axis=0)
        tb = truth.state.beta1
        coverage.append(float(((lo <= tb) & (tb <= hi)).mean()))
        max_rhat.append(float(s.rhat.max()))
    elapsed = time.perf_counter() - start
    pooled = float(np.mean(coverage))
    converged = float(np.mean(np.array(max_rhat) < 1.1))
    ok = pooled >= 0.85 and converged >= 0.9 and elapsed < 15 * 60
    acceptance(4, "simulation-based calibration", ok,
               f"coverage {pooled:.3f} over 20 replicates (min {min(coverage):.3f}), "
               f"R-hat < 1.1 in {converged:.0%} (worst {max(max_rhat):.3f}), {elapsed / 60:.1f} min")


def test_criterion_5_source_weighting(acceptance):
    start = time.perf_counter()
    closer, between = 0, 0
    cfg = ModelConfig(n_chains=1, n_iter=700, n_warmup=200, thin=1)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        y_svy = rng.normal(-3.0, 0.5)
        y_soc = y_svy + rng.choice([-1, 1]) * rng.uniform(0.3, 1.0)
        v = rng.uniform(0.005, 0.02)
        fb = rng.uniform(0.01, 0.05)
        inputs = tiny_inputs(G=2, T=2, S=1, survey=[(0, 0, 0, y_svy, v)], social=[(0, 0, 0, y_soc, v + fb)],
                             sigma2_fb=fb)
        post = run_mcmc(inputs, cfg.replace(seed=seed), diagnose=False).log_mu()[:, :, 0, 0, 0].mean()
        closer += abs(post - y_svy) < abs(post - y_soc)
        between += min(y_svy, y_soc) < post < max(y_svy, y_soc)
    elapsed = time.perf_counter() - start
    acceptance(5, "survey observation carries more weight", closer == 50 and between == 50,
               f"closer to survey in {closer}/50 runs, between the two in {between}/50, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_6_validation_ordering(acceptance):
    start = time.perf_counter()
    rows = []
    for seed in range(20):
        survey, social, _ = simulate(seed=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            r = run_validation(survey, social, ModelConfig(n_chains=2, n_iter=1500, n_warmup=750, thin=2, seed=seed))
        rows.append(r.overall_rmse)
    elapsed = time.perf_counter() - start
    mean = {m: float(np.mean([r[m] for r in rows])) for m in rows[0]}
    ok = (mean["combined"] <= mean["survey_only"] and mean["survey_only"] < mean["moving_average"]
          and mean["combined"] < mean["moving_average"] and elapsed < 30 * 60)
    detail = ", ".join(f"{m} {v:.5f}" for m, v in mean.items())
    acceptance(6, "combined <= survey-only < moving average (mean RMSE, 20 seeds)", ok,
               f"{detail}, {elapsed / 60:.1f} min")


def test_criterion_7_forecast_variance_law(acceptance):
    n, S, s2 = 10_000, 3, 0.04
    comps = default_components()
    rng = np.random.default_rng(7)
    draws = {
        "beta1": rng.normal(3, 0.2, (1, n, 1, S)), "beta2": rng.normal(0, 0.1, (1, n, 1, S)),
        "phi": rng.normal(0, 0.1, (1, n, 1)), "eps": rng.normal(0, 0.05, (1, n, 9, 1, S)),
        "rho": rng.uniform(size=(1, n, 9, S)), "sigma2_beta1": np.full((1, n), s2),
        "sigma2_beta": np.full((1, n), 0.01), "sigma2_phi": np.full((1, n), 0.01),
        "sigma2_eps": np.full((1, n), 0.01), "sigma2_ns": np.full((1, n), 0.01),
    }
    samples = PosteriorSamples(draws, ModelConfig(), comps.age_index, np.array([2018]), ("A", "B", "C"),
                               comps.z1, comps.z2)
    proj = project_draws(samples, 5, seed=1)["beta1"]
    var = (proj - draws["beta1"][0, :, -1][:, None, :]).var(axis=0).mean(axis=1)
    h = np.arange(1, 6)
    slope = float(h @ var / (h @ h))
    acceptance(7, "projected level variance grows linearly", abs(slope / s2 - 1) < 0.1,
               f"slope {slope:.5f} vs {s2} ({slope / s2 - 1:+.1%}) over {n} draws")


def test_criterion_8_end_to_end_determinism(acceptance, tmp_path):
    sampler = ["--chains", "2", "--iter", "200", "--warmup", "100", "--thin", "1", "--seed", "7"]
    manifests, codes = [], []
    for run in ("a", "b"):
        root = tmp_path / run
        codes.append(main(["simulate", "--seed", "7", "--out-dir", str(root / "data")]))
        data = ["--survey", str(root / "data" / "survey.csv"), "--social", str(root / "data" / "social.csv")]
        codes.append(main(["fit", *data, "--horizon", "1", "--out-dir", str(root / "fit"), *sampler]))
        codes.append(main(["validate", *data, "--out-dir", str(root / "validate"), *sampler]))
        manifests.append([(root / step / "manifest.json").read_bytes() for step in ("data", "fit", "validate")])
    same = manifests[0] == manifests[1]
    n_outputs = sum(len(json.loads(m)["outputs"]) for m in manifests[0])
    acceptance(8, "simulate + fit + validate manifests byte-identical across runs",
               same and all(c in (0, 3) for c in codes),
               f"3 manifests covering {n_outputs} output digests, exit codes {codes}")
