"""Metropolis-within-Gibbs sampler for the hierarchical nowcasting model.

One sweep updates, in order:

1. the national mean walk ``phi`` with the regional processes integrated
   out, then per region the level and shape coefficients and the AR(1)
   errors jointly given ``phi`` (Gaussians; the regional precision is
   block-tridiagonal in time);
2. the AR coefficients ``rho`` (truncated-Gaussian independence proposal,
   accepted on the stationary initial-state density);
3. each standard deviation by slice sampling on the log scale;
4. the four process scales again, with standardised innovations held fixed
   instead of the processes themselves (interweaving the centred and
   non-centred views, which keeps the scales mixing when the processes are
   weakly identified).

Drawing ``phi`` collapsed avoids the slow alternation between ``phi`` and
the shape coefficients that a plain Gibbs scan suffers from.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..exceptions import NotConverged
from .blocks import (band_cholesky, band_noise, band_storage, random_walk_precision,
                     sample_block_tridiagonal, sample_dense_gaussian, sample_rho, scale_logpdf, slice_sample,
                     truncated_standard_normal)
from .config import ModelConfig
from .density import initial_variance_factor
from .inputs import ModelInputs
from .state import ARRAY_NAMES, PARAMETER_NAMES, VARIANCE_NAMES, ParameterState


@dataclass(eq=False)
class PosteriorSamples:
    """Post-warmup, thinned draws; every array has leading (chain, draw) axes."""

    draws: dict
    config: ModelConfig
    ages: tuple
    years: np.ndarray
    regions: tuple
    z1: np.ndarray
    z2: np.ndarray
    rng_seed: int = 0
    rhat: pd.Series | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.draws["beta1"].shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws["beta1"].shape[1]

    @property
    def config_echo(self) -> ModelConfig:
        return self.config

    @property
    def chains(self) -> list:
        return [{k: v[c] for k, v in self.draws.items()} for c in range(self.n_chains)]

    @property
    def converged(self) -> bool | None:
        if self.rhat is None or self.rhat.empty:
            return None
        return bool((self.rhat <= self.config.rhat_threshold).all())

    def state(self, chain: int, draw: int) -> ParameterState:
        return ParameterState(**{k: (np.array(v[chain, draw]) if k in ARRAY_NAMES else float(v[chain, draw]))
                                 for k, v in self.draws.items()})

    def log_mu(self) -> np.ndarray:
        """(chain, draw, G, T, S) array of log mu."""
        d = self.draws
        return (self.z1[:, None, None] * d["beta1"][:, :, None]
                + self.z2[:, None, None] * d["beta2"][:, :, None]
                + d["eps"])

    def truncate(self, n_years: int) -> "PosteriorSamples":
        """Keep only the first ``n_years`` years of every time-indexed array."""
        d = dict(self.draws)
        d["beta1"] = d["beta1"][:, :, :n_years]
        d["beta2"] = d["beta2"][:, :, :n_years]
        d["phi"] = d["phi"][:, :, :n_years]
        d["eps"] = d["eps"][:, :, :, :n_years]
        return PosteriorSamples(d, self.config, self.ages, self.years[:n_years], self.regions,
                                self.z1, self.z2, self.rng_seed)


class GibbsSampler:
    def __init__(self, inputs: ModelInputs, config: ModelConfig):
        self.inputs = inputs
        self.config = config
        G, T, S = inputs.shape
        self.shape = (G, T, S)
        self.k = G + 2
        self.A = np.vstack([inputs.z1, inputs.z2, np.eye(G)])

    def _floor(self, v):
        return max(float(v), self.config.variance_floor)

    def _projection(self, z):
        """Per-(year, region) least-squares loading of the observed schedule
        on ``z``, carried forward and back over unobserved years."""
        prec, lin = self.inputs.precision(0.0)
        seen = prec > 0
        y = np.where(seen, lin / np.where(seen, prec, 1.0), 0.0)
        num = np.einsum("g,gts->ts", z, y * seen)
        den = np.einsum("g,gts->ts", z**2, seen.astype(float))
        out = pd.DataFrame(np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)).ffill().bfill()
        fallback = np.nanmean(out.to_numpy()) if np.isfinite(out.to_numpy()).any() else 0.0
        return out.fillna(fallback).to_numpy()

    def initial_state(self, rng, jitter=0.1) -> ParameterState:
        """Level and shape coefficients from least-squares projections of the
        observed schedules, with the national walk at their regional mean and
        a little jitter; scales, AR coefficients and errors from the prior."""
        G, T, S = self.shape
        cfg = self.config
        beta1 = self._projection(self.inputs.z1) + rng.normal(0.0, jitter, (T, S))
        beta2 = self._projection(self.inputs.z2)
        phi = beta2.mean(axis=1) + rng.normal(0.0, jitter)
        beta2 = beta2 + rng.normal(0.0, jitter, (T, S))

        sd = np.abs(rng.normal(0.0, cfg.prior_scale_sd, size=5))
        var = {name: self._floor(s**2) for name, s in zip(VARIANCE_NAMES, sd)}
        rho = rng.uniform(size=(G, S))
        eps = np.empty((G, T, S))
        v0 = var["sigma2_eps"] * initial_variance_factor(rho, cfg.init_variance_cap)
        eps[:, 0] = rng.normal(0.0, np.sqrt(v0))
        for t in range(1, T):
            eps[:, t] = rho * eps[:, t - 1] + rng.normal(0.0, np.sqrt(var["sigma2_eps"]), (G, S))
        return ParameterState(beta1=beta1, beta2=beta2, phi=phi, eps=eps, rho=rho, **var)

    def _latent_system(self, st: ParameterState):
        """Per-region block-tridiagonal precision of (beta1, beta2, eps) and
        the linear term without the national-mean contribution."""
        G, T, S = self.shape
        k, A, cfg = self.k, self.A, self.config
        prec, lin = self.inputs.precision(st.sigma2_ns)
        D = (A * prec.transpose(2, 1, 0)[:, :, None, :]) @ A.T
        b = lin.transpose(2, 1, 0) @ A.T

        diag = np.zeros((S, T, k))
        diag[:, :, 0] = random_walk_precision(T, st.sigma2_beta1, cfg.prior_scale_coeff)[0]
        diag[:, :, 1] = 1.0 / st.sigma2_beta
        rho = st.rho.T  # (S, G)
        e_diag = np.empty((S, T, G))
        e_diag[:, 0] = 1.0 / (st.sigma2_eps * initial_variance_factor(rho, cfg.init_variance_cap))
        if T > 1:
            e_diag[:, 0] += rho**2 / st.sigma2_eps
            e_diag[:, 1:-1] = ((1.0 + rho**2) / st.sigma2_eps)[:, None, :]
            e_diag[:, -1] = 1.0 / st.sigma2_eps
        diag[:, :, 2:] = e_diag
        idx = np.arange(k)
        D[:, :, idx, idx] += diag

        C = np.zeros((S, T, k, k))
        C[:, 1:, 0, 0] = -1.0 / st.sigma2_beta1
        C[:, 1:, idx[2:], idx[2:]] = (-rho / st.sigma2_eps)[:, None, :]
        return D, C, b

    def _set_latent(self, st: ParameterState, x) -> None:
        st.beta1 = x[:, :, 0].T.copy()
        st.beta2 = x[:, :, 1].T.copy()
        st.eps = x[:, :, 2:].transpose(2, 1, 0).copy()

    def update_latent(self, st: ParameterState, rng) -> None:
        """Draw (beta1, beta2, eps) per region given phi and everything else."""
        D, C, b = self._latent_system(st)
        b[:, :, 1] += st.phi[None, :] / st.sigma2_beta
        self._set_latent(st, sample_block_tridiagonal(D, C, b, rng))

    def update_phi(self, st: ParameterState, rng) -> None:
        """Draw phi given the shape coefficients."""
        T, S = st.beta2.shape
        diag, off = random_walk_precision(T, st.sigma2_phi, self.config.prior_scale_coeff, S / st.sigma2_beta)
        b = st.beta2.sum(axis=1) / st.sigma2_beta
        st.phi = sample_block_tridiagonal(diag.reshape(1, T, 1, 1), off.reshape(1, T, 1, 1),
                                          b.reshape(1, T, 1), rng)[0, :, 0]

    def phi_marginal(self, st: ParameterState):
        """Precision and linear term of phi with the regional processes
        integrated out, plus the per-region factors reused by the draw.

        The regional precision ``Q = U'U`` does not involve phi, which enters
        only the linear term through the shape coefficients.
        """
        G, T, S = self.shape
        k, vb = self.k, st.sigma2_beta
        D, C, b = self._latent_system(st)
        band = band_storage(D, C)
        N = T * k
        rhs = np.zeros((N, T + 1))
        rhs[np.arange(T) * k + 1, np.arange(1, T + 1)] = 1.0  # selects the shape coefficients
        factors = []
        q_phi = np.zeros((T, T))
        b_phi = np.zeros(T)
        for s in range(S):
            chol = band_cholesky(band[s])
            rhs[:, 0] = b[s].reshape(N)
            V = band_noise(chol, rhs, trans=True)
            # P Q^{-1} P' and P Q^{-1} b from the whitened columns
            q_phi -= V[:, 1:].T @ V[:, 1:] / vb**2
            b_phi += V[:, 1:].T @ V[:, 0] / vb
            factors.append((chol, V))
        diag, off = random_walk_precision(T, st.sigma2_phi, self.config.prior_scale_coeff, S / vb)
        ix = np.arange(T)
        q_phi[ix, ix] += diag
        q_phi[ix[1:], ix[:-1]] += off[1:]
        q_phi[ix[:-1], ix[1:]] += off[1:]
        return q_phi, b_phi, factors

    def update_phi_latent(self, st: ParameterState, rng) -> None:
        """Draw phi with the regional processes integrated out, then the
        regional processes given phi, sharing one factorisation per region."""
        G, T, S = self.shape
        q_phi, b_phi, factors = self.phi_marginal(st)
        try:
            phi = sample_dense_gaussian(q_phi, b_phi, rng)
        except np.linalg.LinAlgError:
            # cancellation at tiny sigma2_beta; fall back to the plain conditionals
            self.update_latent(st, rng)
            self.update_phi(st, rng)
            return
        N = T * self.k
        z = rng.standard_normal((S, N))
        x = np.stack([band_noise(chol, V[:, 0] + V[:, 1:] @ phi / st.sigma2_beta + z[s])
                      for s, (chol, V) in enumerate(factors)])
        st.phi = phi
        self._set_latent(st, x.reshape(S, T, self.k))

    def update_rho(self, st: ParameterState, rng) -> None:
        st.rho, _ = sample_rho(st.eps, st.rho, st.sigma2_eps, self.config.init_variance_cap, rng)

    def update_scales(self, st: ParameterState, rng) -> None:
        cfg = self.config
        s0 = cfg.prior_scale_sd
        d1 = np.diff(st.beta1, axis=0)
        dphi = np.diff(st.phi)
        innov = st.eps[:, 1:] - st.rho[:, None, :] * st.eps[:, :-1]
        init = st.eps[:, 0] ** 2 / initial_variance_factor(st.rho, cfg.init_variance_cap)
        stats = {
            "sigma2_beta1": (d1.size, float((d1**2).sum())),
            "sigma2_beta": (st.beta2.size, float(((st.beta2 - st.phi[:, None]) ** 2).sum())),
            "sigma2_phi": (dphi.size, float((dphi**2).sum())),
            "sigma2_eps": (st.eps.size, float((innov**2).sum() + init.sum())),
        }
        with np.errstate(over="ignore", under="ignore"):
            for name, (n, ss) in stats.items():
                u = slice_sample(scale_logpdf(n, ss, s0), 0.5 * np.log(getattr(st, name)), rng)
                setattr(st, name, self._floor(np.exp(2 * u)))
            u = slice_sample(self._ns_logpdf(st), 0.5 * np.log(st.sigma2_ns), rng)
            st.sigma2_ns = self._floor(np.exp(2 * u))

    def _scale_given_innovations(self, A, B, rng) -> float:
        """Draw sigma from exp(-A sigma^2 / 2 + B sigma) on sigma > 0 under the
        half-Normal prior: a Normal truncated to the positive half-line."""
        q = A + 1.0 / self.config.prior_scale_sd**2
        m, sd = B / q, 1.0 / np.sqrt(q)
        sigma = m + sd * float(truncated_standard_normal(-m / sd, np.inf, rng))
        return self._floor(sigma**2)

    def update_interweave(self, st: ParameterState, rng) -> None:
        """Re-draw the four process scales with standardised innovations held
        fixed (the non-centred view), interleaved with the centred updates.

        With innovations fixed every process is linear in its scale, so each
        conditional is an exact truncated Normal.
        """
        z1, z2 = self.inputs.z1[:, None, None], self.inputs.z2[:, None, None]
        prec, lin = self.inputs.precision(st.sigma2_ns)

        def data_terms(a, rest):
            return float((prec * a * a).sum()), float((a * (lin - prec * rest)).sum())

        part1 = z1 * st.beta1[None]
        part2 = z2 * st.beta2[None]

        sd = np.sqrt(st.sigma2_beta1)
        path = (st.beta1 - st.beta1[0]) / sd
        A, B = data_terms(z1 * path[None], z1 * st.beta1[0][None, None, :] + part2 + st.eps)
        st.sigma2_beta1 = self._scale_given_innovations(A, B, rng)
        st.beta1 = st.beta1[0] + np.sqrt(st.sigma2_beta1) * path
        part1 = z1 * st.beta1[None]

        sd = np.sqrt(st.sigma2_beta)
        eta = (st.beta2 - st.phi[:, None]) / sd
        A, B = data_terms(z2 * eta[None], part1 + z2 * st.phi[None, :, None] + st.eps)
        st.sigma2_beta = self._scale_given_innovations(A, B, rng)
        st.beta2 = st.phi[:, None] + np.sqrt(st.sigma2_beta) * eta
        part2 = z2 * st.beta2[None]

        # the national walk is observed only through the shape coefficients
        sd = np.sqrt(st.sigma2_phi)
        path = (st.phi - st.phi[0]) / sd
        S = st.beta2.shape[1]
        A = S * float(path @ path) / st.sigma2_beta
        B = float(path @ (st.beta2 - st.phi[0]).sum(axis=1)) / st.sigma2_beta
        st.sigma2_phi = self._scale_given_innovations(A, B, rng)
        st.phi = st.phi[0] + np.sqrt(st.sigma2_phi) * path

        sd = np.sqrt(st.sigma2_eps)
        unit = st.eps / sd
        A, B = data_terms(unit, part1 + part2)
        st.sigma2_eps = self._scale_given_innovations(A, B, rng)
        st.eps = np.sqrt(st.sigma2_eps) * unit

    def _ns_logpdf(self, st: ParameterState):
        inputs, s0 = self.inputs, self.config.prior_scale_sd
        if len(inputs.social_y) == 0:
            return scale_logpdf(0, 0.0, s0)
        x, t, s = inputs.social_cell.T
        r2 = (inputs.social_y - st.log_mu(inputs.z1, inputs.z2)[x, t, s]) ** 2
        w = inputs.social_var

        def logf(u):
            v = w + np.exp(2 * u)
            return -0.5 * np.sum(np.log(v) + r2 / v) - 0.5 * np.exp(2 * u) / s0**2 + u

        return logf

    def step(self, st: ParameterState, rng) -> ParameterState:
        self.update_phi_latent(st, rng)
        self.update_rho(st, rng)
        self.update_scales(st, rng)
        self.update_interweave(st, rng)
        return st


def chain_seeds(seed: int, n_chains: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_chains)]


def run_chain(sampler: GibbsSampler, rng, state: ParameterState | None = None, n_iter=None, n_warmup=None,
              thin=None) -> dict:
    cfg = sampler.config
    n_iter = cfg.n_iter if n_iter is None else n_iter
    n_warmup = cfg.n_warmup if n_warmup is None else n_warmup
    thin = cfg.thin if thin is None else thin
    state = sampler.initial_state(rng) if state is None else state.copy()
    keep = range(n_warmup, n_iter, thin)
    out = {name: np.empty((len(keep),) + np.shape(getattr(state, name))) for name in PARAMETER_NAMES}
    j = 0
    for it in range(n_iter):
        sampler.step(state, rng)
        if it >= n_warmup and (it - n_warmup) % thin == 0:
            for name in PARAMETER_NAMES:
                out[name][j] = getattr(state, name)
            j += 1
    return out


def run_mcmc(inputs: ModelInputs, config: ModelConfig | None = None, initial_states=None,
             diagnose: bool = True) -> PosteriorSamples:
    """Sample the posterior; chains use independent sub-seeds of ``config.seed``.

    A :class:`NotConverged` warning is issued when any monitored R-hat exceeds
    ``config.rhat_threshold``; the samples are returned either way.
    """
    from .diagnostics import gelman_rubin

    config = config or ModelConfig()
    sampler = GibbsSampler(inputs, config)
    rngs = chain_seeds(config.seed, config.n_chains)
    if initial_states is not None and len(initial_states) != config.n_chains:
        raise ValueError("need one initial state per chain")
    chains = [run_chain(sampler, rng, None if initial_states is None else initial_states[c])
              for c, rng in enumerate(rngs)]
    draws = {name: np.stack([ch[name] for ch in chains]) for name in PARAMETER_NAMES}
    samples = PosteriorSamples(draws, config, tuple(inputs.ages), np.asarray(inputs.years), tuple(inputs.regions),
                               np.asarray(inputs.z1), np.asarray(inputs.z2), rng_seed=config.seed)
    if diagnose and samples.n_chains >= 2 and samples.n_draws >= 10:
        samples.rhat = gelman_rubin(samples)
        if not samples.converged:
            worst = samples.rhat.idxmax()
            warnings.warn(f"R-hat above {config.rhat_threshold} (max {samples.rhat.max():.3f} at {worst})",
                          NotConverged, stacklevel=2)
    return samples
