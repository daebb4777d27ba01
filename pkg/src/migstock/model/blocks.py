"""Conditional updates used by the Gibbs sampler."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import linalg, special
from scipy.linalg import lapack

from .density import initial_variance_factor, normal_logpdf


@lru_cache(maxsize=32)
def _band_layout(T, k):
    """Index arrays placing diagonal and sub-diagonal blocks in LAPACK upper band storage."""
    u = 2 * k - 1 if T > 1 else k - 1
    a, b = np.triu_indices(k)
    t = np.repeat(np.arange(T), len(a))
    aa, bb = np.tile(a, T), np.tile(b, T)
    diag = (t, aa, bb, u + aa - bb, t * k + bb)
    # Q[(t, a), (t-1, b)] sits above the diagonal at ((t-1, b), (t, a))
    tc = np.repeat(np.arange(1, T), k * k)
    ac = np.tile(np.repeat(np.arange(k), k), max(T - 1, 0))
    bc = np.tile(np.tile(np.arange(k), k), max(T - 1, 0))
    sub = (tc, ac, bc, u - k + bc - ac, tc * k + ac)
    return u, diag, sub


def band_storage(D, C):
    """Pack block-tridiagonal precisions into LAPACK upper band storage.

    ``D`` (B, T, k, k) holds the diagonal blocks and ``C[:, t]`` the block
    ``Q[t, t-1]`` (``C[:, 0]`` is ignored).  Returns (B, u + 1, T * k).
    """
    B, T, k, _ = D.shape
    u, (t, a, bb, row, col), (tc, ac, bc, row_c, col_c) = _band_layout(T, k)
    band = np.zeros((B, u + 1, T * k))
    band[:, row, col] = D[:, t, a, bb]
    if T > 1:
        band[:, row_c, col_c] = C[:, tc, ac, bc]
    return band


def band_cholesky(band):
    # Q = U'U with U upper banded
    chol, info = lapack.dpbtrf(band, lower=0)
    if info != 0:
        raise np.linalg.LinAlgError("conditional precision is not positive definite")
    return chol


def band_solve(chol, rhs):
    out, info = lapack.dpbtrs(chol, rhs, lower=0)
    if info != 0:
        raise np.linalg.LinAlgError("banded solve failed")
    return out


def band_noise(chol, z, trans=False):
    """``U^{-1} z`` (or ``U^{-T} z``); the former is a draw from N(0, Q^{-1})
    when ``z`` is standard normal."""
    out, info = lapack.dtbtrs(chol, z, uplo="U", trans="T" if trans else "N")
    if info != 0:
        raise np.linalg.LinAlgError("singular banded factor")
    return out


def sample_block_tridiagonal(D, C, b, rng=None, z=None):
    """Draw ``x ~ N(Q^{-1} b, Q^{-1})`` for a block-tridiagonal precision ``Q``.

    Shapes are batched over a leading axis: ``D`` (B, T, k, k) holds the
    diagonal blocks, ``C[:, t]`` (B, T, k, k) the block ``Q[t, t-1]``
    (``C[:, 0]`` is ignored) and ``b`` (B, T, k) the linear term.  Passing
    ``z = 0`` returns the conditional mean.
    """
    D = np.asarray(D, dtype=float)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    B, T, k, _ = D.shape
    N = T * k
    if z is None:
        z = rng.standard_normal((B, N))
    else:
        z = np.broadcast_to(np.asarray(z, dtype=float), (B, T, k)).reshape(B, N)
    band = band_storage(D, C)
    rhs = b.reshape(B, N)
    out = np.empty((B, N))
    for i in range(B):
        chol = band_cholesky(band[i])
        out[i] = band_solve(chol, rhs[i]) + band_noise(chol, z[i])
    return out.reshape(B, T, k)


def sample_dense_gaussian(Q, b, rng=None, z=None):
    """Draw ``x ~ N(Q^{-1} b, Q^{-1})`` for a small dense precision."""
    L = linalg.cholesky(Q, lower=True)
    mean = linalg.cho_solve((L, True), b)
    if z is None:
        z = rng.standard_normal(len(b))
    return mean + linalg.solve_triangular(L, z, lower=True, trans="T")


def random_walk_precision(T, innovation_var, initial_var, extra_precision=0.0):
    """Tridiagonal precision of a Gaussian random walk, as (diag, offdiag).

    ``extra_precision`` (scalar or length T) is added to the diagonal.
    """
    diag = np.zeros(T)
    diag[0] = 1.0 / initial_var
    diag[1:] += 1.0 / innovation_var
    diag[:-1] += 1.0 / innovation_var
    off = np.full(T, -1.0 / innovation_var)
    off[0] = 0.0
    return diag + extra_precision, off


def truncated_standard_normal(lo, hi, rng):
    """Inverse-CDF draws from N(0, 1) restricted to [lo, hi], elementwise.

    Intervals in the upper tail are reflected so the CDF is evaluated where it
    is small and accurate.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    pa, pb = special.ndtr(a), special.ndtr(b)
    u = pa + rng.uniform(size=a.shape) * (pb - pa)
    x = special.ndtri(np.clip(u, 1e-300, 1.0))
    x = np.clip(np.where(np.isfinite(x), x, a), a, b)
    return np.where(flip, -x, x)


def sample_rho(eps, rho, sigma2_eps, cap, rng):
    """Metropolis-within-Gibbs update of AR(1) coefficients on [0, 1].

    The AR transition terms give a Gaussian in ``rho``, drawn truncated to
    [0, 1] as an independence proposal; the stationary density of the first
    error term is the acceptance ratio.  ``eps`` is (G, T, S), ``rho`` (G, S).
    """
    prev = eps[:, :-1, :]
    curr = eps[:, 1:, :]
    ss = (prev**2).sum(axis=1)
    cross = (prev * curr).sum(axis=1)
    flat = ss <= 1e-300
    safe = np.where(flat, 1.0, ss)
    mean = np.where(flat, 0.5, cross / safe)
    sd = np.sqrt(sigma2_eps / safe)
    lo = (0.0 - mean) / sd
    hi = (1.0 - mean) / sd
    proposal = mean + sd * truncated_standard_normal(lo, hi, rng)
    proposal = np.where(flat, rng.uniform(size=rho.shape), np.clip(proposal, 0.0, 1.0))
    e0 = eps[:, 0, :]
    log_ratio = (normal_logpdf(e0, 0.0, sigma2_eps * initial_variance_factor(proposal, cap))
                 - normal_logpdf(e0, 0.0, sigma2_eps * initial_variance_factor(rho, cap)))
    accept = np.log(rng.uniform(size=rho.shape)) < log_ratio
    return np.where(accept, proposal, rho), accept


def slice_sample(logf, x0, rng, width=1.0, max_steps=64):
    """Univariate slice sampler with stepping out and shrinkage."""
    f0 = logf(x0)
    level = f0 + np.log(rng.uniform())
    left = x0 - width * rng.uniform()
    right = left + width
    j = int(rng.integers(max_steps))
    k = max_steps - 1 - j
    while j > 0 and logf(left) > level:
        left -= width
        j -= 1
    while k > 0 and logf(right) > level:
        right += width
        k -= 1
    while True:
        x1 = rng.uniform(left, right)
        if logf(x1) > level:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1


def scale_logpdf(n, ss, prior_scale):
    """Log conditional of ``u = log(sigma)`` for ``n`` N(0, sigma^2) terms with
    sum of squares ``ss`` under a half-Normal(``prior_scale``) prior on sigma.
    """
    def logf(u):
        return -n * u - 0.5 * ss * np.exp(-2 * u) - 0.5 * np.exp(2 * u) / prior_scale**2 + u
    return logf
