from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

VARIANCE_NAMES = ("sigma2_beta1", "sigma2_beta", "sigma2_phi", "sigma2_eps", "sigma2_ns")
ARRAY_NAMES = ("beta1", "beta2", "phi", "eps", "rho")
PARAMETER_NAMES = ARRAY_NAMES + VARIANCE_NAMES


@dataclass
class ParameterState:
    """One draw of every model parameter.

    Shapes: ``beta1``/``beta2`` (T, S), ``phi`` (T,), ``eps`` (G, T, S),
    ``rho`` (G, S); the five variances are scalars.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    phi: np.ndarray
    eps: np.ndarray
    rho: np.ndarray
    sigma2_beta1: float
    sigma2_beta: float
    sigma2_phi: float
    sigma2_eps: float
    sigma2_ns: float

    def log_mu(self, z1, z2) -> np.ndarray:
        z1 = np.asarray(z1)[:, None, None]
        z2 = np.asarray(z2)[:, None, None]
        return z1 * self.beta1[None] + z2 * self.beta2[None] + self.eps

    def copy(self) -> "ParameterState":
        return ParameterState(**{f.name: np.copy(getattr(self, f.name)) if f.name in ARRAY_NAMES
                                 else float(getattr(self, f.name)) for f in fields(self)})

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAMETER_NAMES}

    def check(self, z1=None, z2=None) -> None:
        for name in VARIANCE_NAMES:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if np.any(self.rho < 0) or np.any(self.rho > 1):
            raise ValueError("rho outside [0, 1]")
        if z1 is not None and not np.all(np.isfinite(self.log_mu(z1, z2))):
            raise ValueError("non-finite log mu")
