from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class ModelConfig:
    """Sampler settings and prior scales.

    ``prior_scale_coeff`` is the variance of the Normal priors on the initial
    level coefficient and national mean; ``prior_scale_sd`` is the scale of the
    half-Normal priors on every standard deviation.
    """

    n_chains: int = 4
    n_iter: int = 10000
    n_warmup: int = 5000
    thin: int = 5
    seed: int = 0
    prior_scale_coeff: float = 100.0
    prior_scale_sd: float = 1.0
    rhat_threshold: float = 1.1
    init_variance_cap: float = 1e3
    variance_floor: float = 1e-12

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.n_warmup < self.n_iter:
            raise ValueError("need 0 <= n_warmup < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        for name in ("prior_scale_coeff", "prior_scale_sd", "rhat_threshold", "init_variance_cap",
                     "variance_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_draws(self) -> int:
        return len(range(self.n_warmup, self.n_iter, self.thin))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig field(s): {sorted(unknown)}")
        out = {}
        for key, value in d.items():
            if isinstance(getattr(cls, key), int):
                out[key] = int(value) if str(value).strip().lstrip("-").isdigit() else int(float(value))
            else:
                out[key] = float(value)
        return cls(**out)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), **{k: v for k, v in changes.items() if v is not None}})
