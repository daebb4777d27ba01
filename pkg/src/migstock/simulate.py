"""Synthetic survey and social-media panels drawn from known parameters."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .biasadjust import BiasCoefficients
from .components import PrincipalComponents
from .exceptions import InvalidTruth
from .ingest import AGE_GROUPS, AGE_LABELS, COLUMNS, MigrantPanel, write_panel
from .model.density import initial_variance_factor
from .model.state import ParameterState, VARIANCE_NAMES

CLAMP = 1e-8


@dataclass(frozen=True)
class SimulationDims:
    """Panel layout for a synthetic run.

    The year axis holds ``n_survey_years`` survey-only years followed by
    ``n_wave_years`` years with social-media waves; the survey also covers the
    first ``survey_overlap_years`` wave years, which gives the bias regression
    a contemporaneous anchor and the validation protocol a holdout year.
    """

    n_regions: int = 10
    first_year: int = 2001
    n_survey_years: int = 16
    n_wave_years: int = 2
    waves_per_year: int = 2
    survey_overlap_years: int = 1
    survey_log_sd: float = 0.05
    population_count: int = 200_000
    sampling_noise: bool = True
    missing_fraction: float = 0.0
    origin: str = "SIM"

    def __post_init__(self):
        if self.n_regions < 2 or self.n_survey_years < 1 or self.n_wave_years < 0 or self.waves_per_year < 1:
            raise InvalidTruth("invalid simulation dimensions")
        if not 0 <= self.survey_overlap_years <= self.n_wave_years:
            raise InvalidTruth("survey_overlap_years must lie in [0, n_wave_years]")
        if self.survey_log_sd < 0 or not 0 <= self.missing_fraction < 1 or self.population_count < 1:
            raise InvalidTruth("invalid noise settings")

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.first_year + self.n_survey_years + self.n_wave_years)

    @property
    def survey_years(self) -> np.ndarray:
        return self.years[: self.n_survey_years + self.survey_overlap_years]

    @property
    def wave_years(self) -> np.ndarray:
        return self.years[self.n_survey_years:]

    @property
    def regions(self) -> tuple:
        return tuple(f"R{i + 1:02d}" for i in range(self.n_regions))

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationDims":
        kinds = {k: type(v) for k, v in asdict(cls()).items()}
        out = {}
        for key, value in d.items():
            if key not in kinds:
                raise ValueError(f"unknown simulation setting {key!r}")
            kind = kinds[key]
            if kind is bool:
                out[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            elif kind is int:
                out[key] = int(float(value))
            else:
                out[key] = kind(value)
        return cls(**out)


@dataclass(eq=False)
class Truth:
    state: ParameterState
    bias: BiasCoefficients
    components: PrincipalComponents
    extra: dict = field(default_factory=dict)

    @property
    def sigma2_fb(self) -> float:
        return self.bias.sigma2_fb

    def log_mu(self) -> np.ndarray:
        return self.state.log_mu(self.components.z1, self.components.z2)

    def to_dict(self) -> dict:
        st = self.state
        return {
            "state": {k: (np.asarray(v).tolist() if k not in VARIANCE_NAMES else float(v))
                      for k, v in st.as_dict().items()},
            "bias": asdict(self.bias),
            "components": self.components.to_dict(),
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        state = ParameterState(**{k: (np.array(v, dtype=float) if k not in VARIANCE_NAMES else float(v))
                                  for k, v in d["state"].items()})
        extra = {k: v for k, v in d.items() if k not in ("state", "bias", "components")}
        return cls(state, BiasCoefficients(**d["bias"]), PrincipalComponents.from_dict(d["components"]), extra)


def default_components() -> PrincipalComponents:
    """A hump-shaped baseline schedule and an orthogonal age-gradient."""
    mid = np.array([a.lower_bound + 2.5 for a in AGE_GROUPS])
    base = np.log(0.02) + 0.6 * np.exp(-(((mid - 37) / 10) ** 2))
    z1 = base / np.linalg.norm(base)
    slope = mid - mid.mean()
    z2 = slope - (slope @ z1) * z1
    z2 /= np.linalg.norm(z2)
    return PrincipalComponents(z1=z1, z2=z2, singular_values=(np.linalg.norm(base), 0.0), age_index=AGE_LABELS)


def draw_truth(dims: SimulationDims | None = None, seed: int = 0, sigma_beta1=0.1, sigma_beta=0.05,
               sigma_phi=0.05, sigma_eps=0.05, sigma_ns=0.02, sigma_fb=0.05, rho_range=(0.5, 0.9),
               alpha0=-0.3, alpha1=0.9, effect_sd=0.2, cap=1e3) -> Truth:
    """Draw latent processes and bias coefficients from the generative model."""
    dims = dims or SimulationDims()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    comps = default_components()
    G, T, S = len(AGE_LABELS), len(dims.years), dims.n_regions
    base_norm = comps.singular_values[0]
    beta1 = np.empty((T, S))
    beta1[0] = base_norm * rng.uniform(0.8, 1.25, S)
    beta1[1:] = beta1[0] + np.cumsum(rng.normal(0, sigma_beta1, (T - 1, S)), axis=0)
    phi = np.concatenate([[0.0], np.cumsum(rng.normal(0, sigma_phi, T - 1))])
    beta2 = phi[:, None] + rng.normal(0, sigma_beta, (T, S))
    rho = rng.uniform(*rho_range, (G, S))
    eps = np.empty((G, T, S))
    eps[:, 0] = rng.normal(0, sigma_eps * np.sqrt(initial_variance_factor(rho, cap)))
    for t in range(1, T):
        eps[:, t] = rho * eps[:, t - 1] + rng.normal(0, sigma_eps, (G, S))
    state = ParameterState(beta1, beta2, phi, eps, rho, sigma_beta1**2, sigma_beta**2, sigma_phi**2,
                           sigma_eps**2, sigma_ns**2)
    age_fx = np.concatenate([[0.0], rng.normal(0, effect_sd, G - 1)])
    reg_fx = np.concatenate([[0.0], rng.normal(0, effect_sd, S - 1)])
    bias = BiasCoefficients(
        alpha0=alpha0, alpha1=alpha1,
        age_effects=dict(zip(AGE_LABELS, age_fx.tolist())),
        region_effects=dict(zip(dims.regions, reg_fx.tolist())),
        sigma2_fb=sigma_fb**2,
    )
    return Truth(state, bias, comps)


def _check_truth(truth: Truth, dims: SimulationDims) -> None:
    G, T, S = len(AGE_LABELS), len(dims.years), dims.n_regions
    st = truth.state
    expected = {"beta1": (T, S), "beta2": (T, S), "phi": (T,), "eps": (G, T, S), "rho": (G, S)}
    for name, shape in expected.items():
        if np.shape(getattr(st, name)) != shape:
            raise InvalidTruth(f"{name} has shape {np.shape(getattr(st, name))}, expected {shape}")
    if np.any(st.rho < 0) or np.any(st.rho > 1):
        raise InvalidTruth("rho outside [0, 1]")
    if any(getattr(st, v) < 0 for v in VARIANCE_NAMES) or truth.bias.sigma2_fb < 0:
        raise InvalidTruth("negative variance")
    if truth.bias.alpha1 == 0:
        raise InvalidTruth("alpha1 must be non-zero to invert the bias regression")
    if set(truth.bias.region_effects) != set(dims.regions) or set(truth.bias.age_effects) != set(AGE_LABELS):
        raise InvalidTruth("bias effects do not match the simulated ages and regions")
    if tuple(truth.components.age_index) != AGE_LABELS:
        raise InvalidTruth("components must be defined on the standard age grid")
    if not np.all(np.isfinite(truth.log_mu())):
        raise InvalidTruth("non-finite log mu")


def generate(truth: Truth, dims: SimulationDims | None = None, seed: int = 0):
    """Simulate (survey panel, social panel, truth record) from ``truth``."""
    dims = dims or SimulationDims()
    _check_truth(truth, dims)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    log_mu = truth.log_mu()
    years, regions = dims.years, dims.regions
    G, T, S = log_mu.shape
    ages = np.array(AGE_LABELS)

    n_svy = len(dims.survey_years)
    sd = dims.survey_log_sd
    log_p = log_mu[:, :n_svy] + rng.normal(0, 1, (G, n_svy, S)) * sd
    p = np.clip(np.exp(log_p), CLAMP, 1 - CLAMP)
    ax, tx, sx = np.meshgrid(np.arange(G), np.arange(n_svy), np.arange(S), indexing="ij")
    survey = pd.DataFrame({
        "origin": dims.origin,
        "region": np.array(regions)[sx.ravel()],
        "age_group": ages[ax.ravel()],
        "year": years[tx.ravel()],
        "proportion": p.ravel(),
        "se": sd * p.ravel(),
        "source": "survey",
        "wave_id": pd.array([pd.NA] * p.size, dtype="Int64"),
        "population_count": pd.array([pd.NA] * p.size, dtype="Int64"),
    })
    if dims.missing_fraction > 0:
        keep = rng.uniform(size=len(survey)) >= dims.missing_fraction
        survey = survey[keep]

    bias = truth.bias
    age_fx = np.array([bias.age_effects[a] for a in AGE_LABELS])[:, None]
    reg_fx = np.array([bias.region_effects[r] for r in regions])[None, :]
    sd_fb = np.sqrt(bias.sigma2_fb)
    sd_ns = np.sqrt(truth.state.sigma2_ns)
    rows = []
    wave = 0
    for t in range(dims.n_survey_years, T):
        for _ in range(dims.waves_per_year):
            wave += 1
            noise = rng.normal(0, 1, (G, S)) * sd_fb + rng.normal(0, 1, (G, S)) * sd_ns
            log_fb = (log_mu[:, t] - bias.alpha0 - age_fx - reg_fx - noise) / bias.alpha1
            p_fb = np.clip(np.exp(log_fb), CLAMP, 1 - CLAMP)
            if dims.sampling_noise:
                samp_sd = np.sqrt((1 - p_fb) / (p_fb * dims.population_count))
                p_fb = np.clip(np.exp(log_fb + rng.normal(0, 1, (G, S)) * samp_sd), CLAMP, 1 - CLAMP)
            gx, sx2 = np.meshgrid(np.arange(G), np.arange(S), indexing="ij")
            rows.append(pd.DataFrame({
                "origin": dims.origin,
                "region": np.array(regions)[sx2.ravel()],
                "age_group": ages[gx.ravel()],
                "year": int(years[t]),
                "proportion": p_fb.ravel(),
                "se": np.nan,
                "source": "social",
                "wave_id": wave,
                "population_count": dims.population_count,
            }))
    social = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=list(COLUMNS))
    record = {**truth.to_dict(), "dims": asdict(dims), "seed": int(seed), "years": [int(y) for y in years]}
    return MigrantPanel(survey, dims.origin), (MigrantPanel(social, dims.origin) if rows
                                               else MigrantPanel.empty(dims.origin)), record


def simulate(dims: SimulationDims | None = None, seed: int = 0, **truth_kwargs):
    """Draw a truth and simulate panels from it in one call."""
    dims = dims or SimulationDims()
    truth = draw_truth(dims, seed, **truth_kwargs)
    return generate(truth, dims, seed)


def write_simulation(out_dir, survey: MigrantPanel, social: MigrantPanel, record: dict) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "survey": write_panel(survey, out_dir / "survey.csv"),
        "social": write_panel(social, out_dir / "social.csv"),
        "truth": out_dir / "truth.json",
    }
    paths["truth"].write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return paths
