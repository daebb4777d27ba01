"""On-disk layout for posterior draws: one CSV per chain plus a manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .config import ModelConfig
from .diagnostics import _labels
from .sampler import PosteriorSamples
from .state import PARAMETER_NAMES

MANIFEST = "manifest.json"


def _columns(samples):
    return [label for name in PARAMETER_NAMES for label in _labels(name, samples)]


def samples_manifest(samples: PosteriorSamples) -> dict:
    return {
        "config": samples.config.to_dict(),
        "seed": int(samples.rng_seed),
        "n_chains": samples.n_chains,
        "n_draws": samples.n_draws,
        "ages": list(samples.ages),
        "years": [int(y) for y in samples.years],
        "regions": list(samples.regions),
        "z1": [float(v) for v in samples.z1],
        "z2": [float(v) for v in samples.z2],
        "chain_files": [f"chain_{c}.csv" for c in range(samples.n_chains)],
        "converged": samples.converged,
        "rhat": {} if samples.rhat is None else {k: float(v) for k, v in samples.rhat.items()},
    }


def write_samples(samples: PosteriorSamples, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    columns = _columns(samples)
    for c in range(samples.n_chains):
        block = np.column_stack([samples.draws[name][c].reshape(samples.n_draws, -1) for name in PARAMETER_NAMES])
        frame = pd.DataFrame(block, columns=columns)
        frame.to_csv(directory / f"chain_{c}.csv", index=False, float_format="%.17g", lineterminator="\n")
    manifest = samples_manifest(samples)
    if extra:
        manifest.update(extra)
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_samples(directory) -> PosteriorSamples:
    directory = Path(directory)
    m = json.loads((directory / MANIFEST).read_text())
    G, T, S = len(m["ages"]), len(m["years"]), len(m["regions"])
    shapes = {"beta1": (T, S), "beta2": (T, S), "phi": (T,), "eps": (G, T, S), "rho": (G, S)}
    chains = [pd.read_csv(directory / f, float_precision="round_trip").to_numpy() for f in m["chain_files"]]
    data = np.stack(chains)
    draws, j = {}, 0
    for name in PARAMETER_NAMES:
        shape = shapes.get(name, ())
        width = int(np.prod(shape)) if shape else 1
        draws[name] = data[:, :, j:j + width].reshape(data.shape[:2] + shape)
        j += width
    rhat = pd.Series(m["rhat"], dtype=float, name="rhat") if m["rhat"] else None
    return PosteriorSamples(draws, ModelConfig.from_dict(m["config"]), tuple(m["ages"]), np.array(m["years"]),
                            tuple(m["regions"]), np.array(m["z1"]), np.array(m["z2"]), m["seed"], rhat)
