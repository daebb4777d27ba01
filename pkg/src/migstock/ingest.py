"""Reading, validating and merging survey and social-media panels.

Both sources share one CSV layout::

    origin,region,age_group,year,proportion,se,source,wave_id,population_count

``se`` is the standard error of a survey proportion, ``wave_id`` and
``population_count`` are required for social-media rows.  Survey rows without
``se`` fall back to a binomial standard error using ``population_count`` as the
effective sample size.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd

from .exceptions import (
    AgeGridMismatch,
    BadProportion,
    DomainError,
    DuplicateSurveyCell,
    MissingColumn,
    MissingWaveId,
    OriginMismatch,
    PanelError,
)

COLUMNS = (
    "origin",
    "region",
    "age_group",
    "year",
    "proportion",
    "se",
    "source",
    "wave_id",
    "population_count",
)
CELL = ["age_group", "year", "region"]


class Source(str, enum.Enum):
    SURVEY = "survey"
    SOCIAL = "social"


@dataclass(frozen=True, order=True)
class AgeGroup:
    lower_bound: int
    label: str

    @classmethod
    def from_label(cls, label: str) -> "AgeGroup":
        m = _AGE_RE.fullmatch(str(label).strip())
        if not m or int(m[2]) != int(m[1]) + 4 or int(m[1]) % 5:
            raise PanelError(f"age group {label!r} is not a 5-year band like '15-19'")
        return cls(int(m[1]), f"{int(m[1])}-{int(m[2])}")


_AGE_RE = re.compile(r"(\d+)-(\d+)")
# reference grid: nine 5-year groups starting at 15
AGE_GROUPS = tuple(AgeGroup(lo, f"{lo}-{lo + 4}") for lo in range(15, 60, 5))
AGE_LABELS = tuple(a.label for a in AGE_GROUPS)


def is_age_label(label) -> bool:
    try:
        AgeGroup.from_label(label)
    except PanelError:
        return False
    return True


def sort_ages(labels) -> list:
    """Unique age labels ordered by lower bound."""
    return [a.label for a in sorted({AgeGroup.from_label(x) for x in labels})]


@dataclass(frozen=True, order=True)
class Region:
    code: str
    name: str = ""


class Observation(NamedTuple):
    age: AgeGroup
    year: int
    region: Region
    proportion: float
    se_proportion: float | None
    source: Source
    wave_id: int | None
    population_count: int | None


def _as_source(kind) -> Source:
    try:
        return Source(kind.value if isinstance(kind, Source) else str(kind).lower())
    except ValueError:
        raise PanelError(f"unknown source kind {kind!r}") from None


def _empty_frame() -> pd.DataFrame:
    return _coerce(pd.DataFrame({c: [] for c in COLUMNS}))


def _coerce(frame: pd.DataFrame) -> pd.DataFrame:
    out = frame.loc[:, list(COLUMNS)].copy()
    out["origin"] = out["origin"].astype(str)
    out["region"] = out["region"].astype(str)
    out["age_group"] = out["age_group"].astype(str)
    out["year"] = out["year"].astype("int64")
    out["proportion"] = out["proportion"].astype(float)
    out["se"] = out["se"].astype(float)
    out["source"] = out["source"].astype(str)
    out["wave_id"] = out["wave_id"].astype("Int64")
    out["population_count"] = out["population_count"].astype("Int64")
    return out.reset_index(drop=True)


def validate_frame(frame: pd.DataFrame, line_numbers=None) -> pd.DataFrame:
    """Check panel invariants on a frame and return a coerced copy.

    ``line_numbers`` maps positional rows to CSV line numbers for error
    messages; defaults to ``row index + 2`` (header is line 1).
    """
    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    if line_numbers is None:
        line_numbers = np.arange(len(frame)) + 2
    line_numbers = np.asarray(line_numbers)

    bad_source = ~frame["source"].isin([s.value for s in Source]).to_numpy()
    if bad_source.any():
        raise PanelError("source must be 'survey' or 'social'", line_numbers[bad_source])
    bad_age = ~frame["age_group"].map(is_age_label).to_numpy(dtype=bool)
    if bad_age.any():
        raise PanelError("unknown age group label", line_numbers[bad_age])

    prop = pd.to_numeric(frame["proportion"], errors="coerce").to_numpy(dtype=float)
    bad = ~((prop > 0) & (prop < 1))
    if bad.any():
        raise BadProportion("proportion outside (0, 1)", line_numbers[bad])

    se = pd.to_numeric(frame["se"], errors="coerce").to_numpy(dtype=float)
    bad_se = (~np.isnan(se)) & ~(np.isfinite(se) & (se >= 0))
    if bad_se.any():
        raise PanelError("se must be finite and non-negative", line_numbers[bad_se])

    social = (frame["source"] == Source.SOCIAL.value).to_numpy()
    wave = pd.to_numeric(frame["wave_id"], errors="coerce")
    count = pd.to_numeric(frame["population_count"], errors="coerce")
    no_wave = social & wave.isna().to_numpy()
    if no_wave.any():
        raise MissingWaveId("social row without wave_id", line_numbers[no_wave])
    stray_wave = ~social & wave.notna().to_numpy()
    if stray_wave.any():
        raise PanelError("wave_id given on a survey row", line_numbers[stray_wave])
    count_arr = count.to_numpy(dtype=float)
    bad_count = (~np.isnan(count_arr)) & ~(count_arr >= 1)
    bad_count |= social & np.isnan(count_arr)
    if bad_count.any():
        raise PanelError("population_count must be a positive integer", line_numbers[bad_count])
    no_se = ~social & np.isnan(se) & np.isnan(count_arr)
    if no_se.any():
        raise PanelError("survey row needs se or population_count", line_numbers[no_se])

    out = _coerce(frame)
    dup = np.zeros(len(out), dtype=bool)
    dup[~social] = out[~social].duplicated(CELL, keep=False).to_numpy()
    if dup.any():
        raise DuplicateSurveyCell("more than one survey row for a cell", line_numbers[dup])
    return out


@dataclass(frozen=True, eq=False)
class MigrantPanel:
    """Validated observations for one migrant origin."""

    frame: pd.DataFrame
    origin: str

    def __post_init__(self):
        frame = validate_frame(self.frame)
        origins = set(frame["origin"])
        if origins - {self.origin}:
            raise OriginMismatch(f"panel for {self.origin!r} holds rows for {sorted(origins)}")
        frame = frame.sort_values(["source", "year", "region", "age_group", "wave_id"], kind="mergesort")
        object.__setattr__(self, "frame", frame.reset_index(drop=True))

    @classmethod
    def empty(cls, origin: str) -> "MigrantPanel":
        return cls(_empty_frame(), origin)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def year_range(self) -> tuple[int, int] | None:
        if self.frame.empty:
            return None
        return int(self.frame["year"].min()), int(self.frame["year"].max())

    @property
    def years(self) -> list[int]:
        return sorted(int(y) for y in self.frame["year"].unique())

    @property
    def regions(self) -> list[Region]:
        return [Region(r, r) for r in sorted(self.frame["region"].unique())]

    @property
    def age_groups(self) -> list[AgeGroup]:
        return [AgeGroup.from_label(a) for a in sort_ages(self.frame["age_group"])]

    def select(self, source=None, years=None, wave_id=None) -> "MigrantPanel":
        mask = np.ones(len(self.frame), dtype=bool)
        if source is not None:
            mask &= (self.frame["source"] == _as_source(source).value).to_numpy()
        if years is not None:
            mask &= self.frame["year"].isin(list(np.atleast_1d(years))).to_numpy()
        if wave_id is not None:
            mask &= (self.frame["wave_id"] == wave_id).fillna(False).to_numpy(dtype=bool)
        return MigrantPanel(self.frame[mask], self.origin)

    def survey(self) -> "MigrantPanel":
        return self.select(source=Source.SURVEY)

    def social(self) -> "MigrantPanel":
        return self.select(source=Source.SOCIAL)

    def observations(self) -> Iterator[Observation]:
        for row in self.frame.itertuples(index=False):
            yield Observation(
                age=AgeGroup.from_label(row.age_group),
                year=int(row.year),
                region=Region(row.region, row.region),
                proportion=float(row.proportion),
                se_proportion=None if np.isnan(row.se) else float(row.se),
                source=Source(row.source),
                wave_id=None if pd.isna(row.wave_id) else int(row.wave_id),
                population_count=None if pd.isna(row.population_count) else int(row.population_count),
            )

    def log_observations(self) -> pd.DataFrame:
        """Cells with log proportion and log-scale sampling variance."""
        f = self.frame
        p = f["proportion"].to_numpy()
        se = f["se"].to_numpy()
        n = f["population_count"].to_numpy(dtype=float, na_value=np.nan)
        social = (f["source"] == Source.SOCIAL.value).to_numpy()
        var_p = np.where(np.isnan(se) | social, p * (1 - p) / n, se**2)
        out = f[["age_group", "year", "region", "source", "wave_id"]].copy()
        out["log_p"] = np.log(p)
        out["var_log"] = var_p / p**2
        return out


def sampling_variance_social(proportion, population_count):
    """Binomial sampling variance ``p (1 - p) / N`` on the proportion scale."""
    p = np.asarray(proportion, dtype=float)
    n = np.asarray(population_count, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("proportion must lie in (0, 1)")
    if np.any(~(n >= 1)):
        raise DomainError("population_count must be >= 1")
    out = p * (1 - p) / n
    return float(out) if out.ndim == 0 else out


def log_scale_variance(proportion, se_proportion):
    """Delta-method variance of ``log p``: ``(se / p) ** 2``."""
    p = np.asarray(proportion, dtype=float)
    se = np.asarray(se_proportion, dtype=float)
    if np.any(~(p > 0)):
        raise DomainError("proportion must be positive")
    if np.any(~(se >= 0)):
        raise DomainError("standard error must be non-negative")
    out = (se / p) ** 2
    return float(out) if out.ndim == 0 else out


def parse_panel(path, source_kind=None, origin=None) -> MigrantPanel:
    """Read a panel CSV. Rows of another source than ``source_kind`` are rejected."""
    path = Path(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in COLUMNS if c not in raw.columns]
    if missing:
        raise MissingColumn(f"{path.name}: missing column(s): {', '.join(missing)}")
    raw = raw.apply(lambda col: col.str.strip())
    raw = raw.mask(raw == "")
    lines = np.arange(len(raw)) + 2
    if source_kind is not None:
        kind = _as_source(source_kind)
        wrong = (raw["source"].str.lower() != kind.value).to_numpy()
        if wrong.any():
            raise PanelError(f"expected only {kind.value!r} rows", lines[wrong])
    raw["source"] = raw["source"].str.lower()
    for col in ("year", "wave_id", "population_count"):
        numeric = pd.to_numeric(raw[col], errors="coerce")
        bad = (numeric.notna() & (numeric != numeric.round())) | (raw[col].notna() & numeric.isna())
        if bad.any():
            raise PanelError(f"{col} must be an integer", lines[bad.to_numpy()])
        raw[col] = numeric
    if raw["year"].isna().any():
        raise PanelError("year is required", lines[raw["year"].isna().to_numpy()])
    for col in ("proportion", "se"):
        numeric = pd.to_numeric(raw[col], errors="coerce")
        bad = raw[col].notna() & numeric.isna()
        if col == "proportion":
            bad |= raw[col].isna()
        if bad.any():
            exc = BadProportion if col == "proportion" else PanelError
            raise exc(f"{col} is not a number", lines[bad.to_numpy()])
        # to_numeric's fast parser is not round-trip exact
        raw[col] = raw[col].astype(float)
    frame = validate_frame(raw, lines)
    origins = sorted(set(frame["origin"]))
    if origin is None:
        if len(origins) > 1:
            raise OriginMismatch(f"{path.name} mixes origins {origins}")
        origin = origins[0] if origins else ""
    return MigrantPanel(frame, origin)


def write_panel(panel: MigrantPanel, path) -> Path:
    """Serialise a panel to the CSV layout read by :func:`parse_panel`."""
    path = Path(path)
    f = panel.frame.copy()
    f["se"] = f["se"].map(lambda v: "" if np.isnan(v) else repr(float(v)))
    f["proportion"] = f["proportion"].map(lambda v: repr(float(v)))
    f.to_csv(path, index=False, columns=list(COLUMNS), lineterminator="\n")
    return path


def align(survey: MigrantPanel, social: MigrantPanel) -> MigrantPanel:
    """Merge a survey panel and a social-media panel into one panel."""
    if survey.origin != social.origin:
        raise OriginMismatch(f"origins differ: {survey.origin!r} vs {social.origin!r}")
    if len(social) and {a.label for a in survey.age_groups} != {a.label for a in social.age_groups}:
        raise AgeGridMismatch("survey and social panels cover different age groups")
    frame = pd.concat([survey.survey().frame, social.social().frame], ignore_index=True)
    return MigrantPanel(frame, survey.origin)
