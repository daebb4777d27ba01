"""Principal age patterns of logged historical migrant schedules.

Rows of the input matrix are region-years, columns are age groups.  The first
two right-singular vectors of the (uncentred) matrix give the baseline age
schedule and the direction in which the schedule shifts over time.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateMatrix, EmptyColumn, EmptySelection
from .ingest import AGE_LABELS, MigrantPanel, sort_ages

DEGENERACY_RATIO = 1e-12


@dataclass(frozen=True, eq=False)
class LogScheduleMatrix:
    values: np.ndarray
    row_index: tuple
    col_index: tuple
    missing_mask: np.ndarray

    @property
    def complete(self) -> bool:
        return not np.isnan(self.values).any()


@dataclass(frozen=True, eq=False)
class PrincipalComponents:
    z1: np.ndarray
    z2: np.ndarray
    singular_values: tuple
    age_index: tuple

    @property
    def basis(self) -> np.ndarray:
        """``(G, 2)`` matrix with ``z1`` and ``z2`` as columns."""
        return np.column_stack([self.z1, self.z2])

    def to_dict(self) -> dict:
        return {
            "age_index": list(self.age_index),
            "z1": {a: float(v) for a, v in zip(self.age_index, self.z1)},
            "z2": {a: float(v) for a, v in zip(self.age_index, self.z2)},
            "singular_values": [float(s) for s in self.singular_values],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "PrincipalComponents":
        ages = tuple(d["age_index"])
        return cls(
            z1=np.array([d["z1"][a] for a in ages]),
            z2=np.array([d["z2"][a] for a in ages]),
            singular_values=tuple(d["singular_values"]),
            age_index=ages,
        )

    @classmethod
    def from_json(cls, text_or_path) -> "PrincipalComponents":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls.from_dict(json.loads(text))


def build_log_matrix(panel: MigrantPanel, years=None) -> LogScheduleMatrix:
    """Pivot survey log proportions to one row per observed (region, year)."""
    f = panel.survey().frame
    if years is not None:
        f = f[f["year"].isin(list(years))]
    if f.empty:
        raise EmptySelection("no survey observations in the requested years")
    ages = tuple(sort_ages(panel.frame["age_group"]))
    table = (
        f.assign(log_p=np.log(f["proportion"]))
        .pivot(index=["region", "year"], columns="age_group", values="log_p")
        .reindex(columns=list(ages))
        .sort_index()
    )
    values = table.to_numpy(dtype=float)
    return LogScheduleMatrix(
        values=values,
        row_index=tuple((str(r), int(y)) for r, y in table.index),
        col_index=ages,
        missing_mask=np.isnan(values),
    )


def impute_missing(matrix: LogScheduleMatrix) -> LogScheduleMatrix:
    """Fill gaps with the (region, age) series mean, else the column mean.

    Only the SVD sees imputed values; ``missing_mask`` is carried through.
    """
    values = np.array(matrix.values, dtype=float)
    missing = np.isnan(values)
    if not missing.any():
        return matrix
    empty = np.all(missing, axis=0)
    if empty.any():
        cols = [matrix.col_index[j] for j in np.flatnonzero(empty)]
        raise EmptyColumn(f"no observations for age group(s) {cols}")
    regions = np.array([r for r, _ in matrix.row_index], dtype=object)
    col_means = np.nanmean(values, axis=0)
    for region in np.unique(regions):
        rows = regions == region
        block = values[rows]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN series
            series_mean = np.nanmean(block, axis=0)
        fill = np.where(np.isnan(series_mean), col_means, series_mean)
        values[rows] = np.where(np.isnan(block), fill, block)
    return LogScheduleMatrix(values, matrix.row_index, matrix.col_index, matrix.missing_mask)


def _orient(z1, z2):
    if z1.sum() > 0:
        z1 = -z1
    if z2[-1] < 0:
        z2 = -z2
    return z1, z2


def compute_components(matrix) -> PrincipalComponents:
    """First two right-singular vectors, with a deterministic sign convention.

    ``z1`` is flipped so its entries sum to <= 0 and ``z2`` so its last entry
    is >= 0.
    """
    if isinstance(matrix, LogScheduleMatrix):
        X, ages = matrix.values, matrix.col_index
    else:
        X = np.asarray(matrix, dtype=float)
        ages = tuple(AGE_LABELS[: X.shape[1]]) if X.ndim == 2 and X.shape[1] <= len(AGE_LABELS) \
            else tuple(str(j) for j in range(X.shape[1]))
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise DegenerateMatrix(f"need at least a 2x2 matrix, got shape {X.shape}")
    if np.isnan(X).any():
        raise ValueError("matrix has missing entries; call impute_missing first")
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[0] == 0 or s[1] < DEGENERACY_RATIO * s[0]:
        raise DegenerateMatrix(f"matrix has rank < 2 (singular values {s[:2]})")
    z1, z2 = _orient(vt[0].copy(), vt[1].copy())
    return PrincipalComponents(z1=z1, z2=z2, singular_values=(float(s[0]), float(s[1])), age_index=tuple(ages))


class AgeComponents(TransformerMixin, BaseEstimator):
    """Uncentred two-component SVD of log age schedules, sklearn style.

    ``fit`` takes an ``(n_region_years, n_ages)`` array or a
    :class:`LogScheduleMatrix` (missing cells are imputed first);
    ``transform`` returns the two component scores per row.
    """

    def __init__(self, impute=True):
        self.impute = impute

    def fit(self, X, y=None):
        if not isinstance(X, LogScheduleMatrix):
            X = np.asarray(X, dtype=float)
            X = LogScheduleMatrix(X, tuple((str(i), 0) for i in range(len(X))), tuple(AGE_LABELS[: X.shape[1]]), np.isnan(X))
        if self.impute:
            X = impute_missing(X)
        self.components_ = compute_components(X)
        self.singular_values_ = np.array(self.components_.singular_values)
        self.n_features_in_ = X.values.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = X.values if isinstance(X, LogScheduleMatrix) else np.asarray(X, dtype=float)
        return X @ self.components_.basis

    def inverse_transform(self, scores):
        check_is_fitted(self, "components_")
        return np.asarray(scores, dtype=float) @ self.components_.basis.T
