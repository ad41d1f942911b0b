"""Survival data model, CSV ingestion and design-matrix construction."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    InvalidIndicator,
    MissingColumn,
    NonNumericCell,
    NonPositiveTime,
)

EXPOSURE_TERM = "x"


class SurvivalRecord(NamedTuple):
    time: float
    event: bool
    exposure: int
    covariates: tuple


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of right-censored survival records.

    Parameters
    ----------
    time : array_like, shape (n,)
        Observed follow-up times, strictly positive and finite.
    event : array_like, shape (n,)
        Event indicators (True = event observed, False = censored).
    exposure : array_like, shape (n,)
        Binary exposure coded 0/1.
    covariates : array_like, shape (n, m)
        Baseline covariates; ``m`` may be zero.
    covariate_names : sequence of str
        Column names for ``covariates``.
    """

    time: np.ndarray
    event: np.ndarray
    exposure: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        time = _frozen(self.time, float)
        n = time.shape[0]
        if time.ndim != 1 or n == 0:
            raise DataError("dataset must contain at least one record")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(time) & (time > 0)))[0])
            raise NonPositiveTime(bad + 1, float(time[bad]))
        event = _frozen(self.event, bool)
        exposure = np.asarray(self.exposure)
        if exposure.size and not np.all((exposure == 0) | (exposure == 1)):
            raise DataError("exposure must be coded 0/1")
        exposure = _frozen(exposure, np.int8)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.size == 0:
            cov = np.zeros((n, 0))
        if cov.ndim == 1:
            cov = cov[:, None]
        cov = _frozen(cov, float)
        names = tuple(self.covariate_names)
        if not names and cov.shape[1]:
            names = tuple(f"z{j + 1}" for j in range(cov.shape[1]))
        if event.shape != (n,) or exposure.shape != (n,) or cov.shape[0] != n:
            raise DimensionMismatch("time, event, exposure and covariates differ in length")
        if len(names) != cov.shape[1]:
            raise DimensionMismatch("covariate_names does not match covariate columns")
        if not np.all(np.isfinite(cov)):
            raise DataError("covariates contain missing or non-finite values")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "exposure", exposure)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    def __len__(self):
        return self.n

    def covariate(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise MissingColumn(name) from None
        return self.covariates[:, j]

    def take(self, index) -> "Dataset":
        """Row subset (or bootstrap resample) in the given order."""
        index = np.asarray(index)
        return Dataset(
            self.time[index],
            self.event[index],
            self.exposure[index],
            self.covariates[index],
            self.covariate_names,
        )

    def records(self) -> Iterator[SurvivalRecord]:
        for i in range(self.n):
            yield SurvivalRecord(
                float(self.time[i]),
                bool(self.event[i]),
                int(self.exposure[i]),
                tuple(float(v) for v in self.covariates[i]),
            )

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], covariate_names=()):
        records = list(records)
        if not records:
            raise DataError("dataset must contain at least one record")
        m = len(records[0].covariates)
        if any(len(r.covariates) != m for r in records):
            raise DimensionMismatch("records have differing covariate dimension")
        return cls(
            [r.time for r in records],
            [r.event for r in records],
            [r.exposure for r in records],
            np.array([r.covariates for r in records], dtype=float).reshape(len(records), m),
            covariate_names,
        )

    def has_both_exposures(self) -> bool:
        s = int(self.exposure.sum())
        return 0 < s < self.n


def load_csv(
    path,
    time: str,
    event: str,
    exposure: str,
    covariates: Sequence[str] = (),
) -> Dataset:
    """Read a headered CSV file into a validated :class:`Dataset`.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        wanted = [time, event, exposure, *covariates]
        cols = {}
        for name in wanted:
            if name not in header:
                raise MissingColumn(name)
            cols[name] = header.index(name)

        times, events, exps, covs = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue

            def num(name):
                j = cols[name]
                raw = row[j].strip() if j < len(row) else ""
                try:
                    value = float(raw)
                except ValueError:
                    raise NonNumericCell(row_no, name, raw) from None
                if not math.isfinite(value):
                    raise NonNumericCell(row_no, name, raw)
                return value

            t = num(time)
            if t <= 0:
                raise NonPositiveTime(row_no, t)
            d = num(event)
            if d not in (0.0, 1.0):
                raise InvalidIndicator(row_no, event, d)
            x = num(exposure)
            if x not in (0.0, 1.0):
                raise InvalidIndicator(row_no, exposure, x)
            times.append(t)
            events.append(d == 1.0)
            exps.append(int(x))
            covs.append([num(c) for c in covariates])

    if not times:
        raise DataError(f"{path}: no data rows")
    return Dataset(
        np.array(times),
        np.array(events),
        np.array(exps),
        np.array(covs, dtype=float).reshape(len(times), len(covariates)),
        tuple(covariates),
    )


def risk_set(dataset: Dataset, k: float) -> np.ndarray:
    """Indices (0-based) of subjects still under observation at ``k``."""
    return np.flatnonzero(dataset.time >= k)


def event_indices(dataset: Dataset) -> np.ndarray:
    """Indices (0-based) of subjects with an observed event."""
    return np.flatnonzero(dataset.event)


# ---------------------------------------------------------------------------
# design terms
#
# A term is a product of factors joined by "*". A factor is a covariate name,
# "x" (the exposure), name^k, log(name), sqrt(name), abs(name) or C(name)
# (treatment-coded dummies, lowest level dropped).

_FACTOR = re.compile(r"^(?:(log|sqrt|abs|C)\((\w+)\)|(\w+)(?:\^(\d+))?)$")


def _factor_columns(dataset, factor, exposure):
    m = _FACTOR.match(factor.strip())
    if not m:
        raise DataError(f"cannot parse design factor {factor!r}")
    func, fname, name, power = m.groups()
    name = fname or name
    if name == EXPOSURE_TERM:
        values = dataset.exposure.astype(float) if exposure is None else np.broadcast_to(
            np.asarray(exposure, dtype=float), (dataset.n,)
        )
    else:
        values = dataset.covariate(name)
    if func == "C":
        levels = np.unique(values)
        cols = [(values == lev).astype(float) for lev in levels[1:]]
        labels = [f"C({name})[{lev:g}]" for lev in levels[1:]]
        return cols, labels
    if func == "log":
        if np.any(values <= 0):
            raise DataError(f"log({name}) requires positive values")
        return [np.log(values)], [factor]
    if func == "sqrt":
        if np.any(values < 0):
            raise DataError(f"sqrt({name}) requires nonnegative values")
        return [np.sqrt(values)], [factor]
    if func == "abs":
        return [np.abs(values)], [factor]
    if power is not None:
        return [values ** int(power)], [factor]
    return [np.asarray(values, dtype=float)], [name]


def design_matrix(dataset: Dataset, terms: Sequence[str], exposure=None, intercept=False):
    """Build the design matrix for ``terms``.

    ``exposure`` overrides the observed exposure column (scalar or array),
    which is how counterfactual predictions under X=0 / X=1 are formed.

    Returns
    -------
    matrix : ndarray, shape (n, p)
    labels : list of str
    """
    cols = [np.ones(dataset.n)] if intercept else []
    labels = ["intercept"] if intercept else []
    for term in terms:
        parts = [p for p in term.split("*")]
        acc_cols, acc_labels = [np.ones(dataset.n)], [""]
        for part in parts:
            fcols, flabels = _factor_columns(dataset, part, exposure)
            acc_cols = [a * b for a in acc_cols for b in fcols]
            acc_labels = [
                (la + ":" + lb) if la else lb for la in acc_labels for lb in flabels
            ]
        cols.extend(acc_cols)
        labels.extend(acc_labels)
    if cols:
        mat = np.column_stack(cols)
    else:
        mat = np.zeros((dataset.n, 0))
    return mat, labels


def uses_exposure(terms: Sequence[str]) -> bool:
    for term in terms:
        for part in term.split("*"):
            m = _FACTOR.match(part.strip())
            if m and (m.group(2) or m.group(3)) == EXPOSURE_TERM:
                return True
    return False


def term_covariates(terms: Sequence[str]) -> tuple:
    """Covariate names referenced by ``terms`` (exposure excluded), in first-use order."""
    names = []
    for term in terms:
        for part in term.split("*"):
            m = _FACTOR.match(part.strip())
            if not m:
                raise DataError(f"cannot parse design factor {part!r}")
            name = m.group(2) or m.group(3)
            if name != EXPOSURE_TERM and name not in names:
                names.append(name)
    return tuple(names)
