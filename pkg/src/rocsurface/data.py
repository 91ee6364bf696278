"""Dataset representation and CSV ingestion for partially verified three-class data.

One row per patient: a continuous test result ``t``, a covariate vector
``a`` (possibly empty), a verification flag ``v`` and, for verified
subjects, the true class ``d`` in {1, 2, 3}.  Disease status of unverified
subjects is unknown (missing at random given ``t`` and ``a``).

``Dataset`` is immutable after construction; every downstream estimator is
a pure function of it, and per-subject quantities align with its row order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

__all__ = [
    "Subject",
    "Dataset",
    "CutPair",
    "load_csv",
    "write_csv",
    "verification_rate",
]


@dataclass(frozen=True)
class Subject:
    """A single study participant.

    ``d`` is ``None`` exactly when the subject was not sent to the gold
    standard (``v == 0``).
    """

    t: float
    a: tuple[float, ...]
    v: int
    d: int | None = None


@dataclass(frozen=True)
class CutPair:
    """An ordered pair of cut points ``c1 < c2``.

    Infinite sentinels are allowed: ``(-inf, c)`` and ``(c, +inf)`` recover
    the two-class projections of the surface.
    """

    c1: float
    c2: float

    def __post_init__(self):
        if math.isnan(self.c1) or math.isnan(self.c2):
            raise DataError("cut points must not be NaN")
        if not self.c1 < self.c2:
            raise DataError(f"cut points must satisfy c1 < c2, got ({self.c1}, {self.c2})")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable column-oriented view of the study data.

    Attributes
    ----------
    t : (n,) float array, test results.
    a : (n, p) float array, covariates (p may be 0).
    v : (n,) int array of 0/1 verification flags.
    d : (n,) int array with the class label 1/2/3, or 0 where unknown.
    """

    t: np.ndarray
    a: np.ndarray
    v: np.ndarray
    d: np.ndarray
    _d_ind: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_arrays(cls, t, a, v, d) -> "Dataset":
        """Build and validate a dataset from plain arrays.

        ``d`` entries may be 0 (or negative / NaN via ``None`` conversion
        upstream) only where ``v == 0``; verified subjects must carry a
        class in {1, 2, 3}.
        """
        t = np.ascontiguousarray(t, dtype=float)
        v = np.ascontiguousarray(v, dtype=np.int64)
        d = np.ascontiguousarray(d, dtype=np.int64)
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.size == 0:
            a = np.empty((t.shape[0], 0), dtype=float)
        n = t.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one subject")
        if a.shape[0] != n or v.shape[0] != n or d.shape[0] != n:
            raise DataError("t, a, v, d must have matching lengths")
        if not np.all(np.isfinite(t)):
            raise DataError("test results must be finite")
        if a.shape[1] and not np.all(np.isfinite(a)):
            raise DataError("covariates must be finite")
        if not np.all((v == 0) | (v == 1)):
            raise DataError("verification flags must be 0 or 1")
        present = d != 0
        if not np.all((d[present] >= 1) & (d[present] <= 3)):
            raise DataError("disease classes must be in {1, 2, 3}")
        missing_verified = np.flatnonzero((v == 1) & ~present)
        if missing_verified.size:
            raise DataError(
                f"subject {missing_verified[0]} is verified (v=1) but has no disease class"
            )
        ind = np.zeros((n, 3), dtype=float)
        ind[present, d[present] - 1] = 1.0
        ds = cls(_readonly(t), _readonly(np.ascontiguousarray(a)), _readonly(v),
                 _readonly(d), _readonly(ind))
        return ds

    @classmethod
    def from_subjects(cls, subjects) -> "Dataset":
        subjects = list(subjects)
        if not subjects:
            raise DataError("dataset must contain at least one subject")
        p = len(subjects[0].a)
        if any(len(s.a) != p for s in subjects):
            raise DataError("all subjects must share the covariate dimension")
        return cls.from_arrays(
            [s.t for s in subjects],
            np.array([s.a for s in subjects], dtype=float).reshape(len(subjects), p),
            [s.v for s in subjects],
            [0 if s.d is None else s.d for s in subjects],
        )

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    @property
    def subjects(self) -> list[Subject]:
        """Materialise row objects (mainly for inspection and tests)."""
        return [
            Subject(float(self.t[i]), tuple(self.a[i]), int(self.v[i]),
                    int(self.d[i]) if self.d[i] else None)
            for i in range(self.n)
        ]

    def d_indicators(self) -> np.ndarray:
        """(n, 3) one-hot class indicators; all-zero rows where d is unknown."""
        return self._d_ind

    def all_verified(self) -> bool:
        return bool(np.all(self.v == 1))

    def verified_class_counts(self) -> np.ndarray:
        """Counts of each class among verified subjects."""
        return self._d_ind[self.v == 1].sum(axis=0).astype(np.int64)

    def take(self, idx) -> "Dataset":
        """Row subset / resample (used by the bootstrap)."""
        idx = np.asarray(idx)
        return Dataset.from_arrays(self.t[idx], self.a[idx], self.v[idx], self.d[idx])


def verification_rate(ds: Dataset) -> float:
    """Fraction of subjects with verified disease status."""
    return float(np.mean(ds.v))


def _parse_float(text: str, line: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: column '{col}': cannot parse '{text}' as a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}: column '{col}': value '{text}' is not finite")
    return value


def load_csv(path, schema: dict | None = None) -> Dataset:
    """Read a dataset from CSV.

    The file must have a header row.  Canonical column names are ``t``,
    ``a1..ap`` (optional), ``v`` (0/1) and ``d`` (1/2/3 or empty for
    unverified subjects).  ``schema`` may remap them, e.g.
    ``{"t": "marker", "v": "verified", "d": "stage", "a": ["age"]}``.

    An empty ``d`` cell is the only accepted encoding of a missing class;
    sentinels such as ``NA`` or ``-1`` are rejected so that silently
    miscoded verification structure cannot slip through.
    """
    schema = schema or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        pos = {name: i for i, name in enumerate(header)}

        def col(name):
            if name not in pos:
                raise DataError(f"{path}: missing required column '{name}'")
            return pos[name]

        t_name = schema.get("t", "t")
        v_name = schema.get("v", "v")
        d_name = schema.get("d", "d")
        if "a" in schema:
            a_names = list(schema["a"])
        else:
            a_names = []
            k = 1
            while f"a{k}" in pos:
                a_names.append(f"a{k}")
                k += 1
        it, iv, idx_d = col(t_name), col(v_name), col(d_name)
        ia = [col(name) for name in a_names]

        t_vals, a_vals, v_vals, d_vals = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            t_vals.append(_parse_float(row[it], line_no, t_name))
            a_vals.append([_parse_float(row[j], line_no, name) for j, name in zip(ia, a_names)])
            v_txt = row[iv].strip()
            if v_txt not in ("0", "1"):
                raise DataError(f"line {line_no}: column '{v_name}': verification flag must be 0 or 1, got '{v_txt}'")
            v = int(v_txt)
            d_txt = row[idx_d].strip()
            if d_txt == "":
                if v == 1:
                    raise DataError(f"line {line_no}: subject is verified (v=1) but column '{d_name}' is empty")
                d = 0
            else:
                if d_txt not in ("1", "2", "3"):
                    raise DataError(f"line {line_no}: column '{d_name}': disease class must be 1, 2 or 3, got '{d_txt}'")
                d = int(d_txt)
            v_vals.append(v)
            d_vals.append(d)

    if not t_vals:
        raise DataError(f"{path}: no data rows")
    a_arr = np.array(a_vals, dtype=float) if a_names else np.empty((len(t_vals), 0))
    return Dataset.from_arrays(t_vals, a_arr, v_vals, d_vals)


def write_csv(ds: Dataset, path) -> None:
    """Write a dataset in the canonical CSV layout (17 significant digits)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"a{j + 1}" for j in range(ds.p)] + ["v", "d"])
        for i in range(ds.n):
            row = [format(ds.t[i], ".17g")]
            row += [format(x, ".17g") for x in ds.a[i]]
            row.append(str(int(ds.v[i])))
            row.append(str(int(ds.d[i])) if ds.d[i] else "")
            writer.writerow(row)
