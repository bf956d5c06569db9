"""Datasets, CSV ingestion, covariate bases and the random sample split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, SchemaError, SizeError

RANK_RTOL = 1e-10


def numerical_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank from singular values, relative to the largest one."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class Dataset:
    """Outcome ``y``, treatment ``d``, instruments ``z`` (n x p_z) and
    baseline covariates ``x`` (n x p_x)."""

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        n = y.shape[0]
        if z.ndim == 1:
            z = z.reshape(n, 1)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
        if n < 1:
            raise SizeError("dataset must have at least one row")
        for name, arr in (("d", d), ("z", z), ("x", x)):
            if arr.shape[0] != n:
                raise SizeError(f"{name} has {arr.shape[0]} rows, expected {n}")
        for name, arr in (("y", y), ("d", d), ("z", z), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")
        for name, arr in (("y", y), ("d", d), ("z", z), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    def covariates(self) -> np.ndarray:
        """Stacked ``(Z, X)`` rows used as forest inputs."""
        return np.hstack([self.z, self.x])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.d[rows], self.z[rows], self.x[rows], self.names)


def load_dataset(path, y: str, d: str, z: Sequence[str], x: Sequence[str] = ()) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Columns are selected by name. Every selected cell must parse as a finite
    float; the first offending cell raises :class:`DataError` carrying its
    1-based data row and column name.
    """
    path = Path(path)
    z = list(z)
    x = list(x)
    wanted = [y, d, *z, *x]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in wanted]
        rows = []
        for lineno, rec in enumerate(reader, start=1):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            vals = []
            for col, j in zip(wanted, idx):
                cell = rec[j].strip() if j < len(rec) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r}",
                        row=lineno, column=col,
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {lineno}, column {col!r}: non-finite value {cell!r}",
                        row=lineno, column=col,
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise SizeError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    k = 2 + len(z)
    return Dataset(
        y=arr[:, 0], d=arr[:, 1], z=arr[:, 2:k], x=arr[:, k:],
        names={"y": y, "d": d, "z": z, "x": x},
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` as CSV with 17 significant digits (exact round trip)."""
    names = dataset.names or {}
    z_names = names.get("z") or [f"Z{j + 1}" for j in range(dataset.p_z)]
    x_names = names.get("x") or [f"X{j + 1}" for j in range(dataset.p_x)]
    header = [names.get("y", "Y"), names.get("d", "D"), *z_names, *x_names]
    body = np.column_stack([dataset.y, dataset.d, dataset.z, dataset.x])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in body:
            w.writerow([format(v, ".17g") for v in row])


@dataclass(frozen=True)
class SplitIndex:
    a1: np.ndarray
    a2: np.ndarray
    seed: int

    @property
    def n1(self) -> int:
        return len(self.a1)


def split_sample(n: int, seed: int) -> SplitIndex:
    """Random partition of ``range(n)`` with ``|A1| = floor(2n/3)``."""
    if n < 3:
        raise SizeError(f"need at least 3 rows to split, got {n}")
    n1 = (2 * n) // 3
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndex(a1=np.sort(perm[:n1]), a2=np.sort(perm[n1:]), seed=int(seed))


@dataclass(frozen=True)
class CovariateBasis:
    """Design block W; column 0 is the constant."""

    w: np.ndarray
    rank: int
    warnings: tuple = ()

    @property
    def p_w(self) -> int:
        return self.w.shape[1]


def parse_w_mode(mode: str):
    """``"linear"`` or ``"basis:k"`` -> (kind, degree)."""
    if mode == "linear":
        return "linear", 1
    if mode.startswith("basis:"):
        k = int(mode.split(":", 1)[1])
        if k < 1:
            raise ValueError("basis degree must be >= 1")
        return "basis", k
    raise ValueError(f"unknown covariate mode {mode!r}")


def build_w(x: np.ndarray, mode: str = "linear") -> CovariateBasis:
    """Covariate design ``[1 | X]`` or ``[1 | x_j, x_j^2, ..., x_j^k for each j]``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite covariates")
    kind, k = parse_w_mode(mode)
    n = x.shape[0]
    cols = [np.ones(n)]
    warnings = []
    for j in range(x.shape[1]):
        xj = x[:, j]
        if kind == "basis" and np.ptp(xj) == 0.0:
            warnings.append(f"covariate column {j} is constant; basis expansion is rank deficient")
        for power in range(1, k + 1):
            cols.append(xj ** power)
    w = np.column_stack(cols)
    rank = numerical_rank(w)
    if rank < w.shape[1] and not warnings:
        warnings.append(f"W has rank {rank} < {w.shape[1]} columns")
    return CovariateBasis(w=w, rank=rank, warnings=tuple(warnings))
