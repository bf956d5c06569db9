"""Violation bases, residual projectors and the transformation matrix M(V)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .data import CovariateBasis, numerical_rank
from .errors import DegenerateError
from .forest import WeightMatrix

QR_RTOL = 1e-10


def orthonormal_basis(a: np.ndarray, rtol: float = QR_RTOL) -> np.ndarray:
    """Orthonormal basis of ``col(a)`` from a column-pivoted QR.

    Columns whose pivot ``|R_kk|`` falls below ``rtol * |R_00|`` are dropped,
    so duplicated or collinear columns do not inflate the basis.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    q, r, _ = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((a.shape[0], 0))
    k = int(np.sum(diag > rtol * diag[0]))
    return q[:, :k]


class ResidualMaker:
    """Annihilator ``I - P`` of ``col([V | W])`` applied without forming it."""

    def __init__(self, *blocks: np.ndarray):
        mats = [np.asarray(b, dtype=float).reshape(len(b), -1) for b in blocks if b is not None]
        a = np.hstack(mats) if mats else None
        self.n = a.shape[0]
        self.basis = orthonormal_basis(a)
        self.rank = numerical_rank(a)
        if self.n <= self.rank:
            raise DegenerateError(f"projection is degenerate: {self.n} rows, rank {self.rank}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x - self.basis @ (self.basis.T @ x)

    @property
    def matrix(self) -> np.ndarray:
        return np.eye(self.n) - self.basis @ self.basis.T


def residual_projector(v_a1: np.ndarray, w_a1: np.ndarray) -> np.ndarray:
    """Symmetric idempotent matrix annihilating ``col([V | W])``."""
    return ResidualMaker(v_a1, w_a1).matrix


@dataclass(frozen=True)
class ViolationBasis:
    """Order ``q`` and the ``n x q`` (or ``n x q*p_z``) matrix of powers of Z."""

    q: int
    v: np.ndarray

    @cached_property
    def rank(self) -> int:
        return numerical_rank(self.v)

    def rows(self, idx) -> np.ndarray:
        return self.v[np.asarray(idx)]


def polynomial_violation_basis(z: np.ndarray, q: int) -> ViolationBasis:
    """Columns ``z, z^2, ..., z^q``; for several instrument columns the powers
    of every column are stacked order by order, keeping the chain nested."""
    if q < 0:
        raise ValueError("violation order must be >= 0")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    cols = [z ** k for k in range(1, q + 1)]
    v = np.hstack(cols) if cols else np.zeros((z.shape[0], 0))
    return ViolationBasis(q=q, v=v)


def violation_chain(z: np.ndarray, q_cap: int, w: np.ndarray | None = None) -> list[ViolationBasis]:
    """Nested chain ``V_0 .. V_Q`` truncated where ``rank([V_q | W])`` stops growing.

    For a binary instrument ``z^2 == z`` so the chain ends at ``q = 1``.
    """
    chain = [polynomial_violation_basis(z, 0)]
    n = chain[0].v.shape[0]
    w = np.zeros((n, 0)) if w is None else np.asarray(w, dtype=float)
    prev = numerical_rank(w) if w.size else 0
    for q in range(1, q_cap + 1):
        vb = polynomial_violation_basis(z, q)
        r = numerical_rank(np.hstack([vb.v, w]))
        if r <= prev:
            break
        chain.append(vb)
        prev = r
    return chain


@dataclass(frozen=True)
class TransformMatrix:
    """``M(V) = Omega^T P_perp[Omega V, Omega W] Omega`` with cached traces.

    ``r`` is the rank of the untransformed ``[V_A1 | W_A1]``.
    """

    m: np.ndarray
    trace_m: float
    trace_m2: float
    r: int

    @property
    def n1(self) -> int:
        return self.m.shape[0]

    @cached_property
    def diag(self) -> np.ndarray:
        return np.diag(self.m).copy()

    def quad(self, a: np.ndarray, b: np.ndarray | None = None) -> float:
        b = a if b is None else b
        return float(a @ (self.m @ b))


def _as_block(x, rows):
    if x is None:
        return None
    if isinstance(x, ViolationBasis):
        x = x.v
    elif isinstance(x, CovariateBasis):
        x = x.w
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x if rows is None else x[np.asarray(rows)]


def transform_matrix(omega: WeightMatrix, v, w, rows=None) -> TransformMatrix:
    """Build ``M(V)`` on the A1 rows.

    ``v`` and ``w`` may be full-sample objects with ``rows`` selecting A1, or
    arrays already restricted to A1 (``rows=None``).
    """
    v1 = _as_block(v, rows)
    w1 = _as_block(w, rows)
    om = omega.omega
    n1 = om.shape[0]
    blocks = [b for b in (v1, w1) if b is not None and b.shape[1] > 0]
    if any(b.shape[0] != n1 for b in blocks):
        raise ValueError("violation/covariate rows do not match Omega")
    raw = np.hstack(blocks) if blocks else np.zeros((n1, 0))
    r = numerical_rank(raw)
    if n1 <= r:
        raise DegenerateError(f"projection is degenerate: n1={n1}, rank={r}")
    q = orthonormal_basis(om @ raw) if raw.shape[1] else np.zeros((n1, 0))
    a = q.T @ om
    m = omega.gram - a.T @ a
    m = (m + m.T) / 2.0
    return TransformMatrix(m=m, trace_m=float(np.trace(m)), trace_m2=float(np.sum(m * m)), r=r)
