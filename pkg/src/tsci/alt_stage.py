"""Alternative first stages expressed as weighting matrices: a projection onto
a polynomial basis of the instruments plus covariates, and L2 boosting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CovariateBasis
from .errors import DimensionError, SingularBaseError
from .forest import WeightMatrix, _grow_tree, _presorted, _apply_tree
from .violation import orthonormal_basis

BASES = ("linear", "tree")


@dataclass(frozen=True)
class BoostingConfig:
    nu: float = 0.1
    m_stop: int = 100
    base: str = "tree"
    depth: int = 2
    min_leaf: int = 5

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must lie in (0, 1]")
        if self.m_stop < 1:
            raise ValueError("m_stop must be >= 1")
        if self.base not in BASES:
            raise ValueError(f"unknown base learner {self.base!r}")


def instrument_basis(z: np.ndarray, degree: int) -> np.ndarray:
    """Powers ``z^1..z^degree`` of every instrument column, centred and scaled
    to unit norm. Constant columns are dropped."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    cols = []
    for k in range(1, degree + 1):
        for j in range(z.shape[1]):
            c = z[:, j] ** k
            c = c - c.mean()
            nrm = np.linalg.norm(c)
            if nrm > 0.0:
                cols.append(c / nrm)
    return np.column_stack(cols) if cols else np.zeros((z.shape[0], 0))


def basis_omega(z: np.ndarray, w: CovariateBasis | np.ndarray, degree: int) -> WeightMatrix:
    """Orthogonal projector onto ``[B | W]`` on the full sample."""
    if degree < 1:
        raise ValueError("basis degree must be >= 1")
    w = w.w if isinstance(w, CovariateBasis) else np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float).reshape(w.shape[0], -1)
    n = w.shape[0]
    if degree * z.shape[1] + w.shape[1] >= n:
        raise DimensionError(f"{degree * z.shape[1] + w.shape[1]} basis columns for {n} rows")
    q = orthonormal_basis(np.hstack([instrument_basis(z, degree), w]))
    if q.shape[1] == 0:
        raise DimensionError("basis has rank zero")
    om = q @ q.T
    om = (om + om.T) / 2.0
    return WeightMatrix(omega=om, kind="basis", info={"rank": q.shape[1], "degree": degree})


def base_hat_matrix(kind: str, values: np.ndarray) -> np.ndarray:
    """Hat matrix of one base learner over a set of rows.

    ``kind="linear"``: ``values`` is the selected column, giving ``c c' / |c|^2``.
    ``kind="tree"``: ``values`` are leaf ids, giving the leaf-averaging matrix.
    """
    values = np.asarray(values)
    if kind == "linear":
        c = values.astype(float).reshape(-1)
        nrm2 = float(c @ c)
        if nrm2 == 0.0:
            raise SingularBaseError("selected column has zero norm")
        return np.outer(c, c) / nrm2
    if kind == "tree":
        same = values.reshape(-1, 1) == values.reshape(1, -1)
        return same / same.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown base learner {kind!r}")


def _candidates(c: np.ndarray) -> np.ndarray:
    # a constant column lets the linear learner move the intercept
    return np.hstack([np.ones((c.shape[0], 1)), c])


def _leaf_average(rows_leaf: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Apply the leaf-averaging hat matrix to ``mat`` without forming it."""
    uniq, inv = np.unique(rows_leaf, return_inverse=True)
    ind = np.zeros((inv.size, uniq.size))
    ind[np.arange(inv.size), inv] = 1.0
    means = (ind.T @ mat) / ind.sum(axis=0).reshape((-1,) + (1,) * (mat.ndim - 1))
    return means[inv]


def boosting_omega(c_a2: np.ndarray, d_a2: np.ndarray, c_a1: np.ndarray,
                   config: BoostingConfig = BoostingConfig(), seed: int = 0) -> WeightMatrix:
    """L2 boosting: learners are chosen on A2 and their hat matrices rebuilt on A1.

    The recursion ``Omega <- Omega + nu H (I - Omega)`` starts from zero, so
    that ``Omega @ D[A1]`` reproduces the boosted fit on A1 with every base
    learner's coefficients refitted on A1.
    """
    c_a2 = np.ascontiguousarray(c_a2, dtype=float)
    c_a1 = np.ascontiguousarray(c_a1, dtype=float)
    d_a2 = np.asarray(d_a2, dtype=float).reshape(-1)
    n1 = c_a1.shape[0]
    om = np.zeros((n1, n1))
    f2 = np.zeros_like(d_a2)
    resid_path = []
    m_eff = 0
    if config.base == "linear":
        cand2 = _candidates(c_a2)
        cand1 = _candidates(c_a1)
        norm2 = np.sum(cand2 ** 2, axis=0)
        norm1 = np.sum(cand1 ** 2, axis=0)
        usable = (norm2 > 0.0) & (norm1 > 0.0)
        for _ in range(config.m_stop):
            r = d_a2 - f2
            score = np.full(cand2.shape[1], -np.inf)
            score[usable] = (cand2[:, usable].T @ r) ** 2 / norm2[usable]
            j = int(np.argmax(score))
            if not np.isfinite(score[j]) or score[j] <= 1e-24 * float(r @ r + d_a2 @ d_a2):
                break
            col = cand2[:, j]
            f2 = f2 + config.nu * col * (col @ r) / norm2[j]
            c1 = cand1[:, j]
            # H (I - Omega) with H = c c' / |c|^2
            row = c1 - c1 @ om
            om = om + config.nu * np.outer(c1, row) / norm1[j]
            m_eff += 1
            resid_path.append(float(np.linalg.norm(d_a2 - f2)))
    else:
        n2, p = c_a2.shape
        order = np.ascontiguousarray(np.argsort(c_a2, axis=0, kind="stable").T)
        counts = np.ones(n2, dtype=np.int64)
        rng = np.random.default_rng(seed)
        eye = np.eye(n1)
        for _ in range(config.m_stop):
            r = d_a2 - f2
            srt = _presorted(order, counts)
            keys = rng.random((2 * n2 + 1, p))
            feat, thr, lft, rgt = _grow_tree(c_a2, r, srt, keys, p, config.min_leaf, config.depth)
            if feat.size == 1:
                break
            leaf2 = _apply_tree(feat, thr, lft, rgt, c_a2)
            leaf1 = _apply_tree(feat, thr, lft, rgt, c_a1)
            f2 = f2 + config.nu * _leaf_average(leaf2, r)
            om = om + config.nu * _leaf_average(leaf1, eye - om)
            m_eff += 1
            resid_path.append(float(np.linalg.norm(d_a2 - f2)))
    info = {"m_effective": m_eff, "m_stop": config.m_stop, "base": config.base,
            "a2_residual_norms": resid_path}
    return WeightMatrix(omega=om, kind="boosting", info=info)
