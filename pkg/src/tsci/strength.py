"""Instrument-strength statistic, its bootstrap threshold and the largest
admissible violation order."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import PerfectFitError
from .violation import TransformMatrix


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def upper_quantile(values, alpha0: float) -> float:
    """Empirical upper ``alpha0`` quantile: the ``ceil(alpha0 * L)``-th largest value."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))[::-1]
    if v.size == 0:
        raise ValueError("no bootstrap values")
    k = max(1, math.ceil(alpha0 * v.size - 1e-9))
    return float(v[k - 1])


def multipliers(n1: int, l: int, seed) -> np.ndarray:
    """Standard normal multiplier matrix ``(n1, L)``, reused across orders."""
    return np.random.default_rng(seed).standard_normal((n1, l))


def first_stage_sigma2(d, f_hat) -> float:
    delta = _vec(d) - _vec(f_hat)
    return float(delta @ delta) / delta.size


def mu_hat(d, f_hat, m) -> float:
    """Curvature ``D'MD`` scaled by the first-stage residual variance."""
    d = _vec(d)
    mm = m.m if isinstance(m, TransformMatrix) else np.asarray(m, dtype=float)
    s2 = first_stage_sigma2(d, f_hat)
    if s2 == 0.0:
        raise PerfectFitError("first-stage residuals are identically zero")
    return float(d @ (mm @ d)) / s2


def strength_bootstrap_quantile(f_hat, m, d, alpha0: float = 0.025, l: int = 300, seed=0,
                                u: np.ndarray | None = None) -> float:
    """Upper ``alpha0`` quantile of ``|S|`` over a multiplier bootstrap of the
    noise part of ``D'MD / sigma^2``."""
    if not 0.0 < alpha0 < 0.5:
        raise ValueError("alpha0 must lie in (0, 0.5)")
    f_hat, d = _vec(f_hat), _vec(d)
    mm = m.m if isinstance(m, TransformMatrix) else np.asarray(m, dtype=float)
    delta = d - f_hat
    centred = delta - delta.mean()
    s2 = float(delta @ delta) / delta.size
    if s2 == 0.0 or not np.any(centred):
        return 0.0
    if u is None:
        if l < 50:
            raise ValueError("need at least 50 bootstrap draws")
        u = multipliers(d.size, l, seed)
    boot = u * centred[:, None]
    mb = mm @ boot
    s = (2.0 * (f_hat @ mb) + np.sum(boot * mb, axis=0)) / s2
    return upper_quantile(np.abs(s), alpha0)


@dataclass(frozen=True)
class StrengthResult:
    q: int
    mu_hat: float
    trace_m: float
    threshold: float
    s_quantile: float
    passed: bool
    l: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def strength_test(q: int, d, f_hat, m: TransformMatrix, alpha0: float = 0.025, l: int = 300,
                  seed=0, u: np.ndarray | None = None) -> StrengthResult:
    """Pass iff ``mu_hat >= max(2 Tr M, 10) + S_alpha0``."""
    mu = mu_hat(d, f_hat, m)
    sq = strength_bootstrap_quantile(f_hat, m, d, alpha0, l, seed, u)
    thr = max(2.0 * m.trace_m, 10.0)
    return StrengthResult(q=q, mu_hat=mu, trace_m=m.trace_m, threshold=thr, s_quantile=sq,
                          passed=bool(mu >= thr + sq), l=l if u is None else u.shape[1])


def q_max(results) -> int | None:
    """Largest order reached by scanning upward until the first failure.

    ``None`` means even ``V_0`` fails, i.e. the instrument is weak.
    """
    best = None
    for res in sorted(results, key=lambda r: r.q):
        if not res.passed:
            break
        best = res.q
    return best


def late_passes(results) -> list[int]:
    """Orders that pass after the first failure, kept as diagnostics."""
    qm = q_max(results)
    start = -1 if qm is None else qm
    return [r.q for r in results if r.q > start + 1 and r.passed]
