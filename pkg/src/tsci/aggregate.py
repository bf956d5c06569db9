"""Combining estimates from repeated sample splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .estimator import z_quantile

GRID_POINTS = 2001


def _pairs(betas, ses):
    b = np.asarray(betas, dtype=float).reshape(-1)
    s = np.asarray(ses, dtype=float).reshape(-1)
    if b.size < 1 or b.size != s.size:
        raise ValueError("need matching, non-empty estimate and standard-error vectors")
    return b, s


def median_ci(betas, ses, alpha: float = 0.05):
    """Median estimate, spread-inflated standard error and Wald interval."""
    b, s = _pairs(betas, ses)
    b_med = float(np.median(b))
    se_med = float(np.median(np.sqrt(s ** 2 + (b - b_med) ** 2)))
    z = z_quantile(alpha)
    return b_med, se_med, (b_med - z * se_med, b_med + z * se_med)


def median_pvalue(betas, ses, grid) -> np.ndarray:
    """Twice the median over splits of the two-sided z-test p-value at each grid point."""
    b, s = _pairs(betas, ses)
    grid = np.asarray(grid, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.abs(b[:, None] - grid[None, :]) / s[:, None]
    zs = np.where(s[:, None] > 0, zs, np.where(b[:, None] == grid[None, :], 0.0, np.inf))
    p = 2.0 * (1.0 - ndtr(zs))
    return 2.0 * np.median(p, axis=0)


def default_grid(betas, ses, points: int = GRID_POINTS) -> np.ndarray:
    b, s = _pairs(betas, ses)
    pad = 6.0 * float(s.max())
    lo, hi = float(b.min()) - pad, float(b.max()) + pad
    if hi == lo:
        hi, lo = hi + 1e-12, lo - 1e-12
    return np.linspace(lo, hi, points)


def multisplit_ci(betas, ses, alpha: float = 0.05, grid=None):
    """Grid points where twice the median p-value exceeds ``alpha``.

    Returns ``(lo, hi, flags)``: the tightest interval enclosing the accepted
    grid points, with ``"empty"`` or ``"non_contiguous"`` flagged. An empty
    region gives ``(nan, nan)``.
    """
    grid = default_grid(betas, ses) if grid is None else np.asarray(grid, dtype=float)
    accept = median_pvalue(betas, ses, grid) > alpha
    idx = np.flatnonzero(accept)
    if idx.size == 0:
        return float("nan"), float("nan"), ("empty",)
    flags = ()
    if idx[-1] - idx[0] + 1 != idx.size:
        flags = ("non_contiguous",)
    return float(grid[idx[0]]), float(grid[idx[-1]]), flags


@dataclass(frozen=True)
class MultiSplitResult:
    s: int
    betas: np.ndarray
    ses: np.ndarray
    beta_med: float
    se_med: float
    ci_med: tuple
    ci_multisplit: tuple
    alpha: float
    flags: tuple = field(default=())

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "beta_med": self.beta_med,
            "se_med": self.se_med,
            "ci_med": list(self.ci_med),
            "ci_multisplit": list(self.ci_multisplit),
            "alpha": self.alpha,
            "flags": list(self.flags),
            "betas": self.betas.tolist(),
            "ses": self.ses.tolist(),
        }


def aggregate(betas, ses, alpha: float = 0.05) -> MultiSplitResult:
    b, s = _pairs(betas, ses)
    b_med, se_med, ci = median_ci(b, s, alpha)
    lo, hi, flags = multisplit_ci(b, s, alpha)
    return MultiSplitResult(s=b.size, betas=b, ses=s, beta_med=b_med, se_med=se_med, ci_med=ci,
                            ci_multisplit=(lo, hi), alpha=alpha, flags=flags)


def save_splits(path, betas, ses) -> None:
    """Store per-split fits as CSV with 17 significant digits."""
    b, s = _pairs(betas, ses)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("beta,se\n")
        for bi, si in zip(b, s):
            fh.write(f"{bi:.17g},{si:.17g}\n")


def load_splits(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]
