"""Comparison of nested violation spaces: pairwise variance of estimate
differences, the bootstrap layer test and the selected orders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DegenerateError
from .estimator import TsciFit, tsci_fit
from .strength import multipliers, upper_quantile
from .violation import ResidualMaker, TransformMatrix

H_CLAMP = 1e-10


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def _mat(m) -> np.ndarray:
    return m.m if isinstance(m, TransformMatrix) else np.asarray(m, dtype=float)


def _h_from_md(eps2, md_q, den_q, md_qp, den_qp) -> float:
    a = float(np.sum(eps2 * md_qp ** 2)) / den_qp ** 2
    b = float(np.sum(eps2 * md_q ** 2)) / den_q ** 2
    c = 2.0 * float(np.sum(eps2 * md_q * md_qp)) / (den_qp * den_q)
    h = a + b - c
    if h < 0.0:
        scale = max(a, b, 1.0)
        if h < -H_CLAMP * scale:
            raise DegenerateError(f"pairwise variance is negative ({h:.3g})")
        h = 0.0
    return h


def h_hat(eps_hat_qmax, m_q, m_qp, d) -> float:
    """Variance estimate of the difference of the estimates at two orders."""
    d = _vec(d)
    md_q = _mat(m_q) @ d
    md_qp = _mat(m_qp) @ d
    den_q = float(d @ md_q)
    den_qp = float(d @ md_qp)
    if not (den_q > 0.0 and den_qp > 0.0):
        raise DegenerateError("non-positive curvature in pairwise comparison")
    return _h_from_md(_vec(eps_hat_qmax) ** 2, md_q, den_q, md_qp, den_qp)


def _pair_table(eps, ms, d):
    d = _vec(d)
    eps2 = _vec(eps) ** 2
    mds = [_mat(m) @ d for m in ms]
    dens = [float(d @ md) for md in mds]
    if not all(den > 0.0 for den in dens):
        raise DegenerateError("non-positive curvature in pairwise comparison")
    table = {}
    for q in range(len(ms)):
        for qp in range(q + 1, len(ms)):
            table[(q, qp)] = _h_from_md(eps2, mds[q], dens[q], mds[qp], dens[qp])
    return table


def comparison_bootstrap_rho(eps_hat_qmax, ms, d, alpha0: float = 0.025, l: int = 300,
                             seed=0, h_table: dict | None = None, u: np.ndarray | None = None) -> float:
    """Upper ``alpha0`` quantile of the bootstrap maximum of normalised
    differences over all pairs ``0 <= q < q' <= Q_max``.

    Each bootstrap difference is the noise term ``D'M E / D'M D`` of the
    estimator at two orders, the same quantity whose variance ``h_hat``
    estimates. Pairs whose variance estimate is zero are skipped.
    """
    if len(ms) < 2:
        raise ValueError("need at least two violation orders to compare")
    d = _vec(d)
    eps = _vec(eps_hat_qmax)
    centred = eps - eps.mean()
    if not np.any(centred):
        return 0.0
    if h_table is None:
        h_table = _pair_table(eps, ms, d)
    if u is None:
        if l < 50:
            raise ValueError("need at least 50 bootstrap draws")
        u = multipliers(d.size, l, seed)
    boot = u * centred[:, None]
    g = []
    for m in ms:
        md = _mat(m) @ d
        g.append((md @ boot) / float(d @ md))
    t = np.zeros(boot.shape[1])
    for (q, qp), h in h_table.items():
        if h > 0.0:
            t = np.maximum(t, np.abs(g[qp] - g[q]) / math.sqrt(h))
    return upper_quantile(t, alpha0)


@dataclass(frozen=True)
class PairwiseRow:
    q: int
    qp: int
    diff: float
    h: float
    stat: float
    fixed_z_reject: bool

    def to_dict(self) -> dict:
        return {"q": self.q, "q_prime": self.qp, "diff": self.diff, "h_hat": self.h,
                "stat": self.stat, "fixed_z_reject": self.fixed_z_reject}


def _stat(diff: float, h: float) -> float:
    if h > 0.0:
        return abs(diff) / math.sqrt(h)
    return math.inf if diff != 0.0 else 0.0


def layer_test(q: int, fits, pairwise, rho_hat: float) -> int:
    """1 iff some larger order gives a significantly different estimate."""
    q_max = len(fits) - 1
    if q >= q_max:
        return 0
    stats = [row.stat for row in pairwise if row.q == q]
    return int(max(stats) > rho_hat)


@dataclass(frozen=True)
class SelectionReport:
    q_max: int
    fits: tuple
    pairwise: tuple
    rho_hat: float
    layer_flags: tuple
    q_c: int
    q_r: int
    invalid_iv: bool
    fit_c: TsciFit
    fit_r: TsciFit
    notes: tuple = field(default=())

    def to_dict(self) -> dict:
        return {
            "q_max": self.q_max,
            "fits": [f.to_dict() for f in self.fits],
            "pairwise": [r.to_dict() for r in self.pairwise],
            "rho_hat": self.rho_hat,
            "layer_flags": list(self.layer_flags),
            "q_c": self.q_c,
            "q_r": self.q_r,
            "invalid_iv": self.invalid_iv,
            "fit_c": self.fit_c.to_dict(),
            "fit_r": self.fit_r.to_dict(),
            "notes": list(self.notes),
        }


def select(y, d, f_hat, ms, makers, q_max: int, alpha: float = 0.05, alpha0: float = 0.025,
           l: int = 300, seed=0, single_fits=None) -> SelectionReport:
    """Run the comparison on orders ``0..q_max``.

    ``ms[q]`` and ``makers[q]`` are the transform matrix and residual maker of
    ``V_q``; entries past ``q_max`` are ignored. ``single_fits`` may pass
    already computed per-order fits (each with its own residuals) for the
    final estimates at the selected orders.
    """
    y, d, f_hat = _vec(y), _vec(d), _vec(f_hat)
    if q_max < 0 or q_max >= len(ms):
        raise ValueError("q_max outside the violation chain")

    def final(q):
        if single_fits is not None:
            return single_fits[q]
        return tsci_fit(y, d, f_hat, ms[q], makers[q], q, alpha)

    if q_max == 0:
        f0 = final(0)
        return SelectionReport(
            q_max=0, fits=(f0,), pairwise=(), rho_hat=float("nan"), layer_flags=(0,),
            q_c=0, q_r=0, invalid_iv=False, fit_c=f0, fit_r=f0,
            notes=("no comparison possible: only V_0 passes the strength test",),
        )

    top = ms[q_max]
    b_top = float(y @ (top.m @ d)) / float(d @ (top.m @ d))
    eps_top = makers[q_max](y - d * b_top)
    fits = tuple(
        tsci_fit(y, d, f_hat, ms[q], makers[q], q, alpha, correction="hetero-seq",
                 eps_for_correction=eps_top)
        for q in range(q_max + 1)
    )
    h_table = _pair_table(eps_top, ms[: q_max + 1], d)
    rho = comparison_bootstrap_rho(eps_top, ms[: q_max + 1], d, alpha0, l, seed, h_table)
    z0 = float(norm.ppf(1.0 - alpha0))
    pairwise = []
    for (q, qp), h in h_table.items():
        diff = fits[q].beta - fits[qp].beta
        s = _stat(diff, h)
        pairwise.append(PairwiseRow(q, qp, diff, h, s, bool(s > z0)))
    flags = tuple(layer_test(q, fits, pairwise, rho) for q in range(q_max + 1))
    q_c = flags.index(0)
    q_r = min(q_c + 1, q_max)
    notes = []
    if any(math.isinf(r.stat) for r in pairwise):
        notes.append("zero pairwise variance with a nonzero difference")
    return SelectionReport(
        q_max=q_max, fits=fits, pairwise=tuple(pairwise), rho_hat=rho, layer_flags=flags,
        q_c=q_c, q_r=q_r, invalid_iv=bool(flags[0] == 1), fit_c=final(q_c), fit_r=final(q_r),
        notes=tuple(notes),
    )
