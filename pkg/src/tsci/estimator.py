"""Second-stage point estimators, bias corrections, standard errors and the
baseline estimators used for comparison.

All vectors are restricted to the A1 rows unless stated otherwise. ``m`` may
be a :class:`~tsci.violation.TransformMatrix` or a plain square array.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DegenerateError, WeakIVError
from .violation import ResidualMaker, TransformMatrix, transform_matrix


class DegenerateInferenceWarning(RuntimeWarning):
    pass


def _mat(m) -> np.ndarray:
    return m.m if isinstance(m, TransformMatrix) else np.asarray(m, dtype=float)


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def z_quantile(alpha: float) -> float:
    """Upper ``alpha/2`` standard-normal quantile."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return float(norm.ppf(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class TsciFit:
    q: int
    beta_init: float
    beta: float
    correction_kind: str
    se: float
    se_kind: str
    ci: tuple
    alpha: float
    denom: float
    trace_m: float
    mu_hat: float = float("nan")
    warnings: tuple = ()

    @property
    def beta_corrected(self) -> float:
        return self.beta

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "beta_init": self.beta_init,
            "beta": self.beta,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "mu_hat": self.mu_hat,
            "trace_m": self.trace_m,
            "denom": self.denom,
            "correction_kind": self.correction_kind,
            "se_kind": self.se_kind,
            "warnings": list(self.warnings),
        }


def curvature(d, m) -> float:
    """``D' M D``, the denominator shared by every estimator."""
    d = _vec(d)
    return float(d @ (_mat(m) @ d))


def beta_init(y, d, m) -> float:
    """Ratio ``Y' M D / D' M D``."""
    y, d = _vec(y), _vec(d)
    md = _mat(m) @ d
    denom = float(d @ md)
    if not denom > 0.0:
        raise WeakIVError(f"non-positive curvature D'MD = {denom:.3g}")
    return float(y @ md) / denom


def residual_eps(y, d, beta_used: float, v=None, w=None, maker: ResidualMaker | None = None) -> np.ndarray:
    """``P_perp[V, W] (Y - D beta)`` with the untransformed ``V`` and ``W``."""
    maker = maker if maker is not None else ResidualMaker(v, w)
    return maker(_vec(y) - _vec(d) * beta_used)


def cov_hat(d, f_hat, y, beta_init_value: float, v=None, w=None, r: int | None = None,
            maker: ResidualMaker | None = None) -> float:
    """Covariance of treatment and outcome errors, divided by ``n1 - r``."""
    maker = maker if maker is not None else ResidualMaker(v, w)
    r = maker.rank if r is None else r
    n1 = len(_vec(d))
    if n1 <= r:
        raise DegenerateError(f"n1={n1} does not exceed rank {r}")
    delta = _vec(d) - _vec(f_hat)
    eps = maker(_vec(y) - _vec(d) * beta_init_value)
    return float(delta @ eps) / (n1 - r)


def beta_corrected_homo(beta_init_value: float, cov: float, trace_m: float, denom: float) -> float:
    if not denom > 0.0:
        raise WeakIVError(f"non-positive curvature D'MD = {denom:.3g}")
    return beta_init_value - cov * trace_m / denom


def beta_corrected_hetero(beta_init_value: float, m, d, f_hat, eps_hat, denom: float) -> float:
    """Subtract ``sum_i M_ii delta_i eps_i / D'MD``."""
    if not denom > 0.0:
        raise WeakIVError(f"non-positive curvature D'MD = {denom:.3g}")
    diag = m.diag if isinstance(m, TransformMatrix) else np.diag(_mat(m))
    delta = _vec(d) - _vec(f_hat)
    return beta_init_value - float(np.sum(diag * delta * _vec(eps_hat))) / denom


def se_hetero(eps_hat, m, d, denom: float) -> float:
    md = _mat(m) @ _vec(d)
    se = float(np.sqrt(np.sum(_vec(eps_hat) ** 2 * md ** 2))) / denom
    if se == 0.0:
        warnings.warn("heteroscedastic standard error is zero", DegenerateInferenceWarning, stacklevel=2)
    return se


def se_homo(eps_hat, m, d, denom: float, n: int, r: int) -> float:
    """``sigma_eps * sqrt(D' M^2 D) / D'MD`` with ``sigma^2 = |eps|^2 / (n - r)``."""
    if n <= r:
        raise DegenerateError(f"n={n} does not exceed rank {r}")
    eps = _vec(eps_hat)
    sigma = np.sqrt(float(eps @ eps) / (n - r))
    md = _mat(m) @ _vec(d)
    se = float(sigma * np.sqrt(md @ md)) / denom
    if se == 0.0:
        warnings.warn("homoscedastic standard error is zero", DegenerateInferenceWarning, stacklevel=2)
    return se


def confidence_interval(beta: float, se: float, alpha: float = 0.05) -> tuple:
    z = z_quantile(alpha)
    return (beta - z * se, beta + z * se)


def tsci_fit(y, d, f_hat, m: TransformMatrix, maker: ResidualMaker, q: int, alpha: float = 0.05,
             correction: str = "hetero", eps_for_correction=None) -> TsciFit:
    """Full second stage at one violation space.

    ``correction`` is ``"hetero"`` (default), ``"homo"`` or ``"hetero-seq"``;
    the last takes its residuals from ``eps_for_correction`` (the largest
    admissible space) while the standard error keeps this space's residuals.
    """
    y, d, f_hat = _vec(y), _vec(d), _vec(f_hat)
    md = m.m @ d
    denom = float(d @ md)
    if not denom > 0.0:
        raise WeakIVError(f"non-positive curvature D'MD = {denom:.3g} at q={q}")
    b0 = float(y @ md) / denom
    eps = maker(y - d * b0)
    notes = []
    if correction == "homo":
        cov = cov_hat(d, f_hat, y, b0, maker=maker)
        beta = beta_corrected_homo(b0, cov, m.trace_m, denom)
    elif correction == "hetero":
        beta = beta_corrected_hetero(b0, m, d, f_hat, eps, denom)
    elif correction == "hetero-seq":
        if eps_for_correction is None:
            raise ValueError("hetero-seq correction needs eps_for_correction")
        beta = beta_corrected_hetero(b0, m, d, f_hat, eps_for_correction, denom)
    else:
        raise ValueError(f"unknown correction {correction!r}")
    se = float(np.sqrt(np.sum(eps ** 2 * md ** 2))) / denom
    if se == 0.0:
        notes.append("standard error is zero")
    return TsciFit(
        q=q, beta_init=b0, beta=beta, correction_kind=correction, se=se, se_kind="hetero",
        ci=confidence_interval(beta, se, alpha), alpha=alpha, denom=denom, trace_m=m.trace_m,
        warnings=tuple(notes),
    )


@dataclass(frozen=True)
class BaselineFit:
    name: str
    beta: float
    se: float
    ci: tuple
    flags: tuple = field(default=())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci_lo"], out["ci_hi"] = out.pop("ci")
        out["flags"] = list(self.flags)
        return out


def _nan_fit(name, flag):
    nan = float("nan")
    return BaselineFit(name, nan, nan, (nan, nan), (flag,))


def rf_init(y, d, m: TransformMatrix, maker: ResidualMaker, alpha: float = 0.05) -> BaselineFit:
    """Uncorrected ratio estimator with the homoscedastic standard error.

    The residual variance divides by ``n1 - r``: the residual vector lives on A1.
    """
    y, d = _vec(y), _vec(d)
    denom = curvature(d, m)
    if not denom > 0.0:
        return _nan_fit("rf_init", "degenerate")
    b = float(y @ (m.m @ d)) / denom
    eps = maker(y - d * b)
    se = se_homo(eps, m, d, denom, len(y), maker.rank)
    return BaselineFit("rf_init", b, se, confidence_interval(b, se, alpha))


def rf_plug(y, d, f_hat, maker: ResidualMaker, alpha: float = 0.05) -> BaselineFit:
    """Least squares of ``Y`` on ``(f_hat, V, W)``."""
    y, d, f_hat = _vec(y), _vec(d), _vec(f_hat)
    pf = maker(f_hat)
    denom = float(f_hat @ pf)
    if not denom > 0.0:
        return _nan_fit("rf_plug", "degenerate")
    b = float(y @ pf) / denom
    res = maker(y - b * d)
    se = float(np.sqrt((res @ res) / (len(y) * denom)))
    return BaselineFit("rf_plug", b, se, confidence_interval(b, se, alpha))


def rf_ee(y, d, f_hat, maker: ResidualMaker, alpha: float = 0.05) -> BaselineFit:
    """Estimating-equation variant; the denominator ``D' P_perp f_hat`` may be
    negative, which is flagged but still returned."""
    y, d, f_hat = _vec(y), _vec(d), _vec(f_hat)
    pf = maker(f_hat)
    denom = float(d @ pf)
    if denom == 0.0:
        return _nan_fit("rf_ee", "degenerate")
    flags = ("negative_denominator",) if denom < 0 else ()
    b = float(y @ pf) / denom
    res = maker(y - b * d)
    sigma = np.sqrt((res @ res) / len(y))
    se = float(sigma * np.sqrt(f_hat @ pf) / abs(denom))
    return BaselineFit("rf_ee", b, se, confidence_interval(b, se, alpha), flags)


def rf_full(y, d, omega_full, v, w, alpha: float = 0.05) -> BaselineFit:
    """Ratio estimator built from a forest trained and evaluated on all rows."""
    y, d = _vec(y), _vec(d)
    m = transform_matrix(omega_full, v, w)
    denom = curvature(d, m)
    if not denom > 0.0:
        return _nan_fit("rf_full", "degenerate")
    md = m.m @ d
    b = float(y @ md) / denom
    maker = ResidualMaker(v, w)
    res = maker(y - b * d)
    sigma = np.sqrt((res @ res) / len(y))
    se = float(sigma * np.sqrt(md @ md)) / denom
    return BaselineFit("rf_full", b, se, confidence_interval(b, se, alpha))


def tsls(y, d, z, w, alpha: float = 0.05) -> BaselineFit:
    """Classical two stage least squares of ``Y`` on ``(D, W)`` instrumented by
    ``(Z, W)``, homoscedastic standard error."""
    y, d = _vec(y), _vec(d)
    z = np.asarray(z, dtype=float).reshape(len(y), -1)
    w = np.asarray(w, dtype=float).reshape(len(y), -1)
    regs = np.column_stack([d, w])
    inst = ResidualMaker(np.column_stack([z, w]))
    proj = regs - inst(regs)
    coef, _, rank, _ = np.linalg.lstsq(proj, y, rcond=None)
    if rank < regs.shape[1]:
        return _nan_fit("tsls", "degenerate")
    res = y - regs @ coef
    sigma2 = float(res @ res) / (len(y) - regs.shape[1])
    cov = sigma2 * np.linalg.inv(proj.T @ proj)
    b = float(coef[0])
    se = float(np.sqrt(cov[0, 0]))
    return BaselineFit("tsls", b, se, confidence_interval(b, se, alpha))


def baseline_estimators(y, d, f_hat, m: TransformMatrix, maker: ResidualMaker, alpha: float = 0.05,
                        full=None) -> dict:
    """RF-Init, RF-Plug and RF-EE on A1, plus RF-Full and TSLS when ``full``
    (a dict with ``y, d, z, w, v, omega_full``) is supplied."""
    out = {
        "rf_init": rf_init(y, d, m, maker, alpha),
        "rf_plug": rf_plug(y, d, f_hat, maker, alpha),
        "rf_ee": rf_ee(y, d, f_hat, maker, alpha),
    }
    if full is not None:
        if full.get("omega_full") is not None:
            out["rf_full"] = rf_full(full["y"], full["d"], full["omega_full"], full["v"], full["w"], alpha)
        out["tsls"] = tsls(full["y"], full["d"], full["z"], full["w"], alpha)
    return out
