"""Synthetic data with invalid instruments and a replication engine that
tallies coverage, bias, interval length and invalidity detection."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .data import Dataset
from .pipeline import Settings, run_split

KAPPA = 0.6
_C1 = 1.38072
_C2 = 0.86 ** 2

TSCI_COLUMNS = ("tsci_oracle", "tsci_comp", "tsci_robust")
BASELINE_COLUMNS = ("rf_init", "rf_plug", "rf_ee", "rf_full", "tsls")


@dataclass(frozen=True)
class SimConfig:
    model: int = 1
    vio: int = 1
    a: float = 0.0
    n: int = 1000
    p: int = 20
    error: int = 1
    beta_true: float = 1.0
    reps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.model not in (1, 2, 3):
            raise ValueError("model must be 1, 2 or 3")
        if self.vio not in (0, 1, 2):
            raise ValueError("vio must be 0, 1 or 2")
        if self.model == 3 and self.vio == 2:
            raise ValueError("the binary instrument only supports vio 0 or 1")
        if self.error not in (1, 2):
            raise ValueError("error must be 1 or 2")
        if self.n < 3 or self.p < 5 or self.reps < 1:
            raise ValueError("need n >= 3, p >= 5 and reps >= 1")

    @property
    def binary(self) -> bool:
        return self.model == 3


def gen_covariates(n: int, p: int, seed, binary: bool = False):
    """Gaussian-copula covariates ``X`` in (0, 1) and instrument ``Z``.

    The latent vector has covariance ``0.5^|i-j|`` over ``p + 1`` coordinates;
    the last coordinate drives the instrument.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    rng = np.random.default_rng(seed)
    idx = np.arange(p + 1)
    sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(sigma)
    latent = rng.standard_normal((n, p + 1)) @ chol.T
    u = ndtr(latent)
    x = u[:, :p]
    if binary:
        z = (u[:, p] > 0.6).astype(float)
    else:
        z = 4.0 * (u[:, p] - 0.5)
    return x, z


def gen_mean(model: int, a: float, z, x) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float)
    inter = z * a * x[:, :5].sum(axis=1)
    lin = 0.3 * x.sum(axis=1)
    if model == 1:
        return -25.0 / 12.0 + z + z ** 2 + z ** 4 / 8.0 + inter - lin
    if model == 2:
        return np.sin(2 * np.pi * z) + 1.5 * np.cos(2 * np.pi * z) + inter - lin
    if model == 3:
        return z * (1.0 + a * x[:, :5].sum(axis=1)) - lin
    raise ValueError("model must be 1, 2 or 3")


def gen_violation(vio: int, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if vio == 0:
        return np.zeros_like(z)
    if vio == 1:
        return z.copy()
    if vio == 2:
        return z + z ** 2 - 1.0
    raise ValueError("vio must be 0, 1 or 2")


def gen_errors(error_dist: int, z, seed, kappa: float = KAPPA):
    """Treatment and outcome errors ``(delta, eps)``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    n = z.size
    rng = np.random.default_rng(seed)
    if error_dist == 1:
        g = rng.standard_normal((n, 2))
        delta = g[:, 0]
        eps = 0.5 * g[:, 0] + np.sqrt(0.75) * g[:, 1]
        return delta, eps
    if error_dist == 2:
        sd = np.sqrt(z ** 2 + 0.25)
        g = rng.standard_normal((n, 3))
        delta = sd * g[:, 0]
        tau1 = sd * g[:, 1]
        tau2 = g[:, 2]
        scale = np.sqrt((1.0 - kappa ** 2) / (_C2 ** 2 + _C1 ** 2))
        eps = kappa * delta + scale * (_C1 * tau1 + _C2 * tau2)
        return delta, eps
    raise ValueError("error must be 1 or 2")


def conditional_error_corr(z, kappa: float = KAPPA) -> np.ndarray:
    """Closed-form ``corr(delta, eps | Z = z)`` for the heteroscedastic errors."""
    s2 = np.asarray(z, dtype=float) ** 2 + 0.25
    scale2 = (1.0 - kappa ** 2) / (_C2 ** 2 + _C1 ** 2)
    var_eps = kappa ** 2 * s2 + scale2 * (_C1 ** 2 * s2 + _C2 ** 2)
    return kappa * s2 / np.sqrt(s2 * var_eps)


@dataclass(frozen=True)
class SimData:
    dataset: Dataset
    f: np.ndarray
    h: np.ndarray
    delta: np.ndarray
    eps: np.ndarray


def generate(config: SimConfig, seed) -> SimData:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_cov, s_err = ss.spawn(2)
    x, z = gen_covariates(config.n, config.p, s_cov, config.binary)
    f = gen_mean(config.model, config.a, z, x)
    h = gen_violation(config.vio, z)
    delta, eps = gen_errors(config.error, z, s_err)
    d = f + delta
    y = d * config.beta_true + h + 0.2 * x.sum(axis=1) + eps
    return SimData(Dataset(y=y, d=d, z=z, x=x), f, h, delta, eps)


def replicate_seed(master: int, idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(idx)])


@dataclass(frozen=True)
class ReplicateRecord:
    index: int
    estimates: dict
    invalid_iv: bool | None
    q_max: int | None
    q_c: int | None
    q_r: int | None
    mu_hat: tuple
    failures: tuple = ()


def run_replicate(config: SimConfig, idx: int, settings: Settings = Settings(),
                  menu: tuple = TSCI_COLUMNS + ("rf_init", "rf_plug", "tsls"),
                  basis_settings: Settings | None = None) -> ReplicateRecord:
    """One replicate: data, one random split, every requested estimator.

    ``estimates`` maps estimator name to ``(beta, se, lo, hi)``.
    """
    seq = replicate_seed(config.seed, idx)
    data_seed, split_seq = seq.spawn(2)
    sim = generate(config, data_seed)
    split_seed = int(split_seq.generate_state(1)[0])
    oracle = config.vio if not config.binary else min(config.vio, 1)
    want_base = [m for m in menu if m in BASELINE_COLUMNS]
    failures = []
    est = {}
    try:
        res = run_split(sim.dataset, settings, split_seed,
                        baseline_q=oracle if want_base else None,
                        full_baselines=any(m in ("rf_full", "tsls") for m in want_base),
                        full_forest="rf_full" in want_base)
    except Exception as exc:  # noqa: BLE001 - counted in the failure tally
        return ReplicateRecord(idx, {}, None, None, None, None, (), (f"tsci: {exc}",))

    def put(name, fit):
        if fit is None:
            failures.append(f"{name}: no curvature")
        else:
            est[name] = (fit.beta, fit.se, fit.ci[0], fit.ci[1])

    if "tsci_oracle" in menu:
        if oracle < len(res.fits):
            put("tsci_oracle", res.fits[oracle])
        else:
            failures.append("tsci_oracle: oracle order not in chain")
    if "tsci_comp" in menu:
        put("tsci_comp", res.chosen("comp"))
    if "tsci_robust" in menu:
        put("tsci_robust", res.chosen("robust"))
    for name in want_base:
        fit = res.baselines.get(name)
        if fit is None or not np.isfinite(fit.beta):
            failures.append(f"{name}: unavailable")
        else:
            put(name, fit)
    if basis_settings is not None and any(m.startswith("tsci_ba") for m in menu):
        try:
            ba = run_split(sim.dataset, basis_settings, split_seed)
            if "tsci_ba_oracle" in menu and oracle < len(ba.fits):
                put("tsci_ba_oracle", ba.fits[oracle])
            if "tsci_ba_comp" in menu:
                put("tsci_ba_comp", ba.chosen("comp"))
            if "tsci_ba_robust" in menu:
                put("tsci_ba_robust", ba.chosen("robust"))
        except Exception as exc:  # noqa: BLE001
            failures.append(f"tsci_ba: {exc}")
    sel = res.selection
    return ReplicateRecord(
        index=idx, estimates=est, invalid_iv=res.invalid_iv, q_max=res.q_max,
        q_c=None if sel is None else sel.q_c, q_r=None if sel is None else sel.q_r,
        mu_hat=tuple(s.mu_hat for s in res.strengths), failures=tuple(failures),
    )


@dataclass(frozen=True)
class EstimatorSummary:
    coverage: float
    mean_abs_bias: float
    mean_length: float
    count: int


@dataclass(frozen=True)
class SimSummary:
    config: SimConfig
    estimators: dict
    invalidity: float
    weak_share: float
    mean_mu_hat: tuple
    q_c_counts: dict
    failures: dict
    records: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "config": dataclasses.asdict(self.config),
            "estimators": {k: dataclasses.asdict(v) for k, v in self.estimators.items()},
            "invalidity": self.invalidity,
            "weak_share": self.weak_share,
            "mean_mu_hat": list(self.mean_mu_hat),
            "q_c_counts": {str(k): v for k, v in self.q_c_counts.items()},
            "failures": self.failures,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        """One row per estimator, followed by the invalidity proportion."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "vio", "a", "n", "error", "estimator", "coverage",
                        "mean_abs_bias", "mean_length", "count"])
            c = self.config
            head = [c.model, c.vio, c.a, c.n, c.error]
            for name, s in self.estimators.items():
                w.writerow(head + [name, f"{s.coverage:.4f}", f"{s.mean_abs_bias:.6g}",
                                   f"{s.mean_length:.6g}", s.count])
            w.writerow(head + ["invalidity", f"{self.invalidity:.4f}", "", "", len(self.records)])


def summarize(config: SimConfig, records) -> SimSummary:
    records = sorted(records, key=lambda r: r.index)
    names = []
    for r in records:
        for k in r.estimates:
            if k not in names:
                names.append(k)
    beta = config.beta_true
    est = {}
    for name in names:
        rows = np.array([r.estimates[name] for r in records if name in r.estimates])
        cover = (rows[:, 2] <= beta) & (beta <= rows[:, 3])
        est[name] = EstimatorSummary(
            coverage=float(cover.mean()),
            mean_abs_bias=float(np.mean(np.abs(rows[:, 0] - beta))),
            mean_length=float(np.mean(rows[:, 3] - rows[:, 2])),
            count=int(rows.shape[0]),
        )
    ok = [r for r in records if r.invalid_iv is not None]
    invalidity = float(np.mean([r.invalid_iv for r in ok])) if ok else float("nan")
    weak = float(np.mean([r.q_max is None for r in ok])) if ok else float("nan")
    depth = max((len(r.mu_hat) for r in ok), default=0)
    mu = tuple(
        float(np.mean([r.mu_hat[q] for r in ok if len(r.mu_hat) > q])) for q in range(depth)
    )
    q_c = {}
    for r in ok:
        q_c[r.q_c] = q_c.get(r.q_c, 0) + 1
    failures = {}
    for r in records:
        for f in r.failures:
            key = f.split(":", 1)[0]
            failures[key] = failures.get(key, 0) + 1
    return SimSummary(config=config, estimators=est, invalidity=invalidity, weak_share=weak,
                      mean_mu_hat=mu, q_c_counts=q_c, failures=failures, records=tuple(records))


def run_replications(config: SimConfig, settings: Settings = Settings(),
                     menu: tuple = TSCI_COLUMNS + ("rf_init", "rf_plug", "tsls"),
                     basis_settings: Settings | None = None, progress=None) -> SimSummary:
    """Run ``config.reps`` replicates and summarise them.

    Replicate ``i`` draws from ``SeedSequence([config.seed, i])`` so results do
    not depend on execution order.
    """
    records = []
    for idx in range(config.reps):
        records.append(run_replicate(config, idx, settings, menu, basis_settings))
        if progress is not None:
            progress(idx + 1, config.reps)
    return summarize(config, records)
