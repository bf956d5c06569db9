"""One split-estimate-select cycle and its repetition over many splits."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .aggregate import MultiSplitResult, aggregate
from .alt_stage import BoostingConfig, basis_omega, boosting_omega
from .data import Dataset, SplitIndex, build_w, split_sample
from .errors import WeakIVError
from .estimator import baseline_estimators, tsci_fit
from .forest import ForestParams, fit_forest, forest_weights, full_sample_weights
from .selection import SelectionReport, select
from .strength import late_passes, multipliers, q_max as find_q_max, strength_test
from .violation import ResidualMaker, transform_matrix, violation_chain

STAGES = ("rf", "basis", "boost")


@dataclass(frozen=True)
class Settings:
    stage: str = "rf"
    w_mode: str = "linear"
    q_cap: int = 3
    alpha: float = 0.05
    alpha0: float = 0.025
    boot_l: int = 300
    forest: ForestParams = ForestParams()
    boosting: BoostingConfig = BoostingConfig()
    basis_degree: int = 5

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown first stage {self.stage!r}")
        if self.q_cap < 0:
            raise ValueError("q_cap must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.alpha0 < 0.5:
            raise ValueError("alpha0 must lie in (0, 0.5)")
        if self.boot_l < 50:
            raise ValueError("boot_l must be >= 50")


@dataclass(frozen=True)
class SplitResult:
    seed: int
    stage: str
    n1: int
    chain: tuple
    strengths: tuple
    q_max: int | None
    late_passes: tuple
    fits: tuple
    selection: SelectionReport | None
    baselines: dict = field(default_factory=dict)
    warnings: tuple = ()

    @property
    def weak_iv(self) -> bool:
        return self.q_max is None

    @property
    def invalid_iv(self) -> bool:
        return bool(self.selection is not None and self.selection.invalid_iv)

    def chosen(self, which: str = "robust"):
        """Final fit at the comparison (``"comp"``) or robust (``"robust"``) order.

        A weak instrument falls back to the ``V_0`` fit, or ``None`` when even
        that has no curvature.
        """
        if self.selection is None:
            return self.fits[0] if self.fits else None
        return self.selection.fit_r if which == "robust" else self.selection.fit_c

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stage": self.stage,
            "n1": self.n1,
            "chain": list(self.chain),
            "q_max": self.q_max,
            "weak_iv": self.weak_iv,
            "late_passes": list(self.late_passes),
            "strength": [s.to_dict() for s in self.strengths],
            "fits": [f.to_dict() for f in self.fits],
            "selection": None if self.selection is None else self.selection.to_dict(),
            "baselines": {k: v.to_dict() for k, v in self.baselines.items()},
            "warnings": list(self.warnings),
        }


def _first_stage(data: Dataset, settings: Settings, seed: int):
    n = data.n
    c = data.covariates()
    if settings.stage == "basis":
        split = SplitIndex(a1=np.arange(n), a2=np.arange(0), seed=int(seed))
        w = build_w(data.x, settings.w_mode)
        return split, basis_omega(data.z, w, settings.basis_degree)
    split = split_sample(n, seed)
    if settings.stage == "rf":
        params = dataclasses.replace(settings.forest, seed=int(seed))
        forest = fit_forest(c[split.a2], data.d[split.a2], params)
        return split, forest_weights(forest, c[split.a1])
    om = boosting_omega(c[split.a2], data.d[split.a2], c[split.a1], settings.boosting, seed=int(seed))
    return split, om


def run_split(data: Dataset, settings: Settings = Settings(), seed: int = 0,
              baseline_q: int | None = None, full_baselines: bool = False,
              full_forest: bool = False, dump_omega=None) -> SplitResult:
    """Fit the first stage, scan the violation chain, test strength and select.

    ``baseline_q`` additionally computes the comparison estimators at that
    order; ``full_baselines`` adds two stage least squares and, with
    ``full_forest``, the forest trained and evaluated on every row.
    """
    split, omega = _first_stage(data, settings, seed)
    if dump_omega is not None:
        np.savetxt(dump_omega, omega.omega, delimiter=",", fmt="%.17g")
    a1 = split.a1
    w = build_w(data.x, settings.w_mode)
    chain = violation_chain(data.z, settings.q_cap, w.w)
    y1, d1 = data.y[a1], data.d[a1]
    w1 = w.w[a1]
    f_hat = omega.predict(d1)
    notes = list(w.warnings)
    if omega.empty_leaf_events:
        notes.append(f"{omega.empty_leaf_events} empty-leaf fallbacks in the weighting matrix")
    if len(chain) <= settings.q_cap:
        notes.append(f"violation chain truncated at q={len(chain) - 1}: higher powers add no rank")

    ms, makers = [], []
    for vb in chain:
        ms.append(transform_matrix(omega, vb.v[a1], w1))
        makers.append(ResidualMaker(vb.v[a1], w1))

    ss = np.random.SeedSequence([int(seed), 7])
    s_seed, c_seed = ss.spawn(2)
    u = multipliers(split.n1, settings.boot_l, s_seed)
    strengths = tuple(
        strength_test(vb.q, d1, f_hat, m, settings.alpha0, settings.boot_l, u=u)
        for vb, m in zip(chain, ms)
    )
    qm = find_q_max(strengths)
    late = tuple(late_passes(strengths))

    fits = []
    for vb, m, mk, st in zip(chain, ms, makers, strengths):
        try:
            fit = tsci_fit(y1, d1, f_hat, m, mk, vb.q, settings.alpha)
            warn = fit.warnings if st.passed else fit.warnings + ("instrument fails the strength test at this order",)
            fits.append(dataclasses.replace(fit, mu_hat=st.mu_hat, warnings=warn))
        except WeakIVError as exc:
            notes.append(f"fit at q={vb.q} failed: {exc}")
            break

    if qm is None or not fits:
        notes.append("weak instrument: V_0 fails the strength test")
        qm = None
        selection = None
    else:
        qm = min(qm, len(fits) - 1)
        selection = select(y1, d1, f_hat, ms, makers, qm, settings.alpha, settings.alpha0,
                           settings.boot_l, c_seed, single_fits=fits)

    baselines = {}
    if baseline_q is not None and baseline_q < len(chain):
        full = None
        if full_baselines:
            omega_full = None
            if full_forest and settings.stage == "rf":
                omega_full = full_sample_weights(data.covariates(), data.d,
                                                 dataclasses.replace(settings.forest, seed=int(seed)))
            full = {"y": data.y, "d": data.d, "z": data.z, "w": w.w, "v": chain[baseline_q].v,
                    "omega_full": omega_full}
        baselines = baseline_estimators(y1, d1, f_hat, ms[baseline_q], makers[baseline_q],
                                        settings.alpha, full)

    return SplitResult(
        seed=int(seed), stage=settings.stage, n1=split.n1, chain=tuple(vb.q for vb in chain),
        strengths=strengths, q_max=qm, late_passes=late, fits=tuple(fits), selection=selection,
        baselines=baselines, warnings=tuple(notes),
    )


def split_seeds(seed: int, count: int) -> list[int]:
    return [int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0]) for i in range(count)]


@dataclass(frozen=True)
class MultiSplitRun:
    splits: tuple
    robust: MultiSplitResult | None
    comp: MultiSplitResult | None

    @property
    def invalid_share(self) -> float:
        return float(np.mean([s.invalid_iv for s in self.splits]))

    @property
    def weak_share(self) -> float:
        return float(np.mean([s.weak_iv for s in self.splits]))


def run_splits(data: Dataset, settings: Settings = Settings(), splits: int = 51, seed: int = 0) -> MultiSplitRun:
    """Repeat :func:`run_split` over ``splits`` random partitions and aggregate.

    The basis stage does not split, so a single cycle is run for it.
    """
    if splits < 1:
        raise ValueError("splits must be >= 1")
    count = 1 if settings.stage == "basis" else splits
    results = tuple(run_split(data, settings, s) for s in split_seeds(seed, count))

    def agg(which):
        fits = [f for f in (r.chosen(which) for r in results) if f is not None]
        if not fits:
            return None
        return aggregate([f.beta for f in fits], [f.se for f in fits], settings.alpha)

    return MultiSplitRun(splits=results, robust=agg("robust"), comp=agg("comp"))
