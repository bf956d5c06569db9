"""Command-line interface: ``tsci estimate``, ``tsci simulate`` and ``tsci strength``.

Exit codes: 0 success (a weak-instrument verdict included), 2 usage,
3 input data, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import save_splits
from .data import load_dataset, parse_w_mode
from .errors import TsciError
from .forest import ForestParams
from .pipeline import STAGES, Settings, run_split, run_splits
from .sim import BASELINE_COLUMNS, TSCI_COLUMNS, SimConfig, run_replications

SCHEMA_VERSION = 1


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _w_mode(text: str) -> str:
    try:
        parse_w_mode(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, type=Path, help="CSV file with a header row")
    p.add_argument("--y", required=True, help="outcome column")
    p.add_argument("--d", required=True, help="treatment column")
    p.add_argument("--z", required=True, type=_names, help="comma-separated instrument columns")
    p.add_argument("--x", default=[], type=_names, help="comma-separated covariate columns")
    p.add_argument("--stage", choices=STAGES, default="rf")
    p.add_argument("--qmax-cap", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--alpha0", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--boot-l", type=int, default=300)
    p.add_argument("--w-mode", type=_w_mode, default="linear")
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--basis-degree", type=int, default=5)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap; computations run in one process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsci", description="Treatment effects with possibly invalid instruments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the effect on a CSV file")
    _add_data_flags(est)
    est.add_argument("--splits", type=int, default=51)
    est.add_argument("--out", type=Path, default=Path("report.json"))
    est.add_argument("--dump-omega", type=Path, default=None,
                     help="write the first split's weighting matrix as CSV")
    est.add_argument("--dump-splits", type=Path, default=None,
                     help="write per-split (beta, se) of the robust fit as CSV")

    sim = sub.add_parser("simulate", help="run the simulation study for one cell")
    sim.add_argument("--model", type=int, choices=(1, 2, 3), default=1)
    sim.add_argument("--vio", type=int, choices=(0, 1, 2), default=1)
    sim.add_argument("--a", type=float, default=0.0)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--p", type=int, default=20)
    sim.add_argument("--error", type=int, choices=(1, 2), default=1)
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--estimators", type=_names,
                     default=list(TSCI_COLUMNS + ("rf_init", "rf_plug", "tsls")))
    sim.add_argument("--trees", type=int, default=200)
    sim.add_argument("--boot-l", type=int, default=300)
    sim.add_argument("--basis-degree", type=int, default=5)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out", type=Path, default=Path("sim"),
                     help="output prefix; writes PREFIX.csv and PREFIX.json")

    st = sub.add_parser("strength", help="instrument strength per violation order")
    _add_data_flags(st)
    st.add_argument("--q", type=int, default=None, help="highest order to test (default --qmax-cap)")
    return parser


def _settings(args) -> Settings:
    forest = ForestParams(num_trees=args.trees, min_leaf=args.min_leaf, mtry=args.mtry)
    return Settings(stage=args.stage, w_mode=args.w_mode, q_cap=args.qmax_cap, alpha=args.alpha,
                    alpha0=args.alpha0, boot_l=args.boot_l, forest=forest,
                    basis_degree=args.basis_degree)


def _fmt_ci(ci) -> str:
    return f"({ci[0]:.4f}, {ci[1]:.4f})"


def _strength_table(strengths) -> str:
    lines = ["  q        mu_hat    max(2TrM,10)  boot_quant   pass"]
    for s in strengths:
        lines.append(f"  {s.q:<3d}{s.mu_hat:12.3f} {s.threshold:14.3f} {s.s_quantile:12.3f}   "
                     f"{'yes' if s.passed else 'no'}")
    return "\n".join(lines)


def cmd_estimate(args, out=None) -> int:
    out = sys.stdout if out is None else out
    data = load_dataset(args.data, args.y, args.d, args.z, args.x)
    settings = _settings(args)
    if args.splits < 1:
        raise argparse.ArgumentTypeError("--splits must be >= 1")
    if args.dump_omega is not None:
        run_split(data, settings, args.seed, dump_omega=args.dump_omega)
    run = run_splits(data, settings, args.splits, args.seed)
    first = run.splits[0]
    # majority vote over splits
    weak = run.weak_share > 0.5
    verdict = "weak instrument" if weak else ("invalid" if run.invalid_share > 0.5 else "valid")
    report = {
        "schema_version": SCHEMA_VERSION,
        "stage": settings.stage,
        "n": data.n,
        "settings": {"q_cap": settings.q_cap, "alpha": settings.alpha, "alpha0": settings.alpha0,
                     "boot_l": settings.boot_l, "w_mode": settings.w_mode, "seed": args.seed,
                     "splits": len(run.splits), "trees": settings.forest.num_trees},
        "robust": None if run.robust is None else run.robust.to_dict(),
        "comp": None if run.comp is None else run.comp.to_dict(),
        "invalid_share": run.invalid_share,
        "weak_share": run.weak_share,
        "first_split": first.to_dict(),
        "verdict": verdict,
    }
    args.out.write_text(json.dumps(report, indent=2, default=_json_default), encoding="utf-8")
    r = run.robust
    sel = first.selection
    if r is None:
        print("no estimate: the instrument leaves no curvature in any split", file=out)
    else:
        if args.dump_splits is not None:
            save_splits(args.dump_splits, r.betas, r.ses)
        print(f"beta (median, robust)   {r.beta_med:.6f}", file=out)
        print(f"se (median)             {r.se_med:.6f}", file=out)
        print(f"median CI               {_fmt_ci(r.ci_med)}", file=out)
        print(f"multi-split CI          {_fmt_ci(r.ci_multisplit)}", file=out)
    if first.weak_iv:
        print("q_max                   none (weak instrument after adjusting for V_0)", file=out)
    else:
        print(f"q_max                   {first.q_max}", file=out)
        print(f"q_c / q_r               {sel.q_c} / {sel.q_r}", file=out)
    print(f"instrument verdict      {verdict} (invalid in {run.invalid_share:.2%} of splits)", file=out)
    print("strength (first split)", file=out)
    print(_strength_table(first.strengths), file=out)
    print(f"report written to {args.out}", file=out)
    return 0


def cmd_strength(args, out=None) -> int:
    out = sys.stdout if out is None else out
    data = load_dataset(args.data, args.y, args.d, args.z, args.x)
    settings = _settings(args)
    q_cap = settings.q_cap if args.q is None else args.q
    settings = dataclasses.replace(settings, q_cap=q_cap)
    res = run_split(data, settings, args.seed)
    print(_strength_table(res.strengths), file=out)
    if res.weak_iv:
        print("verdict: weak instrument (V_0 fails)", file=out)
    else:
        print(f"q_max: {res.q_max}", file=out)
    return 0


def cmd_simulate(args, out=None) -> int:
    out = sys.stdout if out is None else out
    config = SimConfig(model=args.model, vio=args.vio, a=args.a, n=args.n, p=args.p,
                       error=args.error, reps=args.reps, seed=args.seed)
    known = set(TSCI_COLUMNS + BASELINE_COLUMNS + ("tsci_ba_oracle", "tsci_ba_comp", "tsci_ba_robust"))
    bad = [e for e in args.estimators if e not in known]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown estimator(s): {', '.join(bad)}")
    settings = Settings(forest=ForestParams(num_trees=args.trees), boot_l=args.boot_l)
    basis = dataclasses.replace(settings, stage="basis", basis_degree=args.basis_degree)
    summary = run_replications(config, settings, tuple(args.estimators), basis)
    prefix = str(args.out)
    summary.write_csv(prefix + ".csv")
    summary.write_json(prefix + ".json")
    print(f"{'estimator':<16}{'coverage':>10}{'|bias|':>10}{'length':>10}", file=out)
    for name, s in summary.estimators.items():
        print(f"{name:<16}{s.coverage:>10.3f}{s.mean_abs_bias:>10.4f}{s.mean_length:>10.4f}", file=out)
    print(f"{'invalidity':<16}{summary.invalidity:>10.3f}", file=out)
    if summary.failures:
        print(f"failures: {summary.failures}", file=out)
    return 0


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "strength": cmd_strength}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except argparse.ArgumentTypeError as exc:
        print(f"tsci: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"tsci: error: {exc}", file=sys.stderr)
        return 2
    except TsciError as exc:
        print(f"tsci: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tsci: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
