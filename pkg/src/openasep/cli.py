"""Command line entry point: ``openasep <subcommand> [--config f] [--seed s] ...``."""

from __future__ import annotations

import argparse
import math
import sys
import warnings

import numpy as np

from . import harness, tables
from .config import load_kv
from .harness import ExperimentConfig

DEFAULTS = {
    "exact-current": {"alpha": "1", "beta": "1", "gamma": "0", "delta": "0", "q": "0", "n_list": "1 2 3 4 5 6 7 8"},
    "current": {"alpha": "0.55", "beta": "0.6", "gamma": "0.225", "delta": "0.2", "q": "0.5",
                "n_list": "2 3 4 5 6 7 8"},
    "mix-exact": {"kappa": "0", "psi": repr(math.log(2)), "n_list": "2 4 6 8", "replicas": "100",
                  "eps_list": "0.25 0.5"},
    "couple-sweep": {"kappa": "0", "psi": repr(math.log(2)), "A_tilde": "0", "C_tilde": "0",
                     "n_list": "32 64 128 256", "replicas": "100", "epsilon": "0.25", "cap": "1e8"},
    "var-sweep": {"alpha": "0.5", "beta": "0.5", "gamma": "0.25", "delta": "0.25", "q": "0.5",
                  "n_list": "64 128 256", "replicas": "200"},
    "second-class": {"rho": "0.5", "q": "0", "times": "50 100 200 400 800 1600", "replicas": "300"},
    "asymptotics": {"kappa": "0", "psi": repr(math.log(2)), "A_tilde": "1", "C_tilde": "1",
                    "n_list": "250 500 1000 2000"},
    "specialfn-check": {},
}


def _config(args) -> ExperimentConfig:
    kv = dict(DEFAULTS[args.cmd])
    if args.config:
        kv.update(load_kv(args.config))
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    if args.event_budget is not None:
        kv["event_budget"] = str(args.event_budget)
    kv["threads"] = str(args.threads)
    kv.pop("experiment", None)
    if args.cmd == "current":
        kv.pop("method", None)
    return ExperimentConfig.from_kv(kv, kind=args.cmd)


def _emit(args, cfg, header, rows, **meta):
    m = cfg.meta()
    m.update(meta)
    tables.write(args.out or cfg.out or "-", header, rows, m)


def _note(msg):
    print(msg, file=sys.stderr)


def cmd_exact_current(args, cfg):
    _emit(args, cfg, harness.EXACT_CURRENT_HEADER, harness.exact_current_rows(cfg))


def cmd_current(args, cfg):
    _emit(args, cfg, harness.CURRENT_HEADER, harness.current_rows(cfg, args.method), method=args.method)


def cmd_mix_exact(args, cfg):
    _emit(args, cfg, harness.MIX_HEADER, harness.mix_exact_table(cfg))


def cmd_couple_sweep(args, cfg):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = harness.sweep_coalescence(cfg)
    for w in caught:
        _note(f"warning: {w.message}")
    meta = {}
    if res.fit is not None:
        meta.update(slope=res.fit.slope, slope_se=res.fit.slope_se, r_squared=res.fit.r_squared)
        _note(f"slope {res.fit.slope:.4f} +- {res.fit.slope_se:.4f}  R^2 {res.fit.r_squared:.4f}")
    else:
        meta["fit"] = res.fit_error
        _note(res.fit_error)
    for n in sorted(res.medians):
        meta[f"median_N{n}"] = res.medians[n]
        meta[f"censored_N{n}"] = res.censored[n]
    _emit(args, cfg, harness.COALESCENCE_HEADER, res.rows, **meta)


def cmd_var_sweep(args, cfg):
    rows = harness.sweep_current_variance(cfg)
    ratios = [r[7] for r in rows]
    _emit(args, cfg, harness.VARIANCE_HEADER, rows, ratio_spread=max(ratios) / min(ratios))


def cmd_second_class(args, cfg):
    rows, fit = harness.sweep_second_class(cfg)
    meta = {}
    if fit is not None:
        lo, hi = fit.slope - 2 * fit.slope_se, fit.slope + 2 * fit.slope_se
        meta.update(var_exponent=fit.slope, var_exponent_ci=f"{lo:.4f} {hi:.4f}")
        _note(f"variance exponent {fit.slope:.3f} (2 s.e. CI {lo:.3f}..{hi:.3f})")
    _emit(args, cfg, harness.SECOND_CLASS_HEADER, rows, **meta)


def cmd_asymptotics(args, cfg):
    _emit(args, cfg, harness.ASYMPTOTICS_HEADER, harness.sweep_current_asymptotics(cfg))


def cmd_specialfn_check(args, cfg):
    from .specialfn import F, F_tilde, H, ck_expansion, gamma, log_qpoch

    ln2 = math.log(2.0)
    nan = float("nan")
    rows = [
        ("gamma(5)", gamma(5.0).real, 24.0),
        ("gamma(1/2)", gamma(0.5).real, math.sqrt(math.pi)),
        ("F(1,2)-F(2,1)", F(1.0, 2.0) - F(2.0, 1.0), 0.0),
        ("F(50,50)", F(50.0, 50.0), 1.5),
        ("H(1,1;1/2) psi=ln2", float(H(1.0, 1.0, 0.5, ln2)), nan),
    ]
    for a in (8.0, 16.0, 32.0):
        rows.append((f"F_tilde({a:g},1) psi=ln2", F_tilde(a, 1.0, ln2), nan))
    eps = 0.05
    q = math.exp(-eps)
    rows.append(("log(q;q)_inf eps=0.05", float(log_qpoch(np.array([q]), q)[0].real), ck_expansion(eps, 1.0)[0]))
    rows.append(("A_minus eps=1 w=1", ck_expansion(1.0, 1.0)[1], math.pi ** 2 / 12 - 0.5 * ln2))
    _emit(args, cfg, ("quantity", "value", "reference"), rows)


COMMANDS = {
    "exact-current": cmd_exact_current,
    "current": cmd_current,
    "mix-exact": cmd_mix_exact,
    "couple-sweep": cmd_couple_sweep,
    "var-sweep": cmd_var_sweep,
    "second-class": cmd_second_class,
    "asymptotics": cmd_asymptotics,
    "specialfn-check": cmd_specialfn_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="openasep", description="Open ASEP simulation and exact tools.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value file overriding the defaults")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output CSV path, '-' for stdout")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--event-budget", type=int, dest="event_budget")
        if name == "current":
            sp.add_argument("--method", choices=("exact", "contour", "asymptotic"), default="exact")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise SystemExit("seed must be an unsigned 64-bit integer")
    try:
        cfg = _config(args)
        COMMANDS[args.cmd](args, cfg)
    except (ValueError, OverflowError) as e:
        _note(f"error: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
