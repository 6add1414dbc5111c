"""Experiment pipelines: coalescence sweeps, current tables, variance and
second-class tables, exact mixing tables.  Each returns plain rows plus
summaries; :mod:`openasep.cli` writes them as CSV.

Replicas are independent streams keyed by (seed, N, replica) and results
are always reduced in replica order, so the output does not depend on the
number of worker threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tables
from .config import parse_list
from .coupling import Censored, coalescence_time
from .engine import EventStream, OpenSegment, run, track_second_class
from .exact import exact_current, mixing_time
from .params import BoundaryParams, ScalingSpec, effective_constants, triple_point_family
from .specialfn import ContourError, F, asymptotic_current, contour_current

# desk-scale acceptance bands; not constants of the model
BANDS = {
    "coalescence_slope": (1.35, 1.65),
    "coalescence_r2": 0.98,
    "censored_max_fraction": 0.05,
    "variance_ratio_spread": 3.0,
    "second_class_exponent": (1.15, 1.50),
    "asymptotic_rel_gap": 0.05,
}

EXPERIMENTS = ("exact-current", "current", "mix-exact", "couple-sweep", "var-sweep",
               "second-class", "asymptotics", "specialfn-check")


class FitRefused(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    params: BoundaryParams | None = None
    scaling: ScalingSpec | None = None
    n_list: tuple = ()
    replicas: int = 1
    epsilon: float = 0.25
    horizon: float | None = None
    seed: int = 0
    out: str | None = None
    event_budget: int | None = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.kind!r}")
        if self.replicas < 1:
            raise ValueError("replica count must be at least 1")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("N list must be strictly increasing")

    @classmethod
    def from_kv(cls, kv: dict, kind: str | None = None) -> "ExperimentConfig":
        kv = dict(kv)
        kind = kind or kv.pop("experiment", None)
        kv.pop("experiment", None)
        if kind is None:
            raise ValueError("config does not name an experiment")
        params = None
        if all(k in kv for k in ("alpha", "beta", "gamma", "delta", "q")):
            params = BoundaryParams(float(kv.pop("alpha")), float(kv.pop("beta")), float(kv.pop("gamma")),
                                    float(kv.pop("delta")), float(kv.pop("q")), int(kv.pop("n_sites", 1)))
        scaling = None
        if "kappa" in kv and "psi" in kv:
            scaling = ScalingSpec(float(kv.pop("kappa")), float(kv.pop("psi")),
                                  float(kv.pop("A_tilde", 0.0)), float(kv.pop("C_tilde", 0.0)))
        out = cls(
            kind=kind,
            params=params,
            scaling=scaling,
            n_list=tuple(parse_list(kv.pop("n_list", ""), int)),
            replicas=int(kv.pop("replicas", 1)),
            epsilon=float(kv.pop("epsilon", 0.25)),
            horizon=float(kv["horizon"]) if "horizon" in kv else None,
            seed=int(kv.pop("seed", 0)),
            out=kv.pop("out", None),
            event_budget=int(float(kv["event_budget"])) if "event_budget" in kv else None,
            threads=int(kv.pop("threads", 1)),
        )
        kv.pop("horizon", None)
        kv.pop("event_budget", None)
        out.extra = kv
        return out

    def get(self, key, default, cast=float):
        return cast(self.extra[key]) if key in self.extra else default

    def params_for(self, n: int) -> BoundaryParams:
        if self.scaling is not None:
            return triple_point_family(self.scaling, n)
        if self.params is None:
            raise ValueError("config needs either explicit rates or a scaling family")
        return self.params.with_size(n)

    def meta(self) -> dict:
        m = {"experiment": self.kind, "seed": self.seed, "build": tables.build_id(),
             "event_budget": self.event_budget if self.event_budget is not None else "none",
             "replicas": self.replicas}
        if self.params is not None:
            for k in ("alpha", "beta", "gamma", "delta", "q"):
                m[k] = getattr(self.params, k)
        if self.scaling is not None:
            m.update(kappa=self.scaling.kappa, psi=self.scaling.psi,
                     A_tilde=self.scaling.A_tilde, C_tilde=self.scaling.C_tilde)
        if self.n_list:
            m["n_list"] = " ".join(str(n) for n in self.n_list)
        for k in sorted(self.extra):
            m[k] = self.extra[k]
        return m


def replica_key(n: int, r: int) -> int:
    """Stream index of replica r at system size n."""
    return (int(n) << 32) | int(r)


def pmap(fn, items, threads: int = 1):
    """Ordered map; threads only help because the compiled kernels release the GIL."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# -- fits ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    residuals: tuple
    slope_se: float


def fit_loglog(x, y) -> FitResult:
    """Ordinary least squares of log y on log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise FitRefused("a fit needs at least two points")
    X = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    res = ly - X @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss_tot if ss_tot > 0 else 1.0
    dof = lx.size - 2
    if dof > 0:
        s2 = float(np.sum(res ** 2)) / dof
        se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        se = float("nan")
    return FitResult(float(coef[0]), float(coef[1]), r2, tuple(float(v) for v in res), se)


# -- coalescence sweep ---------------------------------------------------------------------

COALESCENCE_HEADER = ("N", "kappa", "psi", "A_tilde", "C_tilde", "replica", "seed", "tau_or_cap",
                      "censored_flag", "build", "event_budget", "valid")


@dataclass
class CoalescenceSweep:
    rows: list
    medians: dict
    censored: dict
    fit: FitResult | None
    fit_error: str | None = None


def _coalescence_cap(cfg: ExperimentConfig, p: BoundaryParams) -> float:
    cap = cfg.get("cap", 1e8)
    if cfg.event_budget is not None:
        total = (p.n_sites - 1) * (1.0 + p.q) + sum(p.boundary_rates)
        cap = min(cap, cfg.event_budget / total)
    return cap


def sweep_coalescence(cfg: ExperimentConfig) -> CoalescenceSweep:
    build = tables.build_id()
    sc = cfg.scaling or ScalingSpec(0.0, 1.0)
    rows, medians, cens_frac = [], {}, {}
    for n in cfg.n_list:
        p = cfg.params_for(n)
        cap = _coalescence_cap(cfg, p)

        def one(r, p=p, cap=cap, n=n):
            return coalescence_time(p, cap=cap, seed=cfg.seed, replica=replica_key(n, r))

        taus = pmap(one, range(cfg.replicas), cfg.threads)
        vals = []
        n_cens = 0
        for r, tau in enumerate(taus):
            censored = isinstance(tau, Censored)
            n_cens += censored
            t = float(tau)
            if not censored:
                vals.append(t)
            rows.append((n, sc.kappa, sc.psi, sc.A_tilde, sc.C_tilde, r, cfg.seed, t, censored, build,
                         cfg.event_budget if cfg.event_budget is not None else "none", not censored))
        cens_frac[n] = n_cens / cfg.replicas
        medians[n] = float(np.median(vals)) if vals else float("nan")
    fit, err = None, None
    try:
        fit = fit_coalescence(medians, cens_frac, cfg.replicas)
    except FitRefused as e:
        err = str(e)
    return CoalescenceSweep(rows, medians, cens_frac, fit, err)


def fit_coalescence(medians: dict, censored: dict, replicas: int) -> FitResult:
    if replicas < 2:
        raise FitRefused("fit refused: a median from a single replica carries no information (R=1)")
    worst = max(censored.values()) if censored else 0.0
    if worst > BANDS["censored_max_fraction"]:
        raise FitRefused(f"fit refused: {worst:.1%} of runs hit the cap at some N (limit 5%)")
    if worst > 0:
        warnings.warn(f"{worst:.1%} censored runs excluded from the medians", stacklevel=2)
    ns = sorted(medians)
    return fit_loglog(ns, [medians[n] for n in ns])


# -- current tables ----------------------------------------------------------------------------

CURRENT_HEADER = ("N", "q", "A", "B", "C", "D", "J", "method", "est_error", "valid")


def current_rows(cfg: ExperimentConfig, method: str):
    rows = []
    for n in cfg.n_list:
        p = cfg.params_for(n)
        e = effective_constants(p)
        valid, err = True, 0.0
        if method == "exact":
            J = exact_current(p)
        elif method == "contour":
            try:
                res = contour_current(p, cfg.get("tol", 1e-12))
                J, err = res.J, res.est_error
            except ContourError:
                J, valid, err = float("nan"), False, float("nan")
        elif method == "asymptotic":
            sc = cfg.scaling
            if sc is None:
                raise ValueError("the asymptotic method needs a scaling family")
            J = asymptotic_current(n, p.q, sc.A_tilde, sc.C_tilde, sc.kappa, sc.psi)
            err = float("nan")
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.append((n, p.q, e.A, e.B, e.C, e.D, J, method, err, valid))
    return rows


EXACT_CURRENT_HEADER = ("N", "alpha", "beta", "gamma", "delta", "q", "J_exact")


def exact_current_rows(cfg: ExperimentConfig):
    rows = []
    for n in cfg.n_list:
        p = cfg.params_for(n)
        rows.append((n, p.alpha, p.beta, p.gamma, p.delta, p.q, exact_current(p)))
    return rows


ASYMPTOTICS_HEADER = ("N", "q", "J_contour", "delta_N", "F_target", "rel_gap", "trend", "valid")


def sweep_current_asymptotics(cfg: ExperimentConfig):
    sc = cfg.scaling
    if sc is None or sc.kappa >= 0.5:
        raise ValueError("asymptotics needs a scaling family with kappa < 1/2")
    target = F(sc.A_tilde, sc.C_tilde)
    rows = []
    prev_gap = None
    for n in cfg.n_list:
        p = triple_point_family(sc, n)
        try:
            J = contour_current(p, cfg.get("tol", 1e-14)).J
        except ContourError:
            rows.append((n, p.q, float("nan"), float("nan"), target, float("nan"), "", False))
            continue
        delta = n * (4.0 * J / (1.0 - p.q) - 1.0)
        gap = abs(delta - target) / target
        trend = "" if prev_gap is None or len(cfg.n_list) < 2 else ("down" if gap < prev_gap else "up")
        prev_gap = gap
        rows.append((n, p.q, J, delta, target, gap, trend, True))
    return rows


# -- current variance ------------------------------------------------------------------------

VARIANCE_HEADER = ("N", "T", "replicas", "mean_J", "mean_se", "mean_target", "var_J", "var_over_N",
                   "seed", "build", "event_budget", "valid")


def _stationary_current(args):
    p, T, seed, key, budget = args
    lat = OpenSegment(p.n_sites)
    stream = EventStream.for_params(lat, p, seed, key)
    e = effective_constants(p)
    eta0 = (stream.aux.random(p.n_sites) < e.rho_left).astype(np.int8)
    rec = run(eta0, p, T, stream=stream, event_budget=budget)
    return int(rec.ledger[0])


def variance_horizon(n: int, q: float) -> float:
    return n ** 1.5 / (1.0 - q)


def sweep_current_variance(cfg: ExperimentConfig):
    """Current through the left reservoir bond up to T = N^{3/2}/(1-q) from Ber(rho) starts."""
    rows = []
    build = tables.build_id()
    for n in cfg.n_list:
        p = cfg.params_for(n)
        e = effective_constants(p)
        if abs(e.A * e.C - 1.0) > 1e-9:
            raise ValueError("the variance table is defined on the product line AC = 1")
        rho = e.rho_left
        T = cfg.horizon if cfg.horizon is not None else variance_horizon(n, p.q)
        J = np.array(pmap(_stationary_current,
                          [(p, T, cfg.seed, replica_key(n, r), cfg.event_budget) for r in range(cfg.replicas)],
                          cfg.threads), dtype=float)
        var = float(J.var(ddof=1)) if J.size > 1 else 0.0
        se = math.sqrt(var / J.size) if J.size > 1 else float("nan")
        rows.append((n, T, J.size, float(J.mean()), se, T * rho * (1.0 - rho) * (1.0 - p.q), var, var / n,
                     cfg.seed, build, cfg.event_budget if cfg.event_budget is not None else "none", True))
    return rows


# -- second class particle ---------------------------------------------------------------------

SECOND_CLASS_HEADER = ("t", "rho", "q", "n_valid", "n_escaped", "mean_Z", "se_Z", "drift_target", "var_Z",
                       "seed", "build", "valid")


def _second_class(args):
    rho, q, times, seed, key, guard = args
    return track_second_class(rho, q, max(times), seed, key, times=times, guard=guard)


def sweep_second_class(cfg: ExperimentConfig):
    """Mean and variance of the second-class position at each time; fit of log Var vs log t."""
    rho = cfg.get("rho", 0.5)
    q = cfg.get("q", 0.0) if cfg.params is None else cfg.params.q
    times = tuple(parse_list(cfg.extra.get("times", "50 100 200 400 800 1600"), float))
    guard = cfg.get("guard", 5.0)
    paths = pmap(_second_class, [(rho, q, times, cfg.seed, r, guard) for r in range(cfg.replicas)], cfg.threads)
    ok = [pth for pth in paths if pth.valid]
    Z = np.array([pth.z for pth in ok]) if ok else np.empty((0, len(times)))
    build = tables.build_id()
    rows = []
    for k, t in enumerate(times):
        z = Z[:, k] if Z.size else np.empty(0)
        var = float(z.var(ddof=1)) if z.size > 1 else float("nan")
        rows.append((t, rho, q, z.size, len(paths) - len(ok), float(z.mean()) if z.size else float("nan"),
                     math.sqrt(var / z.size) if z.size > 1 else float("nan"),
                     (1.0 - q) * (1.0 - 2.0 * rho) * t, var, cfg.seed, build, z.size > 1))
    fit = None
    good = [(r[0], r[8]) for r in rows if r[-1] and r[8] > 0]
    if len(good) >= 2:
        fit = fit_loglog([g[0] for g in good], [g[1] for g in good])
    return rows, fit


# -- exact mixing table --------------------------------------------------------------------------

MIX_HEADER = ("N", "epsilon", "t_mix", "worst_initial_state", "residual", "tau_median", "p_coupled_by_tmix",
              "replicas")


def mix_exact_table(cfg: ExperimentConfig):
    eps_list = parse_list(cfg.extra.get("eps_list", str(cfg.epsilon)), float)
    rows = []
    for n in cfg.n_list:
        p = cfg.params_for(n)
        for eps in eps_list:
            m = mixing_time(p, eps, cap=int(cfg.get("cap_n", 12)))
            tau_med, frac = float("nan"), float("nan")
            if cfg.replicas >= 1 and cfg.get("with_coupling", 1.0):
                taus = pmap(lambda r, p=p, n=n: coalescence_time(p, cap=1e4 * max(m.t_mix, 1.0), seed=cfg.seed,
                                                                 replica=replica_key(n, r)),
                            range(cfg.replicas), cfg.threads)
                t = np.array([float(x) for x in taus])
                cens = np.array([isinstance(x, Censored) for x in taus])
                tau_med = float(np.median(t))
                frac = float(np.mean((t <= m.t_mix) & ~cens))
            rows.append((n, eps, m.t_mix, m.worst_config, m.residual, tau_med, frac, cfg.replicas))
    return rows


def with_defaults(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
