"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Criteria 6, 8 and 10 are Monte Carlo runs of a few minutes in total.
"""
import math
import time
from math import comb

import numpy as np
import pytest

from openasep import tables
from openasep.cli import main
from openasep.coupling import (
    CHI_NAMES, _CHI_PAIR, chi_decode, chi_encode, chi_init, chi_stream, couple_debug,
    current_identity_check, diminish, run_chi,
)
from openasep.engine import EventStream, OpenSegment, run, run_multispecies
from openasep.exact import check_blocking_reversibility, check_product_stationarity, exact_current, tv
from openasep.harness import (
    BANDS, ExperimentConfig, sweep_coalescence, sweep_current_asymptotics, sweep_current_variance,
    sweep_second_class,
)
from openasep.params import BoundaryParams, ScalingSpec, effective_constants
from openasep.specialfn import ContourError, F, F_tilde, H, contour_current

LN2 = math.log(2.0)


def catalan(n):
    return comb(2 * n, n) // (n + 1)


def test_c01_catalan_current(report):
    t0 = time.perf_counter()
    errs = [abs(exact_current(BoundaryParams(1, 1, 0, 0, 0, n)) - catalan(n) / catalan(n + 1))
            for n in range(1, 9)]
    dt = time.perf_counter() - t0
    report("criterion 1 (Catalan current)", max(errs) < 1e-12 and dt < 1.0,
           f"max error {max(errs):.2e} over N=1..8 in {dt:.2f}s")


def test_c02_product_line(report):
    p = BoundaryParams(0.5, 0.5, 0.25, 0.25, 0.5)
    e = effective_constants(p)
    res = max(check_product_stationarity(p.with_size(n), 0.5) for n in range(1, 9))
    jerr = max(abs(exact_current(p.with_size(n)) - 0.125) for n in range(1, 9))
    ok = abs(e.A - 1) < 1e-14 and abs(e.C - 1) < 1e-14 and res < 1e-12 and jerr < 1e-12
    report("criterion 2 (product line)", ok, f"A={e.A:.15g} C={e.C:.15g} residual {res:.1e} |J-1/8| {jerr:.1e}")


def _random_grid(k, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < k:
        q = rng.uniform(0.0, 0.9)
        p = BoundaryParams(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng.uniform(0, 1), rng.uniform(0, 1), q)
        e = effective_constants(p)
        if max(abs(e.A), abs(e.B), abs(e.C), abs(e.D)) < 0.999:
            out.append(p)
    return out


def test_c03_contour_vs_exact(report):
    t0 = time.perf_counter()
    ref = BoundaryParams(0.55, 0.6, 0.225, 0.2, 0.5)
    e = effective_constants(ref)
    consts_ok = np.allclose([e.A, e.B, e.C, e.D], [2 / 3, -0.5, 9 / 11, -0.5], atol=1e-14)
    worst = 0.0
    for p in [ref] + _random_grid(10):
        for n in range(2, 9):
            worst = max(worst, abs(contour_current(p.with_size(n)).J - exact_current(p.with_size(n))))
    dt = time.perf_counter() - t0
    report("criterion 3 (contour vs exact)", consts_ok and worst < 1e-8 and dt < 10,
           f"max |J_contour - J_exact| {worst:.2e} over 11 parameter sets, N=2..8, {dt:.1f}s")


def test_c04_second_order_asymptotics(report):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(kind="asymptotics", scaling=ScalingSpec(0.0, LN2, 1.0, 1.0),
                           n_list=(250, 500, 1000, 2000))
    rows = sweep_current_asymptotics(cfg)
    gaps = [r[5] for r in rows]
    deltas = [r[3] for r in rows]
    target = rows[0][4]
    trending = all(abs(b - target) < abs(a - target) for a, b in zip(deltas, deltas[1:]))
    dt = time.perf_counter() - t0
    ok = all(r[-1] for r in rows) and gaps[-1] < BANDS["asymptotic_rel_gap"] and trending and dt < 120
    report("criterion 4 (second-order asymptotics)", ok,
           f"F(1,1)={target:.6f}, relative gaps {', '.join(f'{g:.4f}' for g in gaps)}, {dt:.1f}s")


def test_c05_F_structure(report):
    t0 = time.perf_counter()
    pts = [0.25, 0.5, 1.0, 2.0, 4.0]
    sym = max(abs(F(a, c) - F(c, a)) for a in pts for c in pts)
    inc = [F(a, 1.0) for a in pts]
    increasing = all(b > a for a, b in zip(inc, inc[1:]))
    f50 = F(50.0, 50.0)
    x = np.linspace(0.01, 12.0, 200)
    h_pos = all(np.all(H(a, c, x, psi) > 0) for a in pts for c in pts for psi in (LN2, 1.0))
    ft = {psi: [F_tilde(a, 1.0, psi) for a in (8.0, 16.0, 32.0)] for psi in (LN2, 1.0)}
    ft_inc = all(v[0] < v[1] < v[2] for v in ft.values())
    dt = time.perf_counter() - t0
    ok = sym < 1e-12 and increasing and 1.45 <= f50 <= 1.50 and h_pos and ft_inc and dt < 30
    report("criterion 5 (F / F-tilde structure)", ok,
           f"asym {sym:.1e}, F(50,50)={f50:.5f}, F~(8,16,32; ln2)={[round(v, 3) for v in ft[LN2]]}, {dt:.1f}s")


def test_c06_triple_point_mixing_exponent(report):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(kind="couple-sweep", scaling=ScalingSpec(0.0, LN2), n_list=(32, 64, 128, 256),
                           replicas=100, epsilon=0.25, seed=2024, extra={"cap": "1e8"})
    res = sweep_coalescence(cfg)
    dt = time.perf_counter() - t0
    lo, hi = BANDS["coalescence_slope"]
    fit = res.fit
    ok = fit is not None and lo <= fit.slope <= hi and fit.r_squared >= BANDS["coalescence_r2"] and dt <= 600
    meds = ", ".join(f"{n}:{m:.0f}" for n, m in res.medians.items())
    detail = (f"slope {fit.slope:.3f} (s.e. {fit.slope_se:.3f}) R^2 {fit.r_squared:.4f}"
              if fit else res.fit_error)
    report("criterion 6 (triple-point mixing exponent)", ok, f"{detail}; medians {meds}; {dt:.0f}s")


def test_c07_current_identity(report):
    t0 = time.perf_counter()
    p = BoundaryParams(0.5, 0.5, 0.25, 0.25, 0.5)
    times = np.linspace(5.0, 100.0, 20)
    worst, valid, n = 0, True, 0
    for r in range(20):
        rows, ok = current_identity_check(p, 150, 300, seed=7, replica=r, times=times)
        valid &= ok
        worst = max(worst, max(abs(row[1]) for row in rows))
        n += len(rows)
    dt = time.perf_counter() - t0
    report("criterion 7 (pathwise current identity)", worst == 0 and valid and n == 400 and dt < 60,
           f"max |residual| {worst} over {n} (time, replica) pairs, windows valid={valid}, {dt:.1f}s")


def test_c08_variance_shape(report):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(kind="var-sweep", params=BoundaryParams(0.5, 0.5, 0.25, 0.25, 0.5),
                           n_list=(64, 128, 256), replicas=200, seed=8)
    rows = sweep_current_variance(cfg)
    ratios = [r[7] for r in rows]
    spread = max(ratios) / min(ratios)
    zs = [abs(r[3] - r[5]) / r[4] for r in rows]
    dt = time.perf_counter() - t0
    ok = spread <= BANDS["variance_ratio_spread"] and max(zs) <= 4 and dt <= 300
    report("criterion 8 (variance shape)", ok,
           f"Var/N {', '.join(f'{x:.3f}' for x in ratios)} (spread {spread:.2f}), "
           f"max |mean - T(1-q)/4| / s.e. {max(zs):.2f}, {dt:.0f}s")


def _order_preservation():
    n = 8
    hi = BoundaryParams(0.9, 0.3, 0.1, 0.4, 0.5, n)
    lo = BoundaryParams(0.5, 0.8, 0.3, 0.1, 0.5, n)
    bad = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        top = rng.integers(0, 2, n)
        bot = top * rng.integers(0, 2, n)
        s = EventStream.for_params(OpenSegment(n), [hi, lo], seed, 0)

        def check(c, ev):
            nonlocal bad
            bad += int(np.any(c[0] < c[1]))

        couple_debug([top, bot], [hi, lo], s, 2000, check)
    return bad == 0


def _projection_commutes():
    n = 9
    p = BoundaryParams(0.7, 0.6, 0.2, 0.3, 0.4, n)
    lab = np.random.default_rng(1).integers(0, 4, n).tolist()
    for k in (1, 2, 3):
        ms = run_multispecies(lab, [3, 2, 1, 0], p, 25.0, EventStream.for_params(OpenSegment(n), p, 5, 1))
        b = run((np.array(lab) >= k).astype(np.int8), p, 25.0, stream=EventStream.for_params(OpenSegment(n), p, 5, 1))
        if not np.array_equal((np.array(ms.final.tolist()) >= k).astype(np.int8), b.final):
            return False
    return True


def _chi_checks():
    keys = {(_CHI_PAIR[nm], nm in ("2_-1", "2_5")) for nm in CHI_NAMES}
    bij = len(keys) == len(CHI_NAMES) and all(
        chi_decode(chi_encode(*pr)) == pr for pr in [(0, 0), (2, 0), (0, 2), (2, 2), (1, 2), (2, 1), (1, 1)])
    n = 6
    inner = BoundaryParams(0.5, 0.5, 0.25, 0.25, 0.4, n)
    outer = BoundaryParams(0.9, 0.8, 0.1, 0.05, 0.4, n)
    consistent, in_class, exits = True, True, 0
    for seed in range(15):
        rng = np.random.default_rng(seed)
        e1 = rng.integers(0, 2, n)
        e2 = e1 * rng.integers(0, 2, n)
        st = chi_init(np.zeros(n), np.ones(n), e1, e2, inner, outer)

        def check(s, ev):
            nonlocal consistent, in_class
            consistent &= s.consistent()
            in_class &= diminish(s).in_class()

        run_chi(st, chi_stream(st, seed), 10.0, check)
        exits += len(st.exits_left) + len(st.exits_right)
    return bij, consistent, in_class and exits > 0


def _tv_axioms():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, c = (rng.dirichlet(np.ones(16)) for _ in range(3))
        if not (tv(a, a) == 0 and abs(tv(a, b) - tv(b, a)) < 1e-15 and tv(a, c) <= tv(a, b) + tv(b, c) + 1e-15
                and 0 <= tv(a, b) <= 1):
            return False
    return True


def _reruns(tmp_path):
    cfg = tmp_path / "r.cfg"
    cfg.write_text("n_list = 6 12\nreplicas = 8\n", encoding="utf-8")
    outs = []
    for i, threads in enumerate((1, 2)):
        path = tmp_path / f"r{i}.csv"
        if main(["couple-sweep", "--config", str(cfg), "--seed", "77", "--threads", str(threads),
                 "--out", str(path)]) != 0:
            return False
        outs.append(path.read_bytes())
    return outs[0] == outs[1] and len(tables.read(tmp_path / "r0.csv")[2]) == 16


def test_c09_property_suite(report, tmp_path):
    t0 = time.perf_counter()
    order = _order_preservation()
    proj = _projection_commutes()
    bij, consistent, member = _chi_checks()
    db = max(check_blocking_reversibility(q, 8) for q in (0.1, 0.5, 0.9))
    tv_ok = _tv_axioms()
    rerun = _reruns(tmp_path)
    dt = time.perf_counter() - t0
    parts = dict(order=order, projection=proj, chi_bijective=bij and consistent, A_m=member,
                 detailed_balance=db < 1e-12, tv_axioms=tv_ok, byte_identical=rerun)
    report("criterion 9 (coupling/property suite)", all(parts.values()) and dt < 60,
           " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in parts.items()) + f" (db {db:.1e}), {dt:.1f}s")


def test_c10_second_class(report):
    t0 = time.perf_counter()
    half, fit = sweep_second_class(ExperimentConfig(kind="second-class", replicas=300, seed=10,
                                                    extra={"rho": "0.5", "q": "0",
                                                           "times": "50 100 200 400 800 1600"}))
    z_half = max(abs(r[5]) / r[6] for r in half)
    dense, _ = sweep_second_class(ExperimentConfig(kind="second-class", replicas=300, seed=11,
                                                   extra={"rho": "0.6", "q": "0", "times": "50 100 200 400"}))
    z_dense = max(abs(r[5] - r[7]) / r[6] for r in dense)
    speed = dense[-1][5] / dense[-1][0]
    lo, hi = BANDS["second_class_exponent"]
    dt = time.perf_counter() - t0
    escaped = sum(r[4] for r in half) // len(half) + sum(r[4] for r in dense) // len(dense)
    ok = z_half <= 4 and z_dense <= 4 and lo <= fit.slope <= hi and dt <= 180
    report("criterion 10 (second-class sanity)", ok,
           f"rho=1/2 max |mean|/s.e. {z_half:.2f}; rho=0.6 speed {speed:.4f} (max dev {z_dense:.2f} s.e.); "
           f"Var exponent {fit.slope:.3f} [{fit.slope - 2 * fit.slope_se:.3f}, {fit.slope + 2 * fit.slope_se:.3f}]; "
           f"escaped {escaped}; {dt:.0f}s")
