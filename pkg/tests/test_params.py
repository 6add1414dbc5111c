import math

import pytest
from hypothesis import given, settings, strategies as st

from openasep.params import (
    BoundaryParams, Phase, Region, ScalingSpec, classify_phase, classify_region, effective_constants,
    liggett_params_from_targets, quadratic_residual, triple_point_family,
)

rate = st.floats(0.01, 3.0)
small = st.floats(0.0, 2.0)
qs = st.floats(0.0, 0.95)


@given(rate, rate, small, small, qs)
def test_roots_solve_quadratics(a, b, g, d, q):
    e = effective_constants(BoundaryParams(a, b, g, d, q))
    for x in (e.A, e.B):
        assert abs(quadratic_residual(b, d, q, x)) < 1e-9 * (1 + x * x)
    for x in (e.C, e.D):
        assert abs(quadratic_residual(a, g, q, x)) < 1e-9 * (1 + x * x)
    # A = 0 is attained, e.g. TASEP with beta = 1
    assert e.A >= 0 and e.C >= 0 and e.B <= 0 and e.D <= 0
    # Vieta: products of roots
    assert e.A * e.B == pytest.approx(-d / b, abs=1e-12)
    assert e.C * e.D == pytest.approx(-g / a, abs=1e-12)


def test_reference_constants():
    e = effective_constants(BoundaryParams(0.55, 0.6, 0.225, 0.2, 0.5))
    assert (e.A, e.B, e.C, e.D) == pytest.approx((2 / 3, -0.5, 9 / 11, -0.5), abs=1e-14)
    assert e.rho_left == pytest.approx(11 / 20)
    assert e.rho_right == pytest.approx(0.4)


@given(st.floats(0.05, 20), st.floats(0.05, 20), qs)
def test_liggett_inversion_round_trip(A, C, q):
    p = liggett_params_from_targets(A, C, q)
    e = effective_constants(p)
    assert e.A == pytest.approx(A, rel=1e-10)
    assert e.C == pytest.approx(C, rel=1e-10)
    assert p.gamma == pytest.approx(q * (1 - p.alpha)) and p.delta == pytest.approx(q * (1 - p.beta))


def test_phase_classification():
    assert classify_phase((1.0, 1.0)) is Phase.TRIPLE_POINT
    assert classify_phase((0.5, 0.9)) is Phase.MAX_CURRENT
    assert classify_phase((2.0, 0.5)) is Phase.HIGH_DENSITY
    assert classify_phase((0.5, 2.0)) is Phase.LOW_DENSITY
    assert classify_phase((2.0, 2.0)) is Phase.COEXISTENCE_LINE
    assert classify_region((2.0, 0.5)) is Region.PRODUCT_LINE
    assert classify_region((0.5, 0.5)) is Region.FAN
    assert classify_region((2.0, 3.0)) is Region.SHOCK


def test_triple_point_family():
    spec = ScalingSpec(0.0, math.log(2))
    p = triple_point_family(spec, 64)
    e = effective_constants(p)
    assert p.q == pytest.approx(0.5)
    assert (e.A, e.C) == pytest.approx((1.0, 1.0))
    assert e.phase is Phase.TRIPLE_POINT
    # A = exp(-A_t / sqrt(N))
    p = triple_point_family(ScalingSpec(0.25, 1.0, 1.0, 2.0), 100)
    e = effective_constants(p)
    assert e.A == pytest.approx(math.exp(-0.1))
    assert e.C == pytest.approx(math.exp(-0.2))
    assert p.q == pytest.approx(math.exp(-100 ** -0.25))


@pytest.mark.parametrize("kw", [dict(q=1.0), dict(q=-0.1), dict(alpha=0.0), dict(beta=-1.0),
                                dict(gamma=-0.1), dict(n_sites=0)])
def test_validation(kw):
    base = dict(alpha=1.0, beta=1.0, gamma=0.0, delta=0.0, q=0.0, n_sites=3)
    base.update(kw)
    with pytest.raises(ValueError):
        BoundaryParams(**base)


@settings(max_examples=30)
@given(rate, rate, small, small, qs, st.integers(1, 50))
def test_text_round_trip(a, b, g, d, q, n):
    p = BoundaryParams(a, b, g, d, q, n)
    assert BoundaryParams.from_text(p.to_text()) == p
