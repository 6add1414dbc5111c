import math

import numpy as np
import pytest
import scipy.special as sps
from hypothesis import given, settings, strategies as st

from openasep.exact import exact_current
from openasep.params import BoundaryParams, liggett_params_from_targets
from openasep.specialfn import (
    ContourError, F, F_tilde, GammaPoleError, H, ck_envelope, ck_expansion, contour_current, gamma,
    log_gamma, log_qpoch, qpochhammer, reciprocal_gamma_pair,
)


@settings(max_examples=200)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_log_gamma_principal_branch(x, y):
    z = complex(x, y)
    if y == 0 and x <= 0 and x == round(x):
        with pytest.raises(GammaPoleError):
            log_gamma(z)
        return
    if abs(z) < 1e-3:
        return
    ref = complex(sps.loggamma(z))
    assert abs(log_gamma(z) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_gamma_values():
    assert gamma(5.0).real == pytest.approx(24.0, rel=1e-14)
    assert gamma(0.5).real == pytest.approx(math.sqrt(math.pi), rel=1e-14)
    y = np.array([0.3, 1.0, 2.5])
    lhs = 1.0 / (gamma(1j * y) * gamma(-1j * y))
    assert np.allclose(lhs.real, reciprocal_gamma_pair(y), rtol=1e-12)
    assert np.abs(lhs.imag).max() < 1e-12


def test_qpochhammer_against_product():
    for x, q in ((0.3, 0.5), (-0.7, 0.9), (0.5 + 0.5j, 0.2)):
        ref = np.prod([1 - x * q ** k for k in range(4000)])
        ev = qpochhammer(x, q)
        assert abs(ev.value - ref) < 1e-13 * max(1, abs(ref))
        assert ev.tail_bound < 1e-15
    assert qpochhammer(4.0, 0.5).is_zero
    v = log_qpoch(np.array([0.1, 0.2]), 0.3)
    assert np.allclose(np.exp(v.real), [qpochhammer(0.1, 0.3).value.real, qpochhammer(0.2, 0.3).value.real])


@pytest.mark.parametrize("p", [
    BoundaryParams(0.55, 0.6, 0.225, 0.2, 0.5),
    BoundaryParams(0.9, 0.9, 0.0, 0.0, 0.0),
    liggett_params_from_targets(0.8, 0.5, 0.3),
])
def test_contour_matches_exact(p):
    for n in range(2, 8):
        r = contour_current(p.with_size(n))
        assert abs(r.J - exact_current(p.with_size(n))) < 1e-10
        assert r.imag_ratio < 1e-8


def test_contour_refuses_outside_disc():
    with pytest.raises(ContourError):
        contour_current(BoundaryParams(0.1, 0.1, 0.0, 0.0, 0.0, 5))
    # the triple point sits on the circle itself
    with pytest.raises(ContourError):
        contour_current(BoundaryParams(0.5, 0.5, 0.25, 0.25, 0.5, 5))


def test_F_properties():
    assert F(1.0, 2.0) == pytest.approx(F(2.0, 1.0), abs=1e-14)
    vals = [F(a, 1.0) for a in (0.25, 0.5, 1, 2, 4)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert 1.45 <= F(50.0, 50.0) <= 1.5
    assert F(1.0, 1.0) > 0
    v, err = F(1.0, 1.0, with_error=True)
    assert err < 1e-12
    with pytest.raises(ValueError):
        F(0.0, 1.0)


def test_H_and_F_tilde():
    psi = math.log(2)
    x = np.linspace(0.01, 10, 50)
    for a, c in ((0.5, 1.0), (1.0, 1.0), (4.0, 2.0), (16.0, 1.0)):
        assert np.all(H(a, c, x, psi) > 0)
    for psi in (1.0, math.log(2)):
        vals = [F_tilde(a, 1.0, psi) for a in (8.0, 16.0, 32.0)]
        assert vals[0] < vals[1] < vals[2]


def test_ck_expansion():
    eps = 0.05
    q = math.exp(-eps)
    lhs = float(log_qpoch(np.array([q]), q)[0].real)
    ap, _ = ck_expansion(eps, 1.0)
    assert abs(lhs - ap) <= 10 * ck_envelope(eps, 1.0)
    assert ck_expansion(1.0, 1.0)[1] == pytest.approx(math.pi ** 2 / 12 - 0.5 * math.log(2))
    with pytest.raises(ValueError):
        ck_expansion(0.1, 30j)
