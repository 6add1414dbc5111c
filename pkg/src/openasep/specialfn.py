"""q-Pochhammer products, complex log-Gamma, the contour-integral current and
the correction functions F, H, F-tilde of the triple-point asymptotics.

Products and integrands are handled as logarithms; the huge common factors
(4^N from the saddle, exp(pi^2/(6 eps)) from the products) cancel in the
ratios and are subtracted before exponentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .params import BoundaryParams, effective_constants

# -- q-Pochhammer ---------------------------------------------------------------------


@dataclass(frozen=True)
class QPochhammerEval:
    log: complex  # log of the truncated product (real part: log-modulus)
    terms: int
    tail_bound: float  # bound on |log(full) - log(truncated)|
    is_zero: bool = False

    @property
    def value(self) -> complex:
        return 0.0 if self.is_zero else complex(np.exp(self.log))


def _qpoch_terms(absx: float, q: float, tol: float) -> tuple[int, float]:
    """Smallest K with |x| q^K / ((1-q)(1-|x| q^K)) <= tol (and |x| q^K <= 1/2)."""
    if q == 0.0 or absx == 0.0:
        return 1, 0.0
    K = 0
    while True:
        y = absx * q ** K
        if y <= 0.5:
            bound = y / ((1.0 - q) * (1.0 - y))
            if bound <= tol:
                return max(K, 1), bound
        K += 1
        if K > 10_000_000:
            raise RuntimeError("q too close to 1 for the requested tolerance")


def qpochhammer(x: complex, q: float, tol: float = 1e-16) -> QPochhammerEval:
    """(x; q)_inf = prod_{k>=0} (1 - x q^k) with a certified bound on the truncated tail."""
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    x = complex(x)
    K, bound = _qpoch_terms(abs(x), q, tol)
    f = 1.0 - x * q ** np.arange(K)
    if np.any(f == 0):
        return QPochhammerEval(complex(-np.inf), K, bound, True)
    return QPochhammerEval(complex(np.sum(np.log(f))), K, bound)


def log_qpoch(x, q: float, tol: float = 1e-16) -> np.ndarray:
    """Vectorized log (x; q)_inf over an array of x (``-inf`` where a factor vanishes)."""
    x = np.asarray(x, dtype=complex)
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    amax = float(np.abs(x).max()) if x.size else 0.0
    K, _ = _qpoch_terms(amax, q, tol)
    out = np.zeros(x.shape, dtype=complex)
    qk = 1.0
    with np.errstate(divide="ignore"):
        for _ in range(K):
            out += np.log(1.0 - x * qk)
            qk *= q
    return out


# -- log-Gamma -----------------------------------------------------------------------

# B_{2k} / (2k (2k-1)) for k = 1..11
_STIRLING = np.array([
    1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0, -691.0 / 360360.0,
    1.0 / 156.0, -3617.0 / 122400.0, 43867.0 / 244188.0, -174611.0 / 125400.0, 77683.0 / 5796.0,
])
_SHIFT = 20.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class GammaPoleError(ValueError):
    pass


def _stirling(z):
    zi = 1.0 / z
    zi2 = zi * zi
    s = np.zeros_like(z)
    for c in _STIRLING[::-1]:
        s = s * zi2 + c
    return (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + s * zi


def _shift(z, k):
    # z + k without touching the imaginary part (keeps the sign of -0.0 on the cut)
    out = np.empty_like(z)
    out.real = z.real + k
    out.imag = z.imag
    return out


def log_gamma(z):
    """Principal-branch log Gamma(z) for complex z (scalar or array).

    For Re z < 20 we use log Gamma(z) = log Gamma(z + n) - sum_k log(z + k):
    along a horizontal segment each log(z + k) varies continuously, so the
    sum is the analytic continuation from the right half-plane.
    """
    arr = np.asarray(z, dtype=complex)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    poles = (arr.imag == 0) & (arr.real <= 0) & (arr.real == np.round(arr.real))
    if np.any(poles):
        raise GammaPoleError(f"Gamma has a pole at {arr[poles][0].real:g}")
    n = np.maximum(0, np.ceil(_SHIFT - arr.real)).astype(np.int64)
    out = _stirling(_shift(arr, n))
    nmax = int(n.max()) if n.size else 0
    for k in range(nmax):
        m = n > k
        out[m] -= np.log(_shift(arr[m], k))
    return complex(out[0]) if scalar else out


def gamma(z):
    return np.exp(log_gamma(z))


def reciprocal_gamma_pair(y):
    """1 / (Gamma(iy) Gamma(-iy)) = y sinh(pi y) / pi."""
    y = np.asarray(y, dtype=float)
    return y * np.sinh(np.pi * y) / np.pi


# -- contour-integral current ---------------------------------------------------------


class ContourError(ValueError):
    pass


@dataclass(frozen=True)
class ContourResult:
    J: float
    nodes: int
    est_error: float
    imag_ratio: float  # imaginary part of the assembled integrals (relative), ~0
    constants: tuple


CONTOUR_MARGIN = 1e-4


def _contour_sums(N: int, consts, q: float, M: int):
    """Trapezoid sums (numerator, denominator) on z = e^{i phi}, scaled by a common factor."""
    phi = 2.0 * np.pi * np.arange(M) / M
    z = np.exp(1j * phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = log_qpoch(z * z, q) + log_qpoch(1.0 / (z * z), q)
        for a in consts:
            if a != 0.0:
                lg = lg - log_qpoch(a * z, q) - log_qpoch(a / z, q)
        c = np.abs(np.cos(phi / 2.0))
        s = np.abs(np.sin(phi / 2.0))
        # exp(N f) / 4^N = cos(phi/2)^(2N); weight 4/(2+z+1/z) - 1 = tan(phi/2)^2
        lden = 2.0 * N * np.log(c) + lg
        lnum = (2.0 * N - 2.0) * np.log(c) + 2.0 * np.log(s) + lg
    finite = np.isfinite(lden.real)
    shift = float(lden.real[finite].max())
    den = np.where(finite, np.exp(lden - shift), 0.0)
    fin_n = np.isfinite(lnum.real)
    num = np.where(fin_n, np.exp(np.where(fin_n, lnum, 0.0) - shift), 0.0)
    return num.sum(), den.sum()


def contour_current(p: BoundaryParams, tol: float = 1e-12, max_nodes: int = 1 << 22,
                    margin: float = CONTOUR_MARGIN) -> ContourResult:
    """J_N from the unit-circle contour integral, doubling nodes until converged."""
    e = effective_constants(p)
    consts = (e.A, e.B, e.C, e.D)
    worst = max(abs(a) for a in consts)
    if worst >= 1.0:
        raise ContourError(f"unit-circle contour needs |A|,|B|,|C|,|D| < 1 (max is {worst:.6g}); "
                           "use the exact solver or the asymptotic formula")
    if 1.0 - worst < margin:
        raise ContourError(f"poles within {1.0 - worst:.2e} of the contour; refusing "
                           f"(margin {margin:g}); use the exact solver or the asymptotic formula")
    N = p.n_sites
    q = p.q
    M = 64 * math.ceil(math.sqrt(N))
    M += M % 2
    prev = None
    while True:
        num, den = _contour_sums(N, consts, q, M)
        ratio = num / den
        J = (1.0 - q) / 4.0 * (1.0 + ratio.real)
        if prev is not None and abs(J - prev) < tol:
            return ContourResult(J, M, abs(J - prev), abs(ratio.imag), consts)
        if M >= max_nodes:
            raise ContourError(f"contour quadrature did not converge with {M} nodes")
        prev = J
        M *= 2


def contour_current_value(p: BoundaryParams, tol: float = 1e-12) -> float:
    return contour_current(p, tol).J


# -- F, H, F-tilde --------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticInputs:
    X: float = 12.0  # truncation half-width; exp(-X^2/4) ~ 2e-16
    h: float = 0.05  # initial node spacing
    tol: float = 1e-13
    max_halvings: int = 12


def _even_ratio(fn_num, fn_den, quad: AsymptoticInputs):
    """Ratio of two integrals of even functions over R, trapezoid on [0, X] with step halving."""
    h = quad.h
    prev = None
    for _ in range(quad.max_halvings):
        x = np.arange(0.0, quad.X + 0.5 * h, h)
        w = np.full(x.size, h)
        w[0] = w[-1] = 0.5 * h
        val = float(np.sum(w * fn_num(x)) / np.sum(w * fn_den(x)))
        if prev is not None and abs(val - prev) <= quad.tol * max(1.0, abs(val)):
            return val, abs(val - prev)
        prev = val
        h *= 0.5
    raise RuntimeError("quadrature did not stabilize")


def F(A_t: float, C_t: float, quad: AsymptoticInputs = AsymptoticInputs(), with_error: bool = False):
    if A_t <= 0 or C_t <= 0:
        raise ValueError("F needs positive arguments")

    def base(x):
        return np.exp(-x * x / 4.0) * x * x / ((x * x + A_t * A_t) * (x * x + C_t * C_t))

    val, err = _even_ratio(lambda x: x * x * base(x), base, quad)
    val *= 0.25
    return (val, 0.25 * err) if with_error else val


def log_H(A_t: float, C_t: float, x, psi: float):
    """log H(A, C; x); H = 0 at x = 0 (returns -inf there)."""
    if A_t <= 0 or C_t <= 0 or psi <= 0:
        raise ValueError("H needs positive A, C and psi")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = 2.0 * np.real(log_gamma((A_t + 1j * ax) / psi)) + 2.0 * np.real(log_gamma((C_t + 1j * ax) / psi))
    y = 2.0 * ax / psi
    with np.errstate(divide="ignore"):
        # log(y sinh(pi y) / pi) computed without overflow
        lsinh = np.pi * y + np.log1p(-np.exp(-2.0 * np.pi * y)) - math.log(2.0)
        out = out + np.log(y) + lsinh - math.log(math.pi)
    return out


def H(A_t: float, C_t: float, x, psi: float):
    return np.exp(log_H(A_t, C_t, x, psi))


def F_tilde(A_t: float, C_t: float, psi: float, quad: AsymptoticInputs = AsymptoticInputs(),
            with_error: bool = False):
    # the weight H e^{-x^2/4} peaks further out as A/psi grows: widen the window until
    # its tail is e^{-40} below the peak, and normalize by the peak
    X = quad.X
    while True:
        grid = np.linspace(1e-3, X, 64 * int(X))
        lw = log_H(A_t, C_t, grid, psi) - grid ** 2 / 4.0
        shift = float(np.max(lw))
        if lw[-1] < shift - 40.0:
            break
        X *= 1.5

    def base(x):
        with np.errstate(divide="ignore"):
            lh = log_H(A_t, C_t, x, psi)
        return np.where(np.isfinite(lh), np.exp(lh - x * x / 4.0 - shift), 0.0)

    val, err = _even_ratio(lambda x: x * x * base(x), base, replace(quad, X=X))
    val *= 0.25
    return (val, 0.25 * err) if with_error else val


# -- Corwin-Knizel expansion ------------------------------------------------------------------


def ck_expansion(eps: float, w: complex):
    """Leading forms of log (q^w; q)_inf and log (-q^w; q)_inf for q = exp(-eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = complex(w)
    if abs(w.imag) > 2.0 / eps:
        raise ValueError("need |Im w| <= 2 / eps")
    a_plus = -math.pi ** 2 / (6.0 * eps) - (w - 0.5) * math.log(eps) + _HALF_LOG_2PI - log_gamma(w)
    a_minus = math.pi ** 2 / (12.0 * eps) - (w - 0.5) * math.log(2.0)
    if w.imag == 0:
        return float(a_plus.real), float(a_minus.real)
    return a_plus, a_minus


def ck_envelope(eps: float, w: complex) -> float:
    """eps (1+|w|)^2 + eps^(1/2) (1+|w|)^(9/4)."""
    a = 1.0 + abs(w)
    return eps * a * a + math.sqrt(eps) * a ** 2.25


# -- asymptotic current ------------------------------------------------------------------------


def asymptotic_current(N: int, q: float, A_t: float, C_t: float, kappa: float, psi: float) -> float:
    """(1-q)/4 [1 + F/N] for kappa < 1/2, or with F-tilde at kappa = 1/2."""
    corr = F_tilde(A_t, C_t, psi) if kappa == 0.5 else F(A_t, C_t)
    return (1.0 - q) / 4.0 * (1.0 + corr / N)
