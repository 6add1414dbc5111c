"""Boundary parameters of the open ASEP and the algebra derived from them.

The four boundary rates and the bias determine the effective constants
``A, B, C, D`` (roots of two quadratics), the effective reservoir densities
and the phase of the model.  Everything here is a pure function of value
types.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

TRIPLE_TOL = 1e-12

_KEYS = ("alpha", "beta", "gamma", "delta", "q", "n_sites")


class Phase(str, enum.Enum):
    MAX_CURRENT = "MaxCurrent"
    HIGH_DENSITY = "HighDensity"
    LOW_DENSITY = "LowDensity"
    COEXISTENCE_LINE = "CoexistenceLine"
    TRIPLE_POINT = "TriplePoint"


class Region(str, enum.Enum):
    FAN = "fan"
    SHOCK = "shock"
    PRODUCT_LINE = "product-line"


@dataclass(frozen=True)
class BoundaryParams:
    alpha: float
    beta: float
    gamma: float
    delta: float
    q: float
    n_sites: int = 1

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"bias q must lie in [0, 1), got {self.q}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.gamma < 0 or self.delta < 0:
            raise ValueError("gamma and delta must be nonnegative")
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ValueError(f"n_sites must be a positive integer, got {self.n_sites}")

    def with_size(self, n: int) -> "BoundaryParams":
        return BoundaryParams(self.alpha, self.beta, self.gamma, self.delta, self.q, n)

    @property
    def boundary_rates(self) -> tuple[float, float, float, float]:
        """(left-in, left-out, right-out, right-in) = (alpha, gamma, beta, delta)."""
        return (self.alpha, self.gamma, self.beta, self.delta)

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self, k)!r}" for k in _KEYS]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv) -> "BoundaryParams":
        missing = [k for k in _KEYS if k not in kv]
        if missing:
            raise KeyError(f"missing parameter keys: {missing}")
        return cls(
            alpha=float(kv["alpha"]),
            beta=float(kv["beta"]),
            gamma=float(kv["gamma"]),
            delta=float(kv["delta"]),
            q=float(kv["q"]),
            n_sites=int(kv["n_sites"]),
        )

    @classmethod
    def from_text(cls, text: str) -> "BoundaryParams":
        from .config import parse_kv

        return cls.from_mapping(parse_kv(text))


@dataclass(frozen=True)
class EffectiveConstants:
    A: float
    B: float
    C: float
    D: float
    rho_left: float
    rho_right: float
    phase: Phase
    region: Region = field(default=Region.FAN)


@dataclass(frozen=True)
class ScalingSpec:
    """Triple-point scaling family ``q = exp(-psi N^-kappa)``, ``A = exp(-A_tilde N^-1/2)``."""

    kappa: float
    psi: float
    A_tilde: float = 0.0
    C_tilde: float = 0.0
    B_tilde: float | None = None
    D_tilde: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 0.5:
            raise ValueError("kappa must lie in [0, 1/2]")
        if self.psi <= 0:
            raise ValueError("psi must be positive")

    def q(self, n: float) -> float:
        return math.exp(-self.psi * n ** (-self.kappa))

    def targets(self, n: float) -> tuple[float, float]:
        s = n ** -0.5
        return math.exp(-self.A_tilde * s), math.exp(-self.C_tilde * s)


def _roots(rate_in: float, rate_against: float, q: float) -> tuple[float, float]:
    # roots of  r x^2 - (1 - q - r + s) x - s = 0, larger root first
    b = 1.0 - q - rate_in + rate_against
    disc = math.sqrt(b * b + 4.0 * rate_in * rate_against)
    plus = (b + disc) / (2.0 * rate_in)
    # the smaller root via the product of roots avoids cancellation when b > 0
    if rate_against == 0.0:
        minus = min(0.0, b / rate_in)
    elif b > 0:
        minus = -rate_against / (rate_in * plus)
    else:
        minus = (b - disc) / (2.0 * rate_in)
    return plus, minus


def effective_constants(p: BoundaryParams) -> EffectiveConstants:
    A, B = _roots(p.beta, p.delta, p.q)
    C, D = _roots(p.alpha, p.gamma, p.q)
    phase, region = _classify(A, C)
    return EffectiveConstants(
        A=A,
        B=B,
        C=C,
        D=D,
        rho_left=1.0 / (1.0 + C),
        rho_right=A / (1.0 + A),
        phase=phase,
        region=region,
    )


def _classify(A: float, C: float, tol: float = TRIPLE_TOL) -> tuple[Phase, Region]:
    prod = A * C
    if abs(prod - 1.0) <= tol:
        region = Region.PRODUCT_LINE
    elif prod < 1.0:
        region = Region.FAN
    else:
        region = Region.SHOCK
    if abs(A - 1.0) <= tol and abs(C - 1.0) <= tol:
        return Phase.TRIPLE_POINT, region
    if max(A, C) <= 1.0 + tol:
        return Phase.MAX_CURRENT, region
    if abs(A - C) <= tol:
        return Phase.COEXISTENCE_LINE, region
    if A > C:
        return Phase.HIGH_DENSITY, region
    return Phase.LOW_DENSITY, region


def classify_phase(e: EffectiveConstants | tuple[float, float]) -> Phase:
    A, C = (e.A, e.C) if isinstance(e, EffectiveConstants) else e
    return _classify(A, C)[0]


def classify_region(e: EffectiveConstants | tuple[float, float]) -> Region:
    A, C = (e.A, e.C) if isinstance(e, EffectiveConstants) else e
    return _classify(A, C)[1]


def liggett_params_from_targets(A_target: float, C_target: float, q: float, n_sites: int = 1) -> BoundaryParams:
    """Boundary rates with ``gamma = q(1 - alpha)``, ``delta = q(1 - beta)`` hitting given A, C."""
    if A_target <= 0 or C_target <= 0:
        raise ValueError("targets must be positive")
    alpha = 1.0 / (1.0 + C_target)
    beta = 1.0 / (1.0 + A_target)
    return BoundaryParams(alpha, beta, q * (1.0 - alpha), q * (1.0 - beta), q, n_sites)


def triple_point_family(spec: ScalingSpec, n: int) -> BoundaryParams:
    if n < 2:
        raise ValueError("the scaling family needs N >= 2")
    A, C = spec.targets(n)
    return liggett_params_from_targets(A, C, spec.q(n), n)


def quadratic_residual(rate_in: float, rate_against: float, q: float, x: float) -> float:
    return rate_in * x * x - (1.0 - q - rate_in + rate_against) * x - rate_against
