"""Exact computations on the full state space {0,1}^N for small N.

Configurations are indexed by the bitstring eta(1) eta(2) ... eta(N) read
as a binary number, i.e. index = sum_x eta(x) 2^(N-x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .params import BoundaryParams

DEFAULT_CAP = 14


@dataclass(frozen=True)
class ExactDist:
    probs: np.ndarray
    n: int

    def __post_init__(self):
        if self.probs.shape != (1 << self.n,):
            raise ValueError("probability vector has the wrong length")

    def occupation(self) -> np.ndarray:
        """P(eta(x) = 1) for x = 1..N."""
        bits = state_bits(self.n)
        return self.probs @ bits

    def prob(self, predicate) -> float:
        bits = state_bits(self.n)
        return float(self.probs[predicate(bits)].sum())


def state_bits(n: int) -> np.ndarray:
    """(2^N, N) matrix of occupations; column x-1 holds eta(x)."""
    idx = np.arange(1 << n)
    shifts = n - 1 - np.arange(n)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def config_index(eta) -> int:
    out = 0
    for v in eta:
        out = (out << 1) | int(v)
    return out


def index_config(i: int, n: int) -> np.ndarray:
    return np.array([(i >> (n - 1 - k)) & 1 for k in range(n)], dtype=np.int8)


def _check_cap(n, cap):
    if n > cap:
        raise ValueError(f"N={n} exceeds the exact-solver cap {cap} ({1 << n} states)")


def build_generator(p: BoundaryParams, cap: int = DEFAULT_CAP) -> sp.csr_matrix:
    """Sparse generator: G[i, j] = rate i -> j, rows summing to zero."""
    n = p.n_sites
    _check_cap(n, cap)
    S = 1 << n
    idx = np.arange(S)
    rows, cols, vals = [], [], []

    def add(mask, target, rate):
        if rate == 0:
            return
        src = idx[mask]
        rows.append(src)
        cols.append(target[mask])
        vals.append(np.full(src.size, float(rate)))

    for x in range(1, n):
        bl = 1 << (n - x)  # site x
        br = 1 << (n - x - 1)  # site x+1
        occ_l = (idx & bl) != 0
        occ_r = (idx & br) != 0
        swapped = idx ^ (bl | br)
        add(occ_l & ~occ_r, swapped, 1.0)
        add(~occ_l & occ_r, swapped, p.q)
    b1 = 1 << (n - 1)
    bn = 1
    o1 = (idx & b1) != 0
    on = (idx & bn) != 0
    add(~o1, idx | b1, p.alpha)
    add(o1, idx & ~b1, p.gamma)
    add(on, idx & ~bn, p.beta)
    add(~on, idx | bn, p.delta)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    off = sp.coo_matrix((v, (r, c)), shape=(S, S)).tocsr()
    out = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(out)).tocsr()


@dataclass(frozen=True)
class StationaryResult:
    dist: ExactDist
    residual: float
    condition: float


def stationary(G, n: int | None = None, with_info: bool = False):
    """Solve mu G = 0 with one balance equation replaced by normalization."""
    G = sp.csr_matrix(G)
    S = G.shape[0]
    if n is None:
        n = int(round(math.log2(S)))
    M = G.T.tolil()
    M[S - 1, :] = np.ones(S)
    M = M.tocsc()
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    mu = spla.spsolve(M, rhs)
    mu = np.maximum(mu, 0.0)
    mu /= mu.sum()
    res = float(np.abs(G.T @ mu).max())
    if res > 1e-9:
        raise np.linalg.LinAlgError(f"stationary solve failed, residual {res:.3e}")
    d = ExactDist(mu, n)
    if not with_info:
        return d
    cond = float(np.linalg.cond(M.toarray())) if S <= 1024 else float("nan")
    return StationaryResult(d, res, cond)


def stationary_for(p: BoundaryParams, cap: int = DEFAULT_CAP) -> ExactDist:
    return stationary(build_generator(p, cap), p.n_sites)


def stationary_current_exact(mu: ExactDist, p: BoundaryParams) -> float:
    """mu(eta(1)=1, eta(2)=0) - q mu(eta(1)=0, eta(2)=1); for N=1 the reservoir flux at site 1."""
    bits = state_bits(mu.n)
    if mu.n == 1:
        return float(p.alpha * mu.probs[bits[:, 0] == 0].sum() - p.gamma * mu.probs[bits[:, 0] == 1].sum())
    fwd = mu.probs[(bits[:, 0] == 1) & (bits[:, 1] == 0)].sum()
    bwd = mu.probs[(bits[:, 0] == 0) & (bits[:, 1] == 1)].sum()
    return float(fwd - p.q * bwd)


def exact_current(p: BoundaryParams, cap: int = DEFAULT_CAP) -> float:
    return stationary_current_exact(stationary_for(p, cap), p)


def bulk_currents(mu: ExactDist, p: BoundaryParams) -> np.ndarray:
    """Stationary current across every bond, reservoirs included (all equal)."""
    bits = state_bits(mu.n).astype(bool)
    P = mu.probs
    out = [p.alpha * P[~bits[:, 0]].sum() - p.gamma * P[bits[:, 0]].sum()]
    for x in range(mu.n - 1):
        out.append(P[bits[:, x] & ~bits[:, x + 1]].sum() - p.q * P[~bits[:, x] & bits[:, x + 1]].sum())
    out.append(p.beta * P[bits[:, -1]].sum() - p.delta * P[~bits[:, -1]].sum())
    return np.array(out)


def _poisson_weights(lam: float, tol: float):
    """Poisson(lam) pmf on 0..K with tail mass below tol."""
    w = [math.exp(-lam)]
    cdf = w[0]
    k = 0
    while 1.0 - cdf > tol:
        k += 1
        w.append(w[-1] * lam / k)
        cdf += w[-1]
        if k > 10 * lam + 1000:
            break
    return np.array(w)


def evolve(d0, G, t: float, tol: float = 1e-12):
    """Distribution(s) at time t by uniformization.

    ``d0`` is an ExactDist or an array with distributions in rows.  The time
    is cut into pieces with Lambda*dt <= 32 so the Poisson weights stay
    representable; the total truncated mass is at most ``tol``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    is_dist = isinstance(d0, ExactDist)
    v = np.array(d0.probs if is_dist else d0, dtype=float)
    G = sp.csr_matrix(G)
    if t == 0:
        return ExactDist(v, d0.n) if is_dist else v
    lam = float(np.abs(G.diagonal()).max())
    if lam == 0:
        return ExactDist(v, d0.n) if is_dist else v
    P = (sp.identity(G.shape[0], format="csr") + G / lam).T.tocsr()  # acts on column vectors
    pieces = max(1, math.ceil(lam * t / 32.0))
    w = _poisson_weights(lam * t / pieces, tol / pieces)
    vt = v.T
    for _ in range(pieces):
        term = vt
        acc = w[0] * term
        for k in range(1, w.size):
            term = P @ term
            acc = acc + w[k] * term
        vt = acc
    out = vt.T
    return ExactDist(out, d0.n) if is_dist else out


def tv(d, d2) -> float:
    a = d.probs if isinstance(d, ExactDist) else np.asarray(d, dtype=float)
    b = d2.probs if isinstance(d2, ExactDist) else np.asarray(d2, dtype=float)
    if a.shape != b.shape:
        raise ValueError("distributions live on different index sets")
    return float(0.5 * np.abs(a - b).sum())


def tv_event_form(d, d2) -> float:
    """max over events E of d(E) - d2(E), attained at E = {d > d2}."""
    a = d.probs if isinstance(d, ExactDist) else np.asarray(d, dtype=float)
    b = d2.probs if isinstance(d2, ExactDist) else np.asarray(d2, dtype=float)
    return float(np.clip(a - b, 0.0, None).sum())


@dataclass(frozen=True)
class MixingResult:
    t_mix: float
    worst_state: int
    tv_at: float
    t_hi: float
    residual: float
    n: int

    @property
    def worst_config(self) -> str:
        return "".join(str(b) for b in index_config(self.worst_state, self.n))


def _worst(P, mu):
    tvs = 0.5 * np.abs(P - mu[None, :]).sum(axis=1)
    k = int(np.argmax(tvs))
    return float(tvs[k]), k


def worst_tv(p: BoundaryParams, t: float, cap: int = 12) -> float:
    """max over Dirac initial states of TV(P^t(eta, .), mu)."""
    G = build_generator(p, cap)
    mu = stationary(G, p.n_sites).probs
    return _worst(sla.expm(G.toarray() * t), mu)[0]


def mixing_time(p: BoundaryParams, eps: float = 0.25, tol_t: float | None = None,
                cap: int = 12) -> MixingResult:
    """Smallest t with worst-case TV to stationarity <= eps, by bracketing and bisection.

    Uses dense transition matrices exp(tG) (hence the lower default cap):
    every initial state is evolved at once.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    n = p.n_sites
    _check_cap(n, cap)
    Gs = build_generator(p, cap)
    st = stationary(Gs, n, with_info=True)
    mu = st.dist.probs
    G = Gs.toarray()
    S = G.shape[0]
    lo, P_lo = 0.0, np.eye(S)
    hi = 1.0
    P_hi = sla.expm(G * hi)
    while _worst(P_hi, mu)[0] > eps:
        lo, P_lo = hi, P_hi
        hi *= 2.0
        P_hi = P_hi @ P_hi
        if hi > 1e9:
            raise RuntimeError("worst-case TV did not drop below eps")
    if tol_t is None:
        tol_t = 1e-3 * hi
    t_hi = hi
    while hi - lo > tol_t:
        mid = 0.5 * (lo + hi)
        P_mid = P_lo @ sla.expm(G * (mid - lo))
        if _worst(P_mid, mu)[0] > eps:
            lo, P_lo = mid, P_mid
        else:
            hi, P_hi = mid, P_mid
    w, k = _worst(P_hi, mu)
    return MixingResult(hi, k, w, t_hi, st.residual, n)


def bernoulli_dist(n: int, rho: float) -> ExactDist:
    bits = state_bits(n)
    k = bits.sum(axis=1)
    return ExactDist(rho ** k * (1.0 - rho) ** (n - k), n)


def check_product_stationarity(p: BoundaryParams, rho: float, cap: int = DEFAULT_CAP) -> float:
    """||Ber(rho) G||_inf; zero iff the product measure is stationary."""
    G = build_generator(p, cap)
    pi = bernoulli_dist(p.n_sites, rho).probs
    return float(np.abs(G.T @ pi).max())


def subset_all_ones(mu: ExactDist, subset) -> float:
    """P(eta(x) = 1 for every x in subset), sites 1-based."""
    bits = state_bits(mu.n)
    cols = [x - 1 for x in subset]
    return float(mu.probs[bits[:, cols].all(axis=1)].sum())


def blocking_class_states(n_sites: int, n_particles: int):
    """All window configurations with the given particle number, as (S, n) array."""
    bits = state_bits(n_sites)
    return bits[bits.sum(axis=1) == n_particles]


def check_blocking_reversibility(q: float, n_sites: int, n_particles: int | None = None,
                                 first_site: int = 1) -> float:
    """Max detailed-balance defect of the tilted product law for ASEP on a closed window.

    Outside the window the configuration is frozen (empty on the left, full
    on the right), so each particle number is a closed class.  The weight of
    eta is prod_x q^(-x eta(x)); it is normalized within the class.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if n_sites > 12:
        raise ValueError("window limited to 12 sites")
    classes = range(n_sites + 1) if n_particles is None else [n_particles]
    sites = np.arange(first_site, first_site + n_sites)
    worst = 0.0
    for k in classes:
        states = blocking_class_states(n_sites, k)
        if states.shape[0] <= 1:
            continue
        # log-weights, shifted for stability
        lw = -(states @ sites) * math.log(q)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        index = {config_index(s): i for i, s in enumerate(states)}
        for i, s in enumerate(states):
            for x in range(n_sites - 1):
                if s[x] == 1 and s[x + 1] == 0:
                    t = s.copy()
                    t[x], t[x + 1] = 0, 1
                    j = index[config_index(t)]
                    # right jump at rate 1, reverse jump at rate q
                    worst = max(worst, abs(w[i] * 1.0 - w[j] * q))
    return worst
