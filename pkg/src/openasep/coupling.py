"""Shared-clock couplings built on one event stream.

Every construction here reads the same (t, slot, u) sequence as
:mod:`openasep.engine`, so each binary marginal is event-by-event the
process a standalone run would produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .engine import (
    Event,
    EventStream,
    IntegerWindow,
    Lattice,
    OpenSegment,
    SlotMap,
    TrajectoryRecord,
    run_ensemble,
)
from .params import BoundaryParams

# -- basic coupling -------------------------------------------------------------


def couple(initials, params_list, stream: EventStream, horizon: float, schedule=None,
           event_budget=None, censor=None) -> TrajectoryRecord:
    """Evolve k replicas under the basic coupling; snapshots have shape (times, k, size)."""
    return run_ensemble(initials, params_list, horizon, stream, schedule, event_budget, censor)


def couple_debug(initials, params_list, stream: EventStream, n_events: int, check=None):
    """Event-by-event coupled evolution in Python; ``check(cfgs, ev)`` is called after each event."""
    slots = stream.slots
    cfgs = np.array(initials, dtype=np.int8, ndmin=2).copy()
    accept = slots.accept_matrix(params_list)
    ledgers = np.zeros((cfgs.shape[0], cfgs.shape[1] + 1), dtype=np.int64)
    blocked = np.zeros(max(slots.n_edges, 1), dtype=np.bool_)
    for _ in range(n_events):
        ev = stream.next_event()
        slot = ev.slot_index(slots)
        for r in range(cfgs.shape[0]):
            K.step_binary(cfgs, r, slot, ev.u, slots.n_edges, slots.threshold, accept,
                          slots.left, slots.right, ledgers, blocked)
        if check is not None:
            check(cfgs, ev)
    return cfgs, ledgers


def dominates(a, b) -> bool:
    """Componentwise order a >= b."""
    return bool(np.all(np.asarray(a) >= np.asarray(b)))


DIS_NAMES = ("0", "B", "A", "1")  # code = 2*eta1 + eta2 ... (1,0) -> A, (0,1) -> B


def disagreement(eta1, eta2) -> np.ndarray:
    """Site-wise pair labels: '1' (1,1), 'A' (1,0), 'B' (0,1), '0' (0,0)."""
    code = 2 * np.asarray(eta1, dtype=np.int64) + np.asarray(eta2, dtype=np.int64)
    lut = np.array(["0", "B", "A", "1"])
    return lut[code]


def disagreement_marginals(labels):
    labels = np.asarray(labels)
    e1 = np.isin(labels, ["1", "A"]).astype(np.int8)
    e2 = np.isin(labels, ["1", "B"]).astype(np.int8)
    return e1, e2


# -- coalescence -------------------------------------------------------------------


@dataclass(frozen=True)
class Censored:
    cap: float

    def __float__(self):
        return float(self.cap)


def coalescence_time(p: BoundaryParams, stream: EventStream | None = None, cap: float = 1e6,
                     seed: int = 0, replica: int = 0, initials=None):
    """First event time after which replicas started from all-full and all-empty agree.

    Returns a float, or ``Censored(cap)`` if they still differ at ``cap``.
    """
    if not math.isfinite(cap) or cap <= 0:
        raise ValueError("cap must be finite and positive")
    n = p.n_sites
    if stream is None:
        stream = EventStream.for_params(OpenSegment(n), p, seed, replica)
    cfgs = np.array(initials if initials is not None else [np.ones(n), np.zeros(n)], dtype=np.int8)
    diff = int(np.sum(cfgs[0] != cfgs[1]))
    if diff == 0:
        return 0.0
    slots = stream.slots
    accept = slots.accept_matrix([p, p])
    ledgers = np.zeros((2, n + 1), dtype=np.int64)
    blocked = np.zeros(max(slots.n_edges, 1), dtype=np.bool_)
    n_edges, edge_rate, brates, total, thr = slots.kernel_args()
    t_cap = stream.t + cap
    t_start = stream.t
    while diff > 0:
        buf, pos = stream.buffer()
        i, t, _, diff = K.run_until_coalesced(cfgs, buf, pos, stream.t, t_cap, n_edges, edge_rate,
                                              brates, total, thr, accept, slots.left, slots.right,
                                              ledgers, blocked, diff)
        stream.advance(i, t)
        if i < buf.shape[0] and diff > 0:
            return Censored(cap)
    return stream.t - t_start


def coalescence_samples(p: BoundaryParams, replicas: int, seed: int, cap: float):
    """(times, censored flags) for replica indices 0..replicas-1."""
    taus = np.empty(replicas)
    cens = np.zeros(replicas, dtype=bool)
    for r in range(replicas):
        tau = coalescence_time(p, cap=cap, seed=seed, replica=r)
        if isinstance(tau, Censored):
            taus[r] = tau.cap
            cens[r] = True
        else:
            taus[r] = tau
    return taus, cens


# -- censoring ----------------------------------------------------------------------


@dataclass(frozen=True)
class CensorSchedule:
    """Right-continuous step function t -> set of blocked edges (named by left endpoint)."""

    breakpoints: tuple = (0.0,)
    sets: tuple = (frozenset(),)

    def __post_init__(self):
        if len(self.breakpoints) != len(self.sets) or not self.breakpoints:
            raise ValueError("one edge set per breakpoint is required")
        if self.breakpoints[0] != 0.0 or any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must start at 0 and increase strictly")

    @classmethod
    def empty(cls):
        return cls()

    @classmethod
    def constant(cls, edges):
        return cls((0.0,), (frozenset(edges),))

    @classmethod
    def steps(cls, pairs):
        pairs = sorted(pairs, key=lambda p: p[0])
        return cls(tuple(float(t) for t, _ in pairs), tuple(frozenset(e) for _, e in pairs))

    @classmethod
    def random(cls, lattice: Lattice, horizon: float, period: float, frac: float, rng):
        """Independently every ``period`` time units block each edge with probability ``frac``."""
        edges = lattice.sites[:-1]
        times = np.arange(0.0, horizon, period)
        return cls.steps([(t, edges[rng.random(edges.size) < frac].tolist()) for t in times])

    def blocked(self, t: float):
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.sets[max(k, 0)]


def censored_run(initial, stream: EventStream, schedule: CensorSchedule, p: BoundaryParams,
                 horizon: float, snapshots=None, event_budget=None) -> TrajectoryRecord:
    rec = run_ensemble([initial], [p], horizon, stream, snapshots, event_budget, censor=schedule)
    rec.final = rec.final[0]
    rec.ledger = rec.ledger[0]
    rec.snapshots = rec.snapshots[:, 0, :]
    return rec


def height_profile(eta, sites, n: int) -> np.ndarray:
    """sum_{y >= x} (eta(y) - 1{y > n}) for every window site x (zero for the ground state)."""
    d = np.asarray(eta, dtype=np.int64) - (np.asarray(sites) > n)
    return np.cumsum(d[::-1])[::-1]


# -- extended disagreement process ------------------------------------------------------

EXT_NAMES = ("0", "B'", "B", "A", "A'", "1")
EXT_CODE = {name: i for i, name in enumerate(EXT_NAMES)}
# priority tables: code -> rank used for sorting
ORDER_STANDARD = np.array([0, 1, 2, 3, 4, 5], dtype=np.int64)  # 1 > A' > A > B > B' > 0
# 1 > B' > B > A > A' > 0; does not preserve the binary marginals (see tests)
ORDER_REVERSED = np.array([0, 4, 3, 2, 1, 5], dtype=np.int64)


@dataclass
class ExtendedState:
    """Integer window carrying the Z-process and the N-process (sites >= 1) at once.

    Sites <= 0 only ever hold 'A' or '0'.  ``counters`` holds
    [current of the Z-process into site 1, current of the N-process into
    site 1, A' created, B' created].
    """

    lattice: Lattice
    labels: np.ndarray
    counters: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))

    @property
    def site1(self) -> int:
        return self.lattice.index(1)

    def names(self):
        return [EXT_NAMES[c] for c in self.labels]

    def marginals(self):
        """(eta_Z on the whole window, eta_N on sites >= 1)."""
        lab = self.labels
        ez = np.isin(lab, [EXT_CODE["A"], EXT_CODE["A'"], EXT_CODE["1"]]).astype(np.int8)
        en = np.isin(lab, [EXT_CODE["B"], EXT_CODE["A'"], EXT_CODE["1"]]).astype(np.int8)
        return ez, en[self.site1:]

    def count(self, name: str) -> int:
        return int(np.sum(self.labels[self.site1:] == EXT_CODE[name]))

    def identity_residual(self) -> int:
        """J_N(1) - J_Z(1) - (#B - #A), with counts over sites >= 1."""
        jz, jn = int(self.counters[0]), int(self.counters[1])
        return jn - jz - (self.count("B") - self.count("A"))


def extended_from(eta_z, eta_n, lattice: Lattice) -> ExtendedState:
    """Combine a Z-configuration (whole window) with an N-configuration (sites >= 1)."""
    s1 = lattice.index(1)
    ez = np.asarray(eta_z, dtype=np.int64)
    en = np.zeros(lattice.size, dtype=np.int64)
    en[s1:] = np.asarray(eta_n, dtype=np.int64)
    code = np.where((ez == 1) & (en == 1), EXT_CODE["1"],
                    np.where(ez == 1, EXT_CODE["A"], np.where(en == 1, EXT_CODE["B"], EXT_CODE["0"])))
    return ExtendedState(lattice, code.astype(np.int8))


def extended_slots(lattice: Lattice, p: BoundaryParams) -> SlotMap:
    """Bulk edges of the whole window plus the half-line reservoir (alpha, gamma) at site 1."""
    lat = Lattice("extended", lattice.size, lattice.first_site, True, False)
    return SlotMap(lat, p.q, (p.alpha, p.gamma, 0.0, 0.0))


def extended_step(state: ExtendedState, ev: Event, p: BoundaryParams, order=ORDER_STANDARD) -> ExtendedState:
    """Apply one event (in place) and return the state."""
    slots = extended_slots(state.lattice, p)
    if ev.kind == "edge":
        slot = state.lattice.index(ev.site)
        if slot >= slots.n_edges:
            raise IndexError("edge outside the window")
    elif ev.kind in ("left-in", "left-out"):
        slot = slots.n_edges + (0 if ev.kind == "left-in" else 1)
    else:
        raise ValueError("the extended process only has reservoirs at site 1")
    K.step_extended(state.labels, slot, ev.u, slots.n_edges, slots.threshold, state.site1,
                    1.0, 1.0, order, state.counters)
    return state


def run_extended(state: ExtendedState, p: BoundaryParams, horizon: float, stream: EventStream,
                 times=None, order=ORDER_STANDARD):
    """Evolve in place; returns a list of (time, residual, #A, #B) at the requested times."""
    slots = stream.slots
    n_edges, edge_rate, brates, total, thr = slots.kernel_args()
    out = []
    t0 = stream.t
    for tt in sorted(times if times is not None else [horizon]):
        t_end = t0 + tt

        def kern(buf, pos, t, budget, t_end=t_end):
            i, t, applied = K.run_extended(state.labels, buf, pos, t, t_end, n_edges, edge_rate, brates,
                                           total, thr, state.site1, 1.0, 1.0, order, state.counters)
            return i, t, applied, False

        stream.drive(kern)
        out.append((tt, state.identity_residual(), state.count("A"), state.count("B")))
    return out


def current_identity_check(p: BoundaryParams, l_left: int, l_right: int, seed: int, replica: int,
                           times, rho: float = 0.5):
    """Common Bernoulli(rho) start on sites >= 1 (independent Bernoulli on sites <= 0).

    Returns (rows of (time, residual, #A, #B), window_valid).  The window is
    flagged invalid if a disagreement ever reaches the frozen right end.
    """
    lat = IntegerWindow(l_left, l_right)
    stream = EventStream(extended_slots(lat, p), seed, replica)
    ez = (stream.aux.random(lat.size) < rho).astype(np.int8)
    state = extended_from(ez, ez[lat.index(1):], lat)
    rows = run_extended(state, p, max(times), stream, times)
    far = state.labels[-max(2, l_right // 10):]
    valid = bool(np.all((far == EXT_CODE["0"]) | (far == EXT_CODE["1"])))
    return rows, valid


# -- partially ordered multi-species open ASEP ------------------------------------------------

CHI_NAMES = ("0", "2_-1", "2_0", "2_1", "2_2", "2_3", "2_4", "2_5", "1")
CHI_CODE = {name: i for i, name in enumerate(CHI_NAMES)}
# (zeta, xi) with values 0, 1 and 2 (2 = disagreement)
_CHI_PAIR = {
    "0": (0, 0), "2_-1": (0, 0), "2_0": (2, 0), "2_1": (0, 2), "2_2": (2, 2),
    "2_3": (1, 2), "2_4": (2, 1), "2_5": (1, 1), "1": (1, 1),
}
_FRESH = {(0, 0): "0", (2, 0): "2_0", (0, 2): "2_1", (2, 2): "2_2", (1, 2): "2_3", (2, 1): "2_4", (1, 1): "1"}
_MERGED = {**_FRESH, (0, 0): "2_-1", (1, 1): "2_5"}
# among labels with equal (zeta, xi): 1 above 2_5, 2_-1 above 0
_TIE_RANK = {CHI_CODE["0"]: 0, CHI_CODE["2_-1"]: 1, CHI_CODE["2_5"]: 0, CHI_CODE["1"]: 1}
DIMINISH_TYPES = frozenset(CHI_CODE[f"2_{i}"] for i in range(1, 6))
RIGHT_EXIT_TYPES = frozenset(CHI_CODE[f"2_{i}"] for i in range(1, 4))


def chi_encode(zeta: int, xi: int, merged: bool = False) -> int:
    table = _MERGED if merged else _FRESH
    if (zeta, xi) not in table:
        raise ValueError(f"(zeta, xi) = {(zeta, xi)} is not attainable")
    return CHI_CODE[table[(zeta, xi)]]


def chi_decode(code: int) -> tuple[int, int]:
    return _CHI_PAIR[CHI_NAMES[code]]


def _pair_value(lo, hi):
    # disagreement value of an ordered pair lo <= hi of occupations
    return hi if lo == hi else 2


@dataclass
class ChiState:
    """Four coupled open ASEPs and the species labels read off from them.

    Rows of ``cfgs``: minimal process (alpha, beta', gamma, delta'), maximal
    process (alpha', beta, gamma', delta), and eta1 >= eta2 with (alpha, beta,
    gamma, delta).  zeta is the disagreement of rows 0/1, xi of rows 2/3.
    """

    cfgs: np.ndarray
    labels: np.ndarray
    params: tuple  # (inner, outer) BoundaryParams
    exits_left: list = field(default_factory=list)  # (t, label code), oldest first
    exits_right: list = field(default_factory=list)
    m: int = 0

    @property
    def n(self) -> int:
        return self.cfgs.shape[1]

    def pair(self, x: int) -> tuple[int, int]:
        c = self.cfgs
        return _pair_value(c[0, x], c[1, x]), _pair_value(c[3, x], c[2, x])

    def pairs(self):
        return [self.pair(x) for x in range(self.n)]

    def names(self):
        return [CHI_NAMES[c] for c in self.labels]

    def consistent(self) -> bool:
        """Labels decode to the (zeta, xi) of the underlying processes and no (0,1)/(1,0) occurs."""
        c = self.cfgs
        if np.any(c[0] > c[1]) or np.any(c[3] > c[2]):
            return False
        for x in range(self.n):
            z, xi = self.pair(x)
            if (z, xi) in ((0, 1), (1, 0)) or chi_decode(int(self.labels[x])) != (z, xi):
                return False
        return True


def chi_params(inner: BoundaryParams, outer: BoundaryParams):
    """The four parameter sets; ``outer`` holds (alpha', beta', gamma', delta')."""
    if inner.q != outer.q or inner.n_sites != outer.n_sites:
        raise ValueError("inner and outer parameters must share q and N")
    if not (outer.alpha >= inner.alpha and outer.beta >= inner.beta
            and outer.gamma <= inner.gamma and outer.delta <= inner.delta):
        raise ValueError("need alpha' >= alpha, beta' >= beta, gamma' <= gamma, delta' <= delta")
    lo = BoundaryParams(inner.alpha, outer.beta, inner.gamma, outer.delta, inner.q, inner.n_sites)
    hi = BoundaryParams(outer.alpha, inner.beta, outer.gamma, inner.delta, inner.q, inner.n_sites)
    return [lo, hi, inner, inner]


def chi_init(zeta_lo, zeta_hi, eta1, eta2, inner: BoundaryParams, outer: BoundaryParams) -> ChiState:
    cfgs = np.array([zeta_lo, zeta_hi, eta1, eta2], dtype=np.int8)
    if np.any(cfgs[0] > cfgs[1]) or np.any(cfgs[3] > cfgs[2]):
        raise ValueError("need zeta_lo <= zeta_hi and eta2 <= eta1")
    if np.any(cfgs[3] > cfgs[1]) or np.any(cfgs[0] > cfgs[2]):
        raise ValueError("need eta2 <= zeta_hi and zeta_lo <= eta1")
    st = ChiState(cfgs, np.zeros(cfgs.shape[1], dtype=np.int8), (inner, outer))
    st.labels[:] = [chi_encode(*st.pair(x)) for x in range(st.n)]
    return st


def _relabel_boundary(st: ChiState, x: int, old_pair, old_label, full: bool):
    new_pair = st.pair(x)
    if full or new_pair != old_pair:
        st.labels[x] = chi_encode(*new_pair)
    return old_label, int(st.labels[x])


def chi_step(st: ChiState, ev: Event, slots: SlotMap | None = None) -> ChiState:
    """Apply one shared event to the four processes and update the labels (in place)."""
    plist = chi_params(*st.params)
    if slots is None:
        slots = SlotMap.build(OpenSegment(st.n), plist)
    slot = ev.slot_index(slots)
    accept = slots.accept_matrix(plist)
    ledgers = np.zeros((4, st.n + 1), dtype=np.int64)
    blocked = np.zeros(max(slots.n_edges, 1), dtype=np.bool_)
    if slot < slots.n_edges:
        x = slot
        pa, pb = st.pair(x), st.pair(x + 1)
        a, b = int(st.labels[x]), int(st.labels[x + 1])
        for r in range(4):
            K.step_binary(st.cfgs, r, slot, ev.u, slots.n_edges, slots.threshold, accept,
                          slots.left, slots.right, ledgers, blocked)
        na, nb = st.pair(x), st.pair(x + 1)
        if (na, nb) == (pa, pb):
            if pa == pb and a != b:
                # equal pairs: order by tie rank, higher to the right at rate 1
                hi_right = ev.u <= slots.threshold
                ra, rb = _TIE_RANK[a], _TIE_RANK[b]
                if (hi_right and ra > rb) or (not hi_right and ra < rb):
                    st.labels[x], st.labels[x + 1] = b, a
        elif (na, nb) == (pb, pa):
            st.labels[x], st.labels[x + 1] = b, a
        else:
            st.labels[x] = chi_encode(*na, merged=True)
            st.labels[x + 1] = chi_encode(*nb, merged=True)
        return st
    j = slot - slots.n_edges
    if slots.brates[j] == 0:
        return st
    x = 0 if j < 2 else st.n - 1
    old_pair, old_label = st.pair(x), int(st.labels[x])
    for r in range(4):
        K.step_binary(st.cfgs, r, slot, ev.u, slots.n_edges, slots.threshold, accept,
                      slots.left, slots.right, ledgers, blocked)
    # the "full" branch is the one where every process applies the move
    full = bool(ev.u <= accept[:, j].min())
    old, new = _relabel_boundary(st, x, old_pair, old_label, full)
    if x == 0 and old in DIMINISH_TYPES and new not in DIMINISH_TYPES:
        st.exits_left.append((ev.t, old))
    elif x == st.n - 1 and old in RIGHT_EXIT_TYPES and new not in DIMINISH_TYPES:
        st.exits_right.append((ev.t, old))
        st.m -= 1
    return st


def run_chi(st: ChiState, stream: EventStream, horizon: float, check=None) -> ChiState:
    """Event-by-event evolution (Python speed; meant for small systems and checks)."""
    t_end = stream.t + horizon
    slots = stream.slots
    while True:
        buf, pos = stream.buffer()
        t_next = K.event_time(stream.t, buf[pos, 0], slots.total)
        if t_next > t_end:
            break
        ev = stream.next_event()
        chi_step(st, ev, slots)
        if check is not None:
            check(st, ev)
    return st


def chi_stream(st: ChiState, seed: int, replica: int = 0) -> EventStream:
    return EventStream(SlotMap.build(OpenSegment(st.n), chi_params(*st.params)), seed, replica)


# -- diminished projection ---------------------------------------------------------------


@dataclass
class DiminishedState:
    """Binary configuration on Z in the class A_m: empty left of ``offset``, the word, then full."""

    word: np.ndarray
    offset: int  # site of word[0]
    m: int
    v: np.ndarray

    def value(self, x: int) -> int:
        i = x - self.offset
        if i < 0:
            return 0
        if i >= self.word.size:
            return 1
        return int(self.word[i])

    def window(self, lo: int, hi: int):
        sites = np.arange(lo, hi + 1)
        return sites, np.array([self.value(x) for x in sites], dtype=np.int8)

    def balance(self, n: int) -> int:
        """holes right of n minus particles at or left of n (0 exactly on A_n)."""
        lo = min(self.offset, n) - 1
        hi = max(self.offset + self.word.size, n + 1)
        sites, eta = self.window(lo, hi)
        return int(np.sum(1 - eta[sites > n]) - np.sum(eta[sites <= n]))

    def in_class(self) -> bool:
        return self.balance(self.m) == 0


def diminish(st: ChiState) -> DiminishedState:
    """Project a partially ordered state (with its recorded exits) to a blocking-class configuration."""
    # most recent left exit is leftmost
    v = np.array([1 if code in (CHI_CODE["2_4"], CHI_CODE["2_5"]) else 0
                  for _, code in reversed(st.exits_left)], dtype=np.int8)
    kept = [c for c in st.labels if c in DIMINISH_TYPES]
    body = np.array([1 if c in (CHI_CODE["2_4"], CHI_CODE["2_5"]) else 0 for c in kept], dtype=np.int8)
    word = np.concatenate([v, body]).astype(np.int8)
    zeros = int(np.sum(word == 0))
    return DiminishedState(word, st.m + 1 - zeros, st.m, v)
