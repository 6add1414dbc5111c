"""Event-driven simulation of exclusion processes.

One global exponential clock of total rate ``R`` drives everything: each
event picks a slot (a bulk edge, or one of the four boundary moves) in
proportion to its rate and carries a uniform mark ``u``.  Several replicas
fed the same events are coupled in the basic-coupling sense, so the same
stream machinery serves single runs and every coupled construction.

Site labels follow the lattice: an open segment has sites ``1..N``, a
half-line window ``1..W`` (open at site 1 only), an integer window
``-L_left..L_right`` (no reservoirs, outermost sites simply have no clock
beyond them).  Ledgers are per bond: entry ``b`` counts the net number of
particles that crossed into array position ``b`` from the left, so entry 0
is the left reservoir bond and entry ``size`` the right one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .params import BoundaryParams

SLOT_NAMES = ("left-in", "left-out", "right-out", "right-in")
DEFAULT_CHUNK = 1 << 16


class EventBudgetExceeded(OverflowError):
    """Raised when a run would apply more events than allowed; ``.record`` holds the partial run."""

    def __init__(self, msg, record=None):
        super().__init__(msg)
        self.record = record


# -- lattices -----------------------------------------------------------------


@dataclass(frozen=True)
class Lattice:
    kind: str
    size: int
    first_site: int
    left_open: bool
    right_open: bool

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("window size must be positive")

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.first_site, self.first_site + self.size)

    @property
    def last_site(self) -> int:
        return self.first_site + self.size - 1

    def index(self, x: int) -> int:
        i = x - self.first_site
        if not 0 <= i < self.size:
            raise IndexError(f"site {x} outside {self}")
        return i

    def site(self, i: int) -> int:
        return self.first_site + i

    @property
    def n_edges(self) -> int:
        return self.size - 1


def OpenSegment(n: int) -> Lattice:
    return Lattice("open", int(n), 1, True, True)


def HalfLineWindow(w: int) -> Lattice:
    return Lattice("halfline", int(w), 1, True, False)


def IntegerWindow(l_left: int, l_right: int) -> Lattice:
    if l_left < 0 or l_right < 1:
        raise ValueError("an integer window must contain sites 0 and 1")
    return Lattice("integer", int(l_left) + int(l_right) + 1, -int(l_left), False, False)


def ReservoirWindow(w: int) -> Lattice:
    """Sites -w..w with both ends coupled to reservoirs."""
    return Lattice("reservoir", 2 * int(w) + 1, -int(w), True, True)


# -- slot map and events ------------------------------------------------------


@dataclass(frozen=True)
class SlotMap:
    """Rates of all slots shared by a coupled ensemble."""

    lattice: Lattice
    q: float
    brates: tuple  # max over replicas, (left-in, left-out, right-out, right-in)

    @classmethod
    def build(cls, lattice: Lattice, params) -> "SlotMap":
        if isinstance(params, BoundaryParams):
            params = [params]
        qs = {p.q for p in params}
        if len(qs) != 1:
            raise ValueError(f"mismatched slot maps: replicas disagree on q ({sorted(qs)})")
        mask = (lattice.left_open, lattice.left_open, lattice.right_open, lattice.right_open)
        br = tuple(max(p.boundary_rates[j] for p in params) if mask[j] else 0.0 for j in range(4))
        return cls(lattice, qs.pop(), br)

    @property
    def n_edges(self) -> int:
        return self.lattice.n_edges

    @property
    def edge_rate(self) -> float:
        return 1.0 + self.q

    @property
    def total(self) -> float:
        return self.n_edges * self.edge_rate + sum(self.brates)

    @property
    def threshold(self) -> float:
        return 1.0 / (1.0 + self.q)

    @property
    def brates_array(self) -> np.ndarray:
        return np.array(self.brates, dtype=np.float64)

    @property
    def left(self) -> int:
        return 0

    @property
    def right(self) -> int:
        return self.lattice.size - 1

    def accept(self, p: BoundaryParams) -> np.ndarray:
        """Thinning ratios: a replica with smaller boundary rate applies a slot iff u <= rate/max."""
        out = np.ones(4)
        for j, r in enumerate(p.boundary_rates):
            if self.brates[j] > 0:
                out[j] = r / self.brates[j]
        return out

    def accept_matrix(self, params) -> np.ndarray:
        return np.vstack([self.accept(p) for p in params])

    def kernel_args(self):
        return self.n_edges, self.edge_rate, self.brates_array, self.total, self.threshold


@dataclass(frozen=True)
class Event:
    t: float
    kind: str  # "edge" or one of SLOT_NAMES
    u: float
    site: int | None = None  # left endpoint label for edges

    def slot_index(self, slots: SlotMap) -> int:
        if self.kind == "edge":
            i = slots.lattice.index(self.site)
            if i >= slots.n_edges:
                raise IndexError(f"edge {{{self.site},{self.site + 1}}} outside the lattice")
            return i
        return slots.n_edges + SLOT_NAMES.index(self.kind)


def event_from_slot(t: float, slot: int, u: float, slots: SlotMap) -> Event:
    if slot < slots.n_edges:
        return Event(t, "edge", u, slots.lattice.site(slot))
    return Event(t, SLOT_NAMES[slot - slots.n_edges], u)


class EventStream:
    """Deterministic event sequence for ``(master_seed, replica_index)``.

    Uniform triples are drawn in blocks; compiled kernels read the block
    directly and report how many rows they consumed.  An event beyond the
    current horizon is left in place, so resuming reproduces it exactly.
    A second generator (``aux``) spawned from the same seed serves initial
    conditions without disturbing the events.
    """

    def __init__(self, slots: SlotMap, master_seed: int = 0, replica_index: int = 0,
                 chunk: int = DEFAULT_CHUNK):
        if master_seed < 0 or replica_index < 0:
            raise ValueError("seed and replica index must be nonnegative")
        self.slots = slots
        self.master_seed = int(master_seed)
        self.replica_index = int(replica_index)
        ev, aux = np.random.SeedSequence([self.master_seed, self.replica_index]).spawn(2)
        self._rng = np.random.Generator(np.random.PCG64(ev))
        self.aux = np.random.Generator(np.random.PCG64(aux))
        self.chunk = int(chunk)
        self._buf = np.empty((0, 3))
        self._pos = 0
        self.t = 0.0
        self.consumed = 0

    @classmethod
    def for_params(cls, lattice: Lattice, params, master_seed=0, replica_index=0, **kw):
        return cls(SlotMap.build(lattice, params), master_seed, replica_index, **kw)

    def buffer(self):
        if self._pos >= self._buf.shape[0]:
            self._buf = self._rng.random((self.chunk, 3))
            self._pos = 0
        return self._buf, self._pos

    def advance(self, new_pos: int, t: float):
        self.consumed += new_pos - self._pos
        self._pos = new_pos
        self.t = t

    def next_event(self) -> Event:
        buf, pos = self.buffer()
        s = self.slots
        row = buf[pos]
        t = K.event_time(self.t, row[0], s.total)
        slot = K.decode_slot(row[1], s.n_edges, s.edge_rate, s.brates_array, s.total)
        self.advance(pos + 1, t)
        return event_from_slot(t, int(slot), float(row[2]), s)

    def drive(self, kernel, max_events=None):
        """Repeatedly call ``kernel(buf, pos, t, budget)`` until it stops short of the block end.

        ``kernel`` returns ``(next_row, t, applied, stop_flag, *extra)``;
        returns (total_applied, stop_flag, extra of the last call).
        """
        total = 0
        budget = np.iinfo(np.int64).max if max_events is None else int(max_events)
        while True:
            buf, pos = self.buffer()
            i, t, applied, flag, *extra = kernel(buf, pos, self.t, budget - total)
            self.advance(i, t)
            total += applied
            if i < buf.shape[0] or flag:
                return total, flag, extra


def next_event(stream: EventStream) -> Event:
    return stream.next_event()


def apply_event(cfg, ev: Event, p: BoundaryParams, lattice: Lattice | None = None,
                ledger=None) -> np.ndarray:
    """Return the configuration after ``ev`` (the input is not modified)."""
    cfg = np.array(cfg, dtype=np.int8)
    lattice = lattice or OpenSegment(len(cfg))
    if lattice.size != len(cfg):
        raise ValueError("configuration length does not match the lattice")
    slots = SlotMap.build(lattice, p)
    led = np.zeros((1, lattice.size + 1), dtype=np.int64)
    slot = ev.slot_index(slots)
    if slot >= slots.n_edges and slots.brates[slot - slots.n_edges] == 0:
        return cfg
    cfgs = cfg[None, :]
    K.step_binary(cfgs, 0, slot, ev.u, slots.n_edges, slots.threshold, slots.accept_matrix([p]),
                  slots.left, slots.right, led, np.zeros(max(slots.n_edges, 1), dtype=np.bool_))
    if ledger is not None:
        ledger += led[0]
    return cfgs[0]


# -- trajectories -------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    lattice: Lattice
    times: np.ndarray
    snapshots: np.ndarray  # (len(times), size), or (len(times), k, size) for ensembles
    final: np.ndarray
    ledger: np.ndarray  # (size+1,) or (k, size+1)
    n_events: int
    t_last: float
    horizon: float
    wall_seconds: float = 0.0
    path_t: np.ndarray | None = None
    path_z: np.ndarray | None = None
    valid: bool = True
    seed: int = 0
    replica: int = 0
    extra: dict = field(default_factory=dict)

    def current(self, x: int) -> int:
        """Net crossings into site ``x`` from the left (ledger entry of bond (x-1, x))."""
        if x == self.lattice.last_site + 1:
            b = self.lattice.size
        else:
            b = self.lattice.index(x)
        return int(self.ledger[..., b]) if self.ledger.ndim == 1 else self.ledger[:, b].copy()


def _check_horizon(horizon, schedule):
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    sched = np.sort(np.asarray(list(schedule) if schedule is not None else [], dtype=float))
    if sched.size and (sched[0] < 0 or sched[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    return sched


def _blocked_mask(slots: SlotMap, blocked=None) -> np.ndarray:
    mask = np.zeros(max(slots.n_edges, 1), dtype=np.bool_)
    if blocked is not None:
        for x in blocked:
            mask[slots.lattice.index(x)] = True
    return mask


def run_ensemble(initials, params_list, horizon: float, stream: EventStream, schedule=None,
                 event_budget: int | None = None, censor=None) -> TrajectoryRecord:
    """Run k replicas through the shared stream for ``horizon`` time units.

    ``censor`` (optional) has ``breakpoints`` and ``blocked(t)``; edges it
    blocks are skipped (see :mod:`openasep.coupling`).  Snapshot times are
    relative to the stream's current time.
    """
    slots = stream.slots
    lat = slots.lattice
    cfgs = np.array(initials, dtype=np.int8, ndmin=2).copy()
    if cfgs.shape[1] != lat.size:
        raise ValueError("configuration length does not match the lattice")
    if len(params_list) != cfgs.shape[0]:
        raise ValueError("one BoundaryParams per replica is required")
    if SlotMap.build(lat, params_list) != slots:
        raise ValueError("mismatched slot maps: stream was built for other rates")
    sched = _check_horizon(horizon, schedule)
    accept = slots.accept_matrix(params_list)
    ledgers = np.zeros((cfgs.shape[0], lat.size + 1), dtype=np.int64)
    n_edges, edge_rate, brates, total, thr = slots.kernel_args()
    snaps = []
    n_events = 0
    t0 = time.perf_counter()
    s0 = stream.t

    stops = [(s0 + s, True) for s in sched] + [(s0 + horizon, False)]
    if censor is not None:
        stops += [(s0 + b, False) for b in censor.breakpoints if 0 < b < horizon]
    stops.sort(key=lambda st: (st[0], not st[1]))
    seg_start = 0.0
    for t_stop, is_snap in stops:
        blocked = _blocked_mask(slots, None if censor is None else censor.blocked(seg_start))
        remaining = None if event_budget is None else event_budget - n_events

        def kern(buf, pos, t, budget, t_stop=t_stop, blocked=blocked):
            return K.run_binary(cfgs, buf, pos, t, t_stop, n_edges, edge_rate, brates, total, thr,
                                accept, slots.left, slots.right, ledgers, blocked, budget)

        applied, hit, _ = stream.drive(kern, remaining)
        n_events += applied
        if hit:
            rec = _record(lat, sched[: len(snaps)], snaps, cfgs, ledgers, n_events, stream, horizon, t0)
            rec.valid = False
            raise EventBudgetExceeded(f"event budget {event_budget} exhausted at t={stream.t:.6g}", rec)
        if is_snap:
            snaps.append(cfgs.copy())
        seg_start = t_stop - s0
    return _record(lat, sched, snaps, cfgs, ledgers, n_events, stream, horizon, t0)


def _record(lat, sched, snaps, cfgs, ledgers, n_events, stream, horizon, t0):
    return TrajectoryRecord(
        lattice=lat,
        times=np.asarray(sched, dtype=float),
        snapshots=np.array(snaps, dtype=np.int8).reshape(len(snaps), *cfgs.shape),
        final=cfgs.copy(),
        ledger=ledgers.copy(),
        n_events=n_events,
        t_last=stream.t,
        horizon=horizon,
        wall_seconds=time.perf_counter() - t0,
        seed=stream.master_seed,
        replica=stream.replica_index,
    )


def _squeeze(rec: TrajectoryRecord) -> TrajectoryRecord:
    rec.final = rec.final[0]
    rec.ledger = rec.ledger[0]
    rec.snapshots = rec.snapshots[:, 0, :]
    return rec


def run(initial, p: BoundaryParams, horizon: float, schedule=None, stream: EventStream | None = None,
        lattice: Lattice | None = None, seed: int = 0, replica: int = 0,
        event_budget: int | None = None) -> TrajectoryRecord:
    """Single trajectory.  Without an explicit stream one is derived from (seed, replica)."""
    initial = np.asarray(initial, dtype=np.int8)
    if stream is None:
        lattice = lattice or OpenSegment(len(initial))
        stream = EventStream.for_params(lattice, p, seed, replica)
    try:
        rec = run_ensemble([initial], [p], horizon, stream, schedule, event_budget)
    except EventBudgetExceeded as e:
        _squeeze(e.record)
        raise
    return _squeeze(rec)


def interior_conservation_residual(initial, rec: TrajectoryRecord) -> int:
    """max |eta_t(x) - eta_0(x) - (J(x) - J(x+1))| over all sites (0 always)."""
    d = rec.final.astype(np.int64) - np.asarray(initial, dtype=np.int64)
    flow = rec.ledger[..., :-1] - rec.ledger[..., 1:]
    return int(np.abs(d - flow).max())


# -- initial conditions ---------------------------------------------------------


def _rng_of(stream):
    if isinstance(stream, EventStream):
        return stream.aux
    if isinstance(stream, np.random.Generator):
        return stream
    return np.random.default_rng(stream)


def sample_bernoulli(lattice: Lattice | int, rho: float, stream) -> np.ndarray:
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    n = lattice if isinstance(lattice, int) else lattice.size
    return (_rng_of(stream).random(n) < rho).astype(np.int8)


def tilted_marginal(x, q: float):
    """Occupation probability q^-x / (1 + q^-x) = 1 / (1 + q^x) of the tilted product law."""
    x = np.asarray(x, dtype=float)
    return 1.0 / (1.0 + np.power(q, x))


def blocking_window(q: float, tol: float = 1e-12) -> int:
    """Half-width W so the mass outside [n-W, n+W] deviating from the ground state is below tol."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    # sum_{k>W} q^k / (1+q^k) <= q^(W+1)/(1-q), counted on both sides
    return max(1, math.ceil(math.log(tol * (1.0 - q) / 2.0) / math.log(q)))


def ground_state(n: int, sites) -> np.ndarray:
    return (np.asarray(sites) > n).astype(np.int8)


def in_class(eta, sites, n: int, outside="ground") -> bool:
    """Balance: holes right of n equal particles at or left of n (window padded by the ground state)."""
    eta = np.asarray(eta)
    sites = np.asarray(sites)
    holes = int(np.sum(1 - eta[sites > n]))
    parts = int(np.sum(eta[sites <= n]))
    return holes == parts


def sample_blocking(n: int, q: float, W: int | None, stream, tol: float = 1e-12,
                    max_tries: int = 100_000):
    """Draw from the blocking measure of class n restricted to the window [n-W, n+W].

    The conditional law is a shift of the class-0 law, so we sample the
    tilted product law around 0 and translate.  Returns (sites, eta).
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if W is None:
        W = blocking_window(q, tol)
    rel = np.arange(-W, W + 1)
    probs = tilted_marginal(rel, q)
    rng = _rng_of(stream)
    for _ in range(max_tries):
        eta = (rng.random(rel.size) < probs).astype(np.int8)
        if in_class(eta, rel, 0):
            return rel + n, eta
    raise RuntimeError(f"rejection budget {max_tries} exhausted; increase W or max_tries")


# -- multi-species ----------------------------------------------------------------


def _ranks(order):
    order = list(order)
    if len(set(order)) != len(order):
        raise ValueError("alphabet entries must be distinct")
    k = len(order)
    return {lab: k - 1 - i for i, lab in enumerate(order)}


def species_step(labels, ev: Event, p: BoundaryParams, order, lattice: Lattice | None = None):
    """One event on a species configuration; ``order`` lists labels from highest priority down."""
    rank = _ranks(order)
    inv = {v: k for k, v in rank.items()}
    lab = np.array([rank[x] for x in labels], dtype=np.int8)
    lattice = lattice or OpenSegment(len(lab))
    slots = SlotMap.build(lattice, p)
    slot = ev.slot_index(slots)
    if slot >= slots.n_edges and slots.brates[slot - slots.n_edges] == 0:
        return list(labels)
    K.step_species(lab, slot, ev.u, slots.n_edges, slots.threshold, slots.accept(p),
                   slots.left, slots.right, len(order) - 1, 0)
    return [inv[int(v)] for v in lab]


def run_multispecies(initial, order, p: BoundaryParams, horizon: float, stream: EventStream,
                     event_budget: int | None = None) -> TrajectoryRecord:
    """Multi-species run under a total order; reservoirs inject the top label and remove to the bottom one."""
    rank = _ranks(order)
    inv = np.array([lab for lab, _ in sorted(rank.items(), key=lambda kv: kv[1])], dtype=object)
    lab = np.array([rank[x] for x in initial], dtype=np.int8)
    slots = stream.slots
    if slots.lattice.size != lab.size:
        raise ValueError("configuration length does not match the lattice")
    n_edges, edge_rate, brates, total, thr = slots.kernel_args()
    acc = slots.accept(p)
    t0 = time.perf_counter()

    t_end = stream.t + horizon

    def kern(buf, pos, t, budget):
        return K.run_species(lab, buf, pos, t, t_end, n_edges, edge_rate, brates, total, thr,
                             acc, slots.left, slots.right, len(order) - 1, 0, budget)

    applied, hit, _ = stream.drive(kern, event_budget)
    rec = TrajectoryRecord(slots.lattice, np.empty(0), np.empty((0, lab.size)), inv[lab],
                           np.zeros(lab.size + 1, dtype=np.int64), applied, stream.t, horizon,
                           time.perf_counter() - t0, seed=stream.master_seed, replica=stream.replica_index)
    if hit:
        rec.valid = False
        raise EventBudgetExceeded(f"event budget {event_budget} exhausted", rec)
    return rec


def second_class_guard(rho: float, q: float, horizon: float, guard: float = 5.0) -> int:
    """Half-width a window needs so boundary effects cannot reach the tracked particle.

    Characteristic drift (1-q)|1-2rho| t plus ``guard`` times the larger of the
    diffusive and the t^(2/3) fluctuation scales.
    """
    spread = max(2.0 * math.sqrt(horizon), horizon ** (2.0 / 3.0))
    return int(math.ceil((1.0 - q) * abs(1.0 - 2.0 * rho) * horizon + guard * (1.0 + q) * spread)) + 2


def reservoir_params(rho: float, q: float) -> BoundaryParams:
    """Liggett reservoirs at density rho on both ends: Bernoulli(rho) is stationary."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    return BoundaryParams(rho, 1.0 - rho, q * (1.0 - rho), q * rho, q)


@dataclass
class SecondClassPath:
    times: np.ndarray  # requested observation times
    z: np.ndarray  # position at each time (nan after escape)
    valid: bool
    half_width: int
    n_events: int
    seed: int = 0
    replica: int = 0


def track_second_class(rho: float, q: float, horizon: float, stream_seed: int = 0, replica: int = 0,
                       times=None, half_width: int | None = None, guard: float = 5.0,
                       chunk: int = DEFAULT_CHUNK) -> SecondClassPath:
    """Single second class particle at the origin in Bernoulli(rho) surroundings.

    The window [-W, W] is fed by density-rho reservoirs, so the environment
    stays Bernoulli(rho) and the ends do not launch shocks toward the origin.
    """
    if half_width is None:
        half_width = second_class_guard(rho, q, horizon, guard)
    lat = ReservoirWindow(half_width)
    p = reservoir_params(rho, q)
    stream = EventStream(SlotMap.build(lat, p), stream_seed, replica, chunk=chunk)
    stream_slots = stream.slots
    # ranks: hole 0, second class 1, first class 2
    lab = (2 * (stream.aux.random(lat.size) < rho)).astype(np.int8)
    origin = lat.index(0)
    lab[origin] = 1
    times = np.asarray([horizon] if times is None else times, dtype=float)
    z = np.full(times.size, np.nan)
    pos = origin
    n_edges, edge_rate, brates, total, thr = stream_slots.kernel_args()
    accept = stream_slots.accept(p)
    # the particle must stay clear of the frozen window ends
    lo, hi = 1, lat.size - 2
    valid = True
    n_events = 0
    for k, tk in enumerate(times):
        while True:
            buf, b0 = stream.buffer()
            i, t, applied, pos, esc = K.run_tracked(lab, buf, b0, stream.t, tk, n_edges, edge_rate, brates,
                                                    total, thr, accept, stream_slots.left,
                                                    stream_slots.right, 2, 0, pos, 1, lo, hi)
            stream.advance(i, t)
            n_events += applied
            if esc:
                valid = False
                break
            if i < buf.shape[0]:
                break
        if not valid:
            break
        z[k] = pos - origin
    return SecondClassPath(times, z, valid, half_width, n_events, stream_seed, replica)


# -- export -----------------------------------------------------------------------


def trajectory_rows(records):
    """Snapshot rows (replica, t, site, value) ordered by replica, time, site."""
    rows = []
    for r in sorted(records, key=lambda r: r.replica):
        sites = r.lattice.sites
        for t, snap in zip(r.times, r.snapshots):
            for x, v in zip(sites, snap):
                rows.append((r.replica, float(t), int(x), int(v)))
    return rows


def ledger_rows(records):
    """Ledger rows (replica, site, current): current into ``site`` from the left; last row is the right reservoir."""
    rows = []
    for r in sorted(records, key=lambda r: r.replica):
        for b, c in enumerate(r.ledger):
            rows.append((r.replica, r.lattice.first_site + b, int(c)))
    return rows


def export_trajectories(records, snapshot_path, ledger_path, meta=None):
    from . import tables

    tables.write(snapshot_path, ("replica", "t", "site", "value"), trajectory_rows(records), meta)
    tables.write(ledger_path, ("replica", "site", "current"), ledger_rows(records), meta)
