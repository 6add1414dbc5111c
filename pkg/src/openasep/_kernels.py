# Compiled inner loops.  Every kernel consumes rows (u_time, u_slot, u_mark)
# of a uniform buffer, so all of them read the same event sequence for a
# given (seed, replica).
import math

import numpy as np
from numba import njit

LEFT_IN, LEFT_OUT, RIGHT_OUT, RIGHT_IN = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def decode_slot(w, n_edges, edge_rate, brates, total):
    v = w * total
    edge_mass = n_edges * edge_rate
    if v < edge_mass:
        e = int(v / edge_rate)
        if e >= n_edges:
            e = n_edges - 1
        return e
    v -= edge_mass
    acc = 0.0
    last = -1
    for j in range(4):
        if brates[j] > 0.0:
            last = j
            acc += brates[j]
            if v < acc:
                return n_edges + j
    if last < 0:
        return n_edges - 1
    return n_edges + last


@njit(cache=True, nogil=True)
def event_time(t, u_time, total):
    return t - math.log1p(-u_time) / total


@njit(cache=True, nogil=True)
def step_binary(cfgs, r, slot, u, n_edges, thr, accept, left, right, ledgers, blocked):
    """Apply one event to replica ``r`` of a binary ensemble; returns 1 if it changed."""
    if slot < n_edges:
        x = slot
        if blocked[x]:
            return 0
        if u <= thr:
            if cfgs[r, x] == 1 and cfgs[r, x + 1] == 0:
                cfgs[r, x] = 0
                cfgs[r, x + 1] = 1
                ledgers[r, x + 1] += 1
                return 1
        else:
            if cfgs[r, x] == 0 and cfgs[r, x + 1] == 1:
                cfgs[r, x] = 1
                cfgs[r, x + 1] = 0
                ledgers[r, x + 1] -= 1
                return 1
        return 0
    j = slot - n_edges
    if u > accept[r, j]:
        return 0
    if j == LEFT_IN:
        if cfgs[r, left] == 0:
            cfgs[r, left] = 1
            ledgers[r, left] += 1
            return 1
    elif j == LEFT_OUT:
        if cfgs[r, left] == 1:
            cfgs[r, left] = 0
            ledgers[r, left] -= 1
            return 1
    elif j == RIGHT_OUT:
        if cfgs[r, right] == 1:
            cfgs[r, right] = 0
            ledgers[r, right + 1] += 1
            return 1
    else:
        if cfgs[r, right] == 0:
            cfgs[r, right] = 1
            ledgers[r, right + 1] -= 1
            return 1
    return 0


@njit(cache=True, nogil=True)
def run_binary(cfgs, U, start, t, horizon, n_edges, edge_rate, brates, total, thr,
               accept, left, right, ledgers, blocked, max_events):
    """Advance k coupled replicas through events with time <= horizon.

    Returns (next_row, time_of_last_event, events_applied, hit_budget).
    """
    k = cfgs.shape[0]
    i = start
    m = U.shape[0]
    applied = 0
    while i < m:
        tn = event_time(t, U[i, 0], total)
        if tn > horizon:
            return i, t, applied, False
        if applied >= max_events:
            return i, t, applied, True
        slot = decode_slot(U[i, 1], n_edges, edge_rate, brates, total)
        u = U[i, 2]
        for r in range(k):
            step_binary(cfgs, r, slot, u, n_edges, thr, accept, left, right, ledgers, blocked)
        t = tn
        applied += 1
        i += 1
    return i, t, applied, False


@njit(cache=True, nogil=True)
def _mismatch(cfgs, x):
    return 1 if cfgs[0, x] != cfgs[1, x] else 0


@njit(cache=True, nogil=True)
def run_until_coalesced(cfgs, U, start, t, cap, n_edges, edge_rate, brates, total, thr,
                        accept, left, right, ledgers, blocked, diff):
    """Two replicas; stop right after the event that makes them identical.

    Returns (next_row, time, events_applied, diff).
    """
    i = start
    m = U.shape[0]
    applied = 0
    while i < m and diff > 0:
        tn = event_time(t, U[i, 0], total)
        if tn > cap:
            return i, t, applied, diff
        slot = decode_slot(U[i, 1], n_edges, edge_rate, brates, total)
        u = U[i, 2]
        if slot < n_edges:
            x0 = slot
            x1 = slot + 1
        else:
            j = slot - n_edges
            x0 = left if j < 2 else right
            x1 = x0
        before = _mismatch(cfgs, x0)
        if x1 != x0:
            before += _mismatch(cfgs, x1)
        step_binary(cfgs, 0, slot, u, n_edges, thr, accept, left, right, ledgers, blocked)
        step_binary(cfgs, 1, slot, u, n_edges, thr, accept, left, right, ledgers, blocked)
        after = _mismatch(cfgs, x0)
        if x1 != x0:
            after += _mismatch(cfgs, x1)
        diff += after - before
        t = tn
        applied += 1
        i += 1
    return i, t, applied, diff


@njit(cache=True, nogil=True)
def step_species(lab, slot, u, n_edges, thr, accept, left, right, top, bottom):
    """Sort an edge by rank (higher rank is higher priority); boundaries overwrite.

    Returns the pair of indices whose labels were touched, or (-1, -1).
    """
    if slot < n_edges:
        x = slot
        a = lab[x]
        b = lab[x + 1]
        if u <= thr:
            if a > b:
                lab[x] = b
                lab[x + 1] = a
                return x, x + 1
        else:
            if a < b:
                lab[x] = b
                lab[x + 1] = a
                return x, x + 1
        return -1, -1
    j = slot - n_edges
    if u > accept[j]:
        return -1, -1
    if j == LEFT_IN:
        lab[left] = top
        return left, left
    if j == LEFT_OUT:
        lab[left] = bottom
        return left, left
    if j == RIGHT_OUT:
        lab[right] = bottom
        return right, right
    lab[right] = top
    return right, right


@njit(cache=True, nogil=True)
def run_species(lab, U, start, t, horizon, n_edges, edge_rate, brates, total, thr,
                accept, left, right, top, bottom, max_events):
    i = start
    m = U.shape[0]
    applied = 0
    while i < m:
        tn = event_time(t, U[i, 0], total)
        if tn > horizon:
            return i, t, applied, False
        if applied >= max_events:
            return i, t, applied, True
        slot = decode_slot(U[i, 1], n_edges, edge_rate, brates, total)
        step_species(lab, slot, U[i, 2], n_edges, thr, accept, left, right, top, bottom)
        t = tn
        applied += 1
        i += 1
    return i, t, applied, False


@njit(cache=True, nogil=True)
def run_tracked(lab, U, start, t, horizon, n_edges, edge_rate, brates, total, thr, accept,
                left, right, top, bottom, pos, tracked, lo, hi):
    """Multi-species run following one label; stops early if it reaches lo or hi.

    Returns (next_row, time, events_applied, position, escaped).
    """
    i = start
    m = U.shape[0]
    applied = 0
    while i < m:
        tn = event_time(t, U[i, 0], total)
        if tn > horizon:
            return i, t, applied, pos, False
        slot = decode_slot(U[i, 1], n_edges, edge_rate, brates, total)
        a, b = step_species(lab, slot, U[i, 2], n_edges, thr, accept, left, right, top, bottom)
        if a >= 0 and a != b:
            if lab[a] == tracked:
                pos = a
            elif lab[b] == tracked:
                pos = b
        t = tn
        applied += 1
        i += 1
        if pos <= lo or pos >= hi:
            return i, t, applied, pos, True
    return i, t, applied, pos, False


# Extended disagreement labels; the integer code is the rank in the order
# 1 > A' > A > B > B' > 0.
X0, XBP, XB, XA, XAP, X1 = 0, 1, 2, 3, 4, 5


@njit(cache=True, nogil=True)
def _proj_z(c):
    return 1 if (c == XA or c == XAP or c == X1) else 0


@njit(cache=True, nogil=True)
def _proj_n(c):
    return 1 if (c == XB or c == XAP or c == X1) else 0


@njit(cache=True, nogil=True)
def step_extended(lab, slot, u, n_edges, thr, site1, alpha_acc, gamma_acc, rank, counters):
    """One event of the extended disagreement process on an integer window.

    ``site1`` is the array index of half-line site 1; the edge {0,1} has
    index site1 - 1.  ``rank`` maps label codes to sorting priority (normal
    or reversed order).  ``counters``: [J_Z(1), J_N(1), A' created, B' created].
    """
    if slot < n_edges:
        x = slot
        a = lab[x]
        b = lab[x + 1]
        if x == site1 - 1:
            # edge {0,1}: only the Z-marginal has this edge
            if u <= thr:
                if a == XA:
                    if b == X0 or b == XBP:
                        lab[x] = X0
                        lab[x + 1] = XA
                        counters[0] += 1
                    elif b == XB:
                        lab[x] = X0
                        lab[x + 1] = X1
                        counters[0] += 1
            else:
                if a == X0:
                    if b == XAP or b == X1:
                        lab[x] = XA
                        lab[x + 1] = XB
                        counters[0] -= 1
                    elif b == XA:
                        lab[x] = XA
                        lab[x + 1] = X0
                        counters[0] -= 1
            return
        if (a == XA and b == XB) or (a == XB and b == XA):
            if u <= thr:
                lab[x] = XBP
                lab[x + 1] = XAP
            else:
                lab[x] = XAP
                lab[x + 1] = XBP
            counters[2] += 1
            counters[3] += 1
            return
        if u <= thr:
            if rank[a] > rank[b]:
                lab[x] = b
                lab[x + 1] = a
        else:
            if rank[a] < rank[b]:
                lab[x] = b
                lab[x + 1] = a
        return
    j = slot - n_edges
    c = lab[site1]
    if j == LEFT_IN:
        if u > alpha_acc:
            return
        if c == X0 or c == XBP:
            lab[site1] = XB
            counters[1] += 1
        elif c == XA or c == XAP:
            lab[site1] = X1
            if c == XA:
                counters[1] += 1
    elif j == LEFT_OUT:
        if u > gamma_acc:
            return
        if c == XB or c == XBP:
            lab[site1] = X0
            if c == XB:
                counters[1] -= 1
        elif c == XAP or c == X1:
            lab[site1] = XA
            counters[1] -= 1


@njit(cache=True, nogil=True)
def run_extended(lab, U, start, t, horizon, n_edges, edge_rate, brates, total, thr,
                 site1, alpha_acc, gamma_acc, rank, counters):
    i = start
    m = U.shape[0]
    applied = 0
    while i < m:
        tn = event_time(t, U[i, 0], total)
        if tn > horizon:
            return i, t, applied
        slot = decode_slot(U[i, 1], n_edges, edge_rate, brates, total)
        step_extended(lab, slot, U[i, 2], n_edges, thr, site1, alpha_acc, gamma_acc, rank, counters)
        t = tn
        applied += 1
        i += 1
    return i, t, applied
