"""Compiled event loops for the particle system.

Two samplers of the same continuous-time chain:

* ``run_thinned`` keeps an indexable set of discordant bonds, so exchanges
  are drawn in O(1), and proposes flips at the uniform rate ``cmax`` per site,
  accepting with probability ``c / cmax``.
* ``run_tree`` keeps all ``2N`` elementary rates in a Fenwick tree and draws
  each event exactly in O(log N).
"""
from __future__ import annotations

import numpy as np
from numba import njit

CHECK_EVERY = 1_000_000


@njit(cache=True)
def window_code(eta, x, M, N):
    code = 0
    for i in range(-M, M + 1):
        code = (code << 1) | eta[(x + i) % N]
    return code


@njit(cache=True)
def _bond_update(eta, b, N, pos, lst, nd):
    disc = eta[b] != eta[(b + 1) % N]
    if disc and pos[b] < 0:
        pos[b] = nd
        lst[nd] = b
        nd += 1
    elif (not disc) and pos[b] >= 0:
        k = pos[b]
        last = lst[nd - 1]
        lst[k] = last
        pos[last] = k
        pos[b] = -1
        nd -= 1
    return nd


@njit(cache=True)
def _record(eta, cell, counts, out):
    out[:] = 0.0
    for x in range(eta.shape[0]):
        out[cell[x]] += eta[x]
    for j in range(out.shape[0]):
        out[j] /= counts[j]


@njit(cache=True)
def run_thinned(eta, table, M, bond_rate, do_flip, t_end, record_times, cell,
                counts, rng, hist, track_hist):
    """Advance ``eta`` in place up to ``t_end``.

    Returns ``(frames, events, flips, bookkeeping_error)``.
    """
    N = eta.shape[0]
    J = counts.shape[0]
    nrec = record_times.shape[0]
    frames = np.empty((nrec, J))
    pos = np.full(N, -1, np.int64)
    lst = np.empty(N, np.int64)
    nd = 0
    for b in range(N):
        nd = _bond_update(eta, b, N, pos, lst, nd)
    cmax = table.max() if do_flip else 0.0
    flip_total = N * cmax
    code = 0
    if track_hist:
        for x in range(N):
            code |= eta[x] << x
    t = 0.0
    r = 0
    events = 0
    flips = 0
    max_err = 0.0
    while True:
        ex_total = bond_rate * nd
        R = ex_total + flip_total
        if R <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential() / R
        while r < nrec and record_times[r] <= t_next and record_times[r] <= t_end:
            _record(eta, cell, counts, frames[r])
            r += 1
        if t_next > t_end:
            if track_hist:
                hist[code] += t_end - t
            break
        if track_hist:
            hist[code] += t_next - t
        t = t_next
        v = rng.random() * R
        if v < ex_total:
            k = int(v / bond_rate)
            if k >= nd:
                k = nd - 1
            x = lst[k]
            y = (x + 1) % N
            eta[x] = 1 - eta[x]
            eta[y] = 1 - eta[y]
            if track_hist:
                code ^= (1 << x) | (1 << y)
            nd = _bond_update(eta, (x - 1) % N, N, pos, lst, nd)
            nd = _bond_update(eta, y, N, pos, lst, nd)
        else:
            w = v - ex_total
            x = int(w / cmax)
            if x >= N:
                x = N - 1
            rem = w - x * cmax
            if rem < table[window_code(eta, x, M, N)]:
                eta[x] = 1 - eta[x]
                flips += 1
                if track_hist:
                    code ^= 1 << x
                nd = _bond_update(eta, (x - 1) % N, N, pos, lst, nd)
                nd = _bond_update(eta, x, N, pos, lst, nd)
        events += 1
        if events % CHECK_EVERY == 0:
            fresh = 0
            for b in range(N):
                if eta[b] != eta[(b + 1) % N]:
                    fresh += 1
            if fresh != nd:
                max_err = max(max_err, abs(fresh - nd) / max(fresh, 1))
    return frames, events, flips, max_err


@njit(cache=True)
def _fw_build(leaves, P):
    tree = np.zeros(P + 1)
    for i in range(leaves.shape[0]):
        tree[i + 1] = leaves[i]
    for i in range(1, P + 1):
        j = i + (i & -i)
        if j <= P:
            tree[j] += tree[i]
    return tree


@njit(cache=True)
def _fw_add(tree, i, delta, P):
    i += 1
    while i <= P:
        tree[i] += delta
        i += i & -i


@njit(cache=True)
def _fw_find(tree, v, P):
    pos = 0
    bit = P
    while bit > 0:
        nxt = pos + bit
        if nxt <= P and tree[nxt] <= v:
            pos = nxt
            v -= tree[nxt]
        bit >>= 1
    return pos


@njit(cache=True)
def _set_leaf(tree, leaves, i, value, P):
    delta = value - leaves[i]
    if delta != 0.0:
        leaves[i] = value
        _fw_add(tree, i, delta, P)


@njit(cache=True)
def _refresh_site(eta, x, M, N, table, do_flip, tree, leaves, P):
    if do_flip:
        _set_leaf(tree, leaves, N + x, table[window_code(eta, x, M, N)], P)


@njit(cache=True)
def _refresh_bond(eta, b, N, bond_rate, tree, leaves, P):
    val = bond_rate if eta[b] != eta[(b + 1) % N] else 0.0
    _set_leaf(tree, leaves, b, val, P)


@njit(cache=True)
def run_tree(eta, table, M, bond_rate, do_flip, t_end, record_times, cell,
             counts, rng, hist, track_hist):
    """Exact sampler over a Fenwick tree of bond and site rates."""
    N = eta.shape[0]
    J = counts.shape[0]
    nrec = record_times.shape[0]
    frames = np.empty((nrec, J))
    P = 1
    while P < 2 * N:
        P <<= 1
    leaves = np.zeros(P)
    for b in range(N):
        if eta[b] != eta[(b + 1) % N]:
            leaves[b] = bond_rate
    if do_flip:
        for x in range(N):
            leaves[N + x] = table[window_code(eta, x, M, N)]
    tree = _fw_build(leaves, P)
    code = 0
    if track_hist:
        for x in range(N):
            code |= eta[x] << x
    t = 0.0
    r = 0
    events = 0
    flips = 0
    max_err = 0.0
    while True:
        R = tree[P]
        if R <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential() / R
        while r < nrec and record_times[r] <= t_next and record_times[r] <= t_end:
            _record(eta, cell, counts, frames[r])
            r += 1
        if t_next > t_end:
            if track_hist:
                hist[code] += t_end - t
            break
        if track_hist:
            hist[code] += t_next - t
        t = t_next
        i = _fw_find(tree, rng.random() * R, P)
        while i >= 2 * N or leaves[i] <= 0.0:
            i = _fw_find(tree, rng.random() * R, P)
        if i < N:
            x = i
            y = (x + 1) % N
            eta[x] = 1 - eta[x]
            eta[y] = 1 - eta[y]
            if track_hist:
                code ^= (1 << x) | (1 << y)
            _refresh_bond(eta, (x - 1) % N, N, bond_rate, tree, leaves, P)
            _refresh_bond(eta, y, N, bond_rate, tree, leaves, P)
            for s in range(x - M, x + M + 2):
                _refresh_site(eta, s % N, M, N, table, do_flip, tree, leaves, P)
        else:
            x = i - N
            eta[x] = 1 - eta[x]
            flips += 1
            if track_hist:
                code ^= 1 << x
            _refresh_bond(eta, (x - 1) % N, N, bond_rate, tree, leaves, P)
            _refresh_bond(eta, x, N, bond_rate, tree, leaves, P)
            for s in range(x - M, x + M + 1):
                _refresh_site(eta, s % N, M, N, table, do_flip, tree, leaves, P)
        events += 1
        if events % CHECK_EVERY == 0:
            total = leaves.sum()
            err = abs(total - tree[P]) / max(total, 1e-300)
            if err > max_err:
                max_err = err
            tree = _fw_build(leaves, P)
    return frames, events, flips, max_err
