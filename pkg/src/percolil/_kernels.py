"""Compiled lattice kernels.

Sites of the box [-L, L]^d are stored by row-major index over offsets
``a_j = x_j + L`` in ``[0, W)``, ``W = 2L + 1``, first coordinate most
significant. Edge ``(x, x + e_j)`` lives at bit ``index(x)`` of plane ``j``
(little-endian bit order inside each byte). Direction ``2j`` is ``+e_j`` and
``2j + 1`` is ``-e_j``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def bit(planes, j, s):
    return (planes[j, s >> 3] >> (s & 7)) & 1


@njit(**_JIT)
def step_site(s, j, sign, strides, W, torus):
    """Neighbor of site ``s`` along ``sign * e_j``; -1 if it leaves a free box."""
    a = (s // strides[j]) % W
    if sign > 0:
        if a == W - 1:
            return s - (W - 1) * strides[j] if torus else -1
        return s + strides[j]
    if a == 0:
        return s + (W - 1) * strides[j] if torus else -1
    return s - strides[j]


@njit(**_JIT)
def edge_open(planes, s, direction, strides, W, torus):
    j = direction >> 1
    sign = 1 - 2 * (direction & 1)
    nbr = step_site(s, j, sign, strides, W, torus)
    if nbr < 0:
        return -1
    owner = s if sign > 0 else nbr
    if bit(planes, j, owner):
        return nbr
    return -1


@njit(**_JIT)
def _open_from(planes, s, direction, a, strides, W, torus):
    """Like ``edge_open`` with the offset ``a`` of ``s`` along the axis precomputed."""
    j = direction >> 1
    st = strides[j]
    if direction & 1 == 0:
        if a < W - 1:
            nbr = s + st
        elif torus:
            nbr = s - (W - 1) * st
        else:
            return -1
        return nbr if bit(planes, j, s) else -1
    if a > 0:
        nbr = s - st
    elif torus:
        nbr = s + (W - 1) * st
    else:
        return -1
    return nbr if bit(planes, j, nbr) else -1


@njit(**_JIT)
def open_moves(planes, s, strides, W, torus, nbr_out, dir_out):
    """Open neighbors of ``s`` in direction order; returns their count."""
    k = 0
    a = 0
    for direction in range(2 * strides.size):
        if direction & 1 == 0:
            a = (s // strides[direction >> 1]) % W
        nbr = _open_from(planes, s, direction, a, strides, W, torus)
        if nbr >= 0:
            nbr_out[k] = nbr
            dir_out[k] = direction
            k += 1
    return k


@njit(**_JIT)
def degrees(planes, strides, W, torus, n_sites):
    d = strides.size
    out = np.zeros(n_sites, np.uint8)
    for j in range(d):
        for s in range(n_sites):
            if bit(planes, j, s):
                nbr = step_site(s, j, 1, strides, W, torus)
                if nbr >= 0:
                    out[s] += 1
                    out[nbr] += 1
    return out


# ---------------------------------------------------------------- clusters


@njit(**_JIT)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(**_JIT)
def label_clusters(planes, strides, W, torus, n_sites):
    """Union-find labels; each label is the smallest site index of its cluster."""
    parent = np.arange(n_sites)
    for j in range(strides.size):
        for s in range(n_sites):
            if bit(planes, j, s):
                nbr = step_site(s, j, 1, strides, W, torus)
                if nbr < 0:
                    continue
                ra = _find(parent, s)
                rb = _find(parent, nbr)
                if ra < rb:
                    parent[rb] = ra
                elif rb < ra:
                    parent[ra] = rb
    # parent[s] < s for every non-root, so one ascending pass resolves all
    for s in range(n_sites):
        parent[s] = parent[parent[s]]
    return parent


@njit(**_JIT)
def _grow(queue, head, count):
    bigger = np.empty(queue.size * 2, queue.dtype)
    mask = queue.size - 1
    for i in range(count):
        bigger[i] = queue[(head + i) & mask]
    return bigger


@njit(**_JIT)
def mark_component(planes, strides, W, torus, source, mark, value):
    """Flood-fill the open cluster of ``source`` with ``value``; return (size, min index)."""
    ndir = 2 * strides.size
    a = 0
    queue = np.empty(1 << 12, np.int64)
    head = 0
    count = 1
    queue[0] = source
    mark[source] = value
    size = 0
    smallest = source
    while count:
        mask = queue.size - 1
        s = queue[head]
        head = (head + 1) & mask
        count -= 1
        size += 1
        if s < smallest:
            smallest = s
        for direction in range(ndir):
            if direction & 1 == 0:
                a = (s // strides[direction >> 1]) % W
            nbr = _open_from(planes, s, direction, a, strides, W, torus)
            if nbr >= 0 and mark[nbr] == 0:
                mark[nbr] = value
                if count == queue.size:
                    queue = _grow(queue, head, count)
                    head = 0
                    mask = queue.size - 1
                queue[(head + count) & mask] = nbr
                count += 1
    return size, smallest


@njit(**_JIT)
def origin_cluster_is_largest(planes, strides, W, torus, origin, mark):
    """Decide whether the cluster of ``origin`` is the largest one in the box.

    Ties go to the cluster with the smaller canonical label. ``mark`` ends with
    1 on the origin's cluster.
    """
    n_sites = mark.size
    size0, label0 = mark_component(planes, strides, W, torus, origin, mark, 1)
    if 2 * size0 > n_sites:
        return True, size0, label0
    remaining = n_sites - size0
    for v in range(n_sites):
        if remaining < size0:
            break
        if mark[v] == 0:
            size, _ = mark_component(planes, strides, W, torus, v, mark, 2)
            remaining -= size
            if size > size0 or (size == size0 and v < label0):
                return False, size0, label0
    return True, size0, label0


@njit(**_JIT)
def bfs_distances(planes, strides, W, torus, source, cap, target, n_sites):
    """Hop counts from ``source`` over open edges, -1 where unreached.

    Stops expanding at ``cap`` hops (``cap < 0``: no cap) or once ``target``
    (``>= 0``) is labeled.
    """
    ndir = 2 * strides.size
    a = 0
    dist = np.full(n_sites, -1, np.int32)
    queue = np.empty(1 << 12, np.int64)
    head = 0
    count = 1
    queue[0] = source
    dist[source] = 0
    if source == target:
        return dist
    while count:
        mask = queue.size - 1
        s = queue[head]
        head = (head + 1) & mask
        count -= 1
        ds = dist[s]
        if cap >= 0 and ds >= cap:
            continue
        for direction in range(ndir):
            if direction & 1 == 0:
                a = (s // strides[direction >> 1]) % W
            nbr = _open_from(planes, s, direction, a, strides, W, torus)
            if nbr >= 0 and dist[nbr] < 0:
                dist[nbr] = ds + 1
                if nbr == target:
                    return dist
                if count == queue.size:
                    queue = _grow(queue, head, count)
                    head = 0
                    mask = queue.size - 1
                queue[(head + count) & mask] = nbr
                count += 1
    return dist


# ------------------------------------------------------------------- walks


@njit(**_JIT)
def _move(coords, off, direction, W):
    """Step unwrapped ``coords`` and box offsets ``off`` along ``direction``."""
    j = direction >> 1
    if direction & 1:
        coords[j] -= 1
        off[j] = off[j] - 1 if off[j] > 0 else W - 1
    else:
        coords[j] += 1
        off[j] = off[j] + 1 if off[j] < W - 1 else 0


@njit(**_JIT)
def _offsets(coords, L, W):
    off = np.empty(coords.size, np.int64)
    for j in range(coords.size):
        off[j] = (coords[j] + L) % W
    return off


@njit(**_JIT)
def _moves_at(planes, s, off, strides, W, torus, nbr_out, dir_out):
    """``open_moves`` with the box offsets of ``s`` already known."""
    k = 0
    for direction in range(2 * strides.size):
        nbr = _open_from(planes, s, direction, off[direction >> 1], strides, W, torus)
        if nbr >= 0:
            nbr_out[k] = nbr
            dir_out[k] = direction
            k += 1
    return k


@njit(**_JIT)
def pick(rng, k):
    """Uniform index in [0, k) from one double."""
    c = int(rng.random() * k)
    return c if c < k else k - 1


@njit(**_JIT)
def _outside(coords, L):
    for j in range(coords.size):
        if abs(coords[j]) >= L:
            return True
    return False


@njit(**_JIT)
def run_coupled(planes, strides, W, torus, L, start, coords0, n_jumps, rng_jump, rng_hold, rng_blind):
    """Myopic jump chain with exponential and geometric clocks.

    Returns (z, t_cum, u_cum, degree, first boundary index or -1). A start
    with no open edge returns ``hit = -2`` and length-1 arrays.
    """
    d = strides.size
    ndir = 2 * d
    z = np.empty((n_jumps + 1, d), np.int32)
    t_cum = np.empty(n_jumps + 1)
    u_cum = np.empty(n_jumps + 1, np.int64)
    degree = np.empty(n_jumps + 1, np.uint8)
    nbrs = np.empty(ndir, np.int64)
    dirs = np.empty(ndir, np.int64)
    coords = coords0.copy()
    off = _offsets(coords, L, W)
    s = start
    z[0] = coords
    t_cum[0] = 0.0
    u_cum[0] = 0
    hit = -1
    if _outside(coords, L):
        hit = 0
    for p in range(n_jumps):
        k = _moves_at(planes, s, off, strides, W, torus, nbrs, dirs)
        if k == 0:
            return z[:1], t_cum[:1], u_cum[:1], degree[:1], -2
        degree[p] = k
        c = pick(rng_jump, k)
        t_cum[p + 1] = t_cum[p] - np.log(1.0 - rng_hold.random())
        u_cum[p + 1] = u_cum[p] + rng_blind.geometric(k / ndir)
        s = nbrs[c]
        _move(coords, off, dirs[c], W)
        z[p + 1] = coords
        if hit < 0 and _outside(coords, L):
            hit = p + 1
    degree[n_jumps] = _moves_at(planes, s, off, strides, W, torus, nbrs, dirs)
    return z, t_cum, u_cum, degree, hit


@njit(**_JIT)
def run_blind(planes, strides, W, torus, L, start, coords0, n_steps, rng):
    d = strides.size
    ndir = 2 * d
    path = np.empty((n_steps + 1, d), np.int32)
    coords = coords0.copy()
    off = _offsets(coords, L, W)
    s = start
    path[0] = coords
    hit = -1
    if _outside(coords, L):
        hit = 0
    for n in range(n_steps):
        direction = pick(rng, ndir)
        nbr = _open_from(planes, s, direction, off[direction >> 1], strides, W, torus)
        if nbr >= 0:
            s = nbr
            _move(coords, off, direction, W)
            if hit < 0 and _outside(coords, L):
                hit = n + 1
        path[n + 1] = coords
    return path, hit


@njit(**_JIT)
def myopic_endpoints(planes, strides, W, torus, L, start, coords0, n_jumps, walkers, rng):
    d = strides.size
    ndir = 2 * d
    out = np.empty((walkers, d), np.int32)
    censored = np.zeros(walkers, np.bool_)
    nbrs = np.empty(ndir, np.int64)
    dirs = np.empty(ndir, np.int64)
    coords = np.empty(d, np.int64)
    off0 = _offsets(coords0, L, W)
    off = np.empty(d, np.int64)
    for w in range(walkers):
        coords[:] = coords0
        off[:] = off0
        s = start
        for _ in range(n_jumps):
            k = _moves_at(planes, s, off, strides, W, torus, nbrs, dirs)
            c = pick(rng, k)
            s = nbrs[c]
            _move(coords, off, dirs[c], W)
            if _outside(coords, L):
                censored[w] = True
        out[w] = coords
    return out, censored


@njit(**_JIT)
def blind_endpoints(planes, strides, W, torus, L, start, coords0, n_steps, walkers, rng):
    d = strides.size
    ndir = 2 * d
    out = np.empty((walkers, d), np.int32)
    coords = np.empty(d, np.int64)
    off0 = _offsets(coords0, L, W)
    off = np.empty(d, np.int64)
    for w in range(walkers):
        coords[:] = coords0
        off[:] = off0
        s = start
        for _ in range(n_steps):
            direction = pick(rng, ndir)
            nbr = _open_from(planes, s, direction, off[direction >> 1], strides, W, torus)
            if nbr >= 0:
                s = nbr
                _move(coords, off, direction, W)
        out[w] = coords
    return out


@njit(**_JIT)
def coupled_endpoints(planes, strides, W, torus, L, start, coords0, t, n, samples, rng_jump, rng_hold, rng_blind):
    """Endpoints X_t and Y_n of independent coupled runs (same clocks as run_coupled)."""
    d = strides.size
    ndir = 2 * d
    x_end = np.empty((samples, d), np.int32)
    y_end = np.empty((samples, d), np.int32)
    nbrs = np.empty(ndir, np.int64)
    dirs = np.empty(ndir, np.int64)
    coords = np.empty(d, np.int64)
    off0 = _offsets(coords0, L, W)
    off = np.empty(d, np.int64)
    for w in range(samples):
        coords[:] = coords0
        off[:] = off0
        s = start
        t_now = 0.0
        u_now = 0
        x_done = False
        y_done = False
        while not (x_done and y_done):
            k = _moves_at(planes, s, off, strides, W, torus, nbrs, dirs)
            c = pick(rng_jump, k)
            t_next = t_now - np.log(1.0 - rng_hold.random())
            u_next = u_now + rng_blind.geometric(k / ndir)
            if not x_done and t_next > t:
                x_end[w] = coords
                x_done = True
            if not y_done and u_next > n:
                y_end[w] = coords
                y_done = True
            s = nbrs[c]
            _move(coords, off, dirs[c], W)
            t_now = t_next
            u_now = u_next
    return x_end, y_end
