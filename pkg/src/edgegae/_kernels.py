"""Numba kernels for the numeric hot paths.

All kernels are compiled without fastmath so floating-point results are
reproducible bit-for-bit. The linear and segment-sum kernels fix their
accumulation order explicitly: BLAS routines switch kernels with the row
count, which would break exact batch-independence of forward passes.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def linear_bias(x, wt, b, out):
    # out = x @ wt + b with a fixed k-ascending accumulation per row
    m, kk = x.shape
    n = wt.shape[1]
    for i in range(m):
        for j in range(n):
            out[i, j] = b[j]
        for k in range(kk):
            v = x[i, k]
            for j in range(n):
                out[i, j] += v * wt[k, j]


@njit(cache=True, nogil=True)
def linear_nobias(x, wt, out):
    m, kk = x.shape
    n = wt.shape[1]
    for i in range(m):
        for j in range(n):
            out[i, j] = 0.0
        for k in range(kk):
            v = x[i, k]
            for j in range(n):
                out[i, j] += v * wt[k, j]


@njit(cache=True, nogil=True)
def segment_sum_sorted(values, order, ptr, out):
    """Per-segment column sums, accumulated in ascending value order.

    ``order[ptr[s]:ptr[s+1]]`` lists the rows of ``values`` belonging to
    segment ``s``. Sorting each (segment, column) group by value before the
    sequential sum makes the result independent of row ordering, which is
    what makes eval-mode forward passes exactly permutation-equivariant.
    """
    n_seg = ptr.shape[0] - 1
    n_col = values.shape[1]
    maxdeg = 0
    for s in range(n_seg):
        d = ptr[s + 1] - ptr[s]
        if d > maxdeg:
            maxdeg = d
    block = np.empty((maxdeg, n_col), dtype=np.float64)
    buf = np.empty(maxdeg, dtype=np.float64)
    for s in range(n_seg):
        lo, hi = ptr[s], ptr[s + 1]
        d = hi - lo
        for t in range(d):
            r = order[lo + t]
            for c in range(n_col):
                block[t, c] = values[r, c]
        for c in range(n_col):
            for t in range(d):
                v = block[t, c]
                # insertion sort, ascending
                u = t
                while u > 0 and buf[u - 1] > v:
                    buf[u] = buf[u - 1]
                    u -= 1
                buf[u] = v
            acc = 0.0
            for t in range(d):
                acc += buf[t]
            out[s, c] = acc


@njit(cache=True, nogil=True)
def segment_sum_plain(values, seg_ids, out):
    # row-order accumulation; used where canonical ordering is not required
    m, n = values.shape
    out[:, :] = 0.0
    for i in range(m):
        s = seg_ids[i]
        for j in range(n):
            out[s, j] += values[i, j]


@njit(cache=True, nogil=True)
def scatter_add_rows(grad_out, idx, acc):
    # acc[idx[i]] += grad_out[i]; plain index order (gradients only)
    m, n = grad_out.shape
    for i in range(m):
        r = idx[i]
        for j in range(n):
            acc[r, j] += grad_out[i, j]


@njit(cache=True, nogil=True)
def held_karp_dp(dist):
    """Exact TSP via bitmask DP with start fixed at node 0.

    Returns (dp_length, order). Subsets range over nodes 1..n-1, so the
    table is 2^(n-1) x (n-1). Ties prefer the smaller predecessor index,
    which keeps reconstruction deterministic.
    """
    n = dist.shape[0]
    m = n - 1
    size = 1 << m
    dp = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int8)
    for j in range(m):
        dp[1 << j, j] = dist[0, j + 1]
    for mask in range(1, size):
        for j in range(m):
            if not (mask >> j) & 1:
                continue
            prev = mask ^ (1 << j)
            if prev == 0:
                continue
            best = np.inf
            arg = -1
            for i in range(m):
                if not (prev >> i) & 1:
                    continue
                c = dp[prev, i] + dist[i + 1, j + 1]
                if c < best:
                    best = c
                    arg = i
            dp[mask, j] = best
            parent[mask, j] = arg
    full = size - 1
    best = np.inf
    last = -1
    for j in range(m):
        c = dp[full, j] + dist[j + 1, 0]
        if c < best:
            best = c
            last = j
    order = np.empty(n, dtype=np.int64)
    mask = full
    j = last
    for pos in range(n - 1, 0, -1):
        order[pos] = j + 1
        nxt = parent[mask, j]
        mask ^= 1 << j
        j = nxt
    order[0] = 0
    return best, order


@njit(cache=True, nogil=True)
def two_opt_pass(dist, order):
    """First-improvement 2-opt on a closed tour, position 0 held fixed.

    Applies a segment reversal as soon as it shortens the tour and keeps
    rescanning until a full pass finds nothing. Acceptance threshold
    -1e-12 guarantees termination under floating point.
    """
    n = order.shape[0]
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                a = order[i - 1]
                b = order[i]
                c = order[j]
                d = order[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
                if delta < -1e-12:
                    lo, hi = i, j
                    while lo < hi:
                        tmp = order[lo]
                        order[lo] = order[hi]
                        order[hi] = tmp
                        lo += 1
                        hi -= 1
                    improved = True


@njit(cache=True, nogil=True)
def roulette_walk(scores, uniforms, order):
    """Build a tour by roulette selection over all unvisited nodes.

    uniforms[0] picks the start node; uniforms[t] picks step t. Selection
    probability is proportional to scores[current, candidate] over the
    unvisited set (scores are strictly positive by construction).
    """
    n = scores.shape[0]
    visited = np.zeros(n, dtype=np.bool_)
    cur = int(uniforms[0] * n)
    if cur >= n:
        cur = n - 1
    order[0] = cur
    visited[cur] = True
    for t in range(1, n):
        total = 0.0
        for cand in range(n):
            if not visited[cand]:
                total += scores[cur, cand]
        threshold = uniforms[t] * total
        acc = 0.0
        chosen = -1
        for cand in range(n):
            if visited[cand]:
                continue
            acc += scores[cur, cand]
            if acc >= threshold:
                chosen = cand
                break
        if chosen < 0:
            # numeric tail: fall back to the last unvisited node
            for cand in range(n - 1, -1, -1):
                if not visited[cand]:
                    chosen = cand
                    break
        order[t] = chosen
        visited[chosen] = True
        cur = chosen
