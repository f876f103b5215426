"""Compiled twins of the hot paths: RNG primitives, the fixed-marginal
sampler, and one slot-loop kernel per policy family.

Every function here mirrors, draw for draw, the pure-Python implementations
in ``sampling`` / ``policies`` / ``simulator``; the test suite asserts the
two paths produce identical streams and identical simulation results.  Keep
the arithmetic in lockstep with the Python side when editing either.

State is a 4-word ``uint64`` array (xoshiro256++), advanced in place.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_U64_23 = np.uint64(23)
_U64_41 = np.uint64(41)
_U64_17 = np.uint64(17)
_U64_45 = np.uint64(45)
_U64_19 = np.uint64(19)
_U64_11 = np.uint64(11)
_U64_0 = np.uint64(0)
_DOUBLE_SCALE = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _next_u64(state):
    x = state[0] + state[3]
    result = ((x << _U64_23) | (x >> _U64_41)) + state[0]
    t = state[1] << _U64_17
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = (state[3] << _U64_45) | (state[3] >> _U64_19)
    return result


@njit(cache=True, inline="always")
def _next_double(state):
    return np.float64(_next_u64(state) >> _U64_11) * _DOUBLE_SCALE


@njit(cache=True, inline="always")
def _bounded_int(state, n):
    nu = np.uint64(n)
    threshold = (_U64_0 - nu) % nu
    while True:
        u = _next_u64(state)
        if u >= threshold:
            return np.int64((u - threshold) % nu)


@njit(cache=True)
def fill_u64(state, out):
    for i in range(out.shape[0]):
        out[i] = _next_u64(state)


@njit(cache=True)
def fill_doubles(state, out):
    for i in range(out.shape[0]):
        out[i] = _next_double(state)


@njit(cache=True, inline="always")
def _categorical(state, weights, total):
    target = _next_double(state) * total
    cum = 0.0
    for i in range(weights.shape[0]):
        cum += weights[i]
        if target < cum:
            return i
    return weights.shape[0] - 1


@njit(cache=True, inline="always")
def _select_systematic(state, rest_ids, rest_probs, k_rest, perm, out):
    """Systematic sample of ``k_rest`` ids: Fisher-Yates permutation, one
    offset double, then cumulative-interval grid crossings.  Returns count."""
    n = rest_ids.shape[0]
    for i in range(n):
        perm[i] = i
    for i in range(n - 1, 0, -1):
        j = _bounded_int(state, i + 1)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    offset = _next_double(state)
    cum = 0.0
    prev_floor = -1 if offset > 0.0 else 0
    count = 0
    for j in range(n):
        if j == n - 1:
            cum = np.float64(k_rest)
        else:
            cum += rest_probs[perm[j]]
        if cum >= offset:
            f = np.int64(cum - offset)
        else:
            f = np.int64(-1)
        if f > prev_floor:
            out[count] = rest_ids[perm[j]]
            count += 1
        prev_floor = f
    return count


@njit(cache=True)
def sample_counts(state, rest_ids, rest_probs, k_rest, n_draws, counts):
    """Accumulate inclusion counts of the systematic sampler over many draws
    (capped items are handled by the caller)."""
    n = rest_ids.shape[0]
    perm = np.empty(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for _ in range(n_draws):
        m = _select_systematic(state, rest_ids, rest_probs, k_rest, perm, out)
        for a in range(m):
            counts[out[a]] += 1


@njit(cache=True, inline="always")
def _insertion_sort(buf, n):
    for a in range(1, n):
        key = buf[a]
        b = a - 1
        while b >= 0 and buf[b] > key:
            buf[b + 1] = buf[b]
            b -= 1
        buf[b + 1] = key


@njit(cache=True, inline="always")
def _slot_dynamics(
    state, sched_buf, n_sched, users_off, users_flat, p, q_req,
    sched_count, served_count, served_flags,
):
    """Link and swap draws for the scheduled requests, ascending id order:
    one double per (request, user), then one double per all-links success."""
    for a in range(n_sched):
        r = sched_buf[a]
        sched_count[r] += 1
        c = True
        for ui in range(users_off[r], users_off[r + 1]):
            u = _next_double(state)
            if u >= p[users_flat[ui]]:
                c = False
        if c:
            u = _next_double(state)
            if u < q_req[r]:
                served_flags[r] = True
                served_count[r] += 1


@njit(cache=True, inline="always")
def _observe_and_reset(t, burn_in, h, age_sums):
    if t > burn_in:
        for r in range(h.shape[0]):
            age_sums[r] += h[r]


@njit(cache=True, inline="always")
def _age_update(h, served_flags):
    for r in range(h.shape[0]):
        if served_flags[r]:
            h[r] = 1
            served_flags[r] = False
        else:
            h[r] += 1


@njit(cache=True, inline="always")
def _total_cost(sched_buf, n_sched, users_off):
    total = 0
    for a in range(n_sched):
        r = sched_buf[a]
        total += users_off[r + 1] - users_off[r]
    return total


@njit(cache=True)
def ssr_kernel(
    state, slots, burn_in, memory,
    users_off, users_flat, p, q_req,
    mu0, mu0_total,
    forced_off, forced_ids,
    rest_off, rest_ids, rest_probs, k_rest,
    age_sums, sched_count, served_count, h,
):
    """Stationary randomized policy: sample a cardinality class, then a
    fixed-size subset of it with prescribed marginals."""
    max_class = np.int64(0)
    for ci in range(rest_off.shape[0] - 1):
        width = rest_off[ci + 1] - rest_off[ci]
        if width > max_class:
            max_class = width
    perm = np.empty(max_class, dtype=np.int64)
    sched_buf = np.empty(h.shape[0], dtype=np.int64)
    served_flags = np.zeros(h.shape[0], dtype=np.bool_)
    for t in range(1, slots + 1):
        _observe_and_reset(t, burn_in, h, age_sums)
        ci = _categorical(state, mu0, mu0_total)
        n_sched = 0
        for idx in range(forced_off[ci], forced_off[ci + 1]):
            sched_buf[n_sched] = forced_ids[idx]
            n_sched += 1
        kr = k_rest[ci]
        if kr > 0:
            lo = rest_off[ci]
            hi = rest_off[ci + 1]
            n_sel = _select_systematic(
                state, rest_ids[lo:hi], rest_probs[lo:hi], kr, perm,
                sched_buf[n_sched:],
            )
            n_sched += n_sel
        _insertion_sort(sched_buf, n_sched)
        if _total_cost(sched_buf, n_sched, users_off) > memory:
            return False
        _slot_dynamics(
            state, sched_buf, n_sched, users_off, users_flat, p, q_req,
            sched_count, served_count, served_flags,
        )
        _age_update(h, served_flags)
    return True


@njit(cache=True)
def smw_kernel(
    state, slots, burn_in, memory,
    users_off, users_flat, p, q_req,
    mu0, mu0_total,
    class_off, class_members, m_budget, denom,
    age_sums, sched_count, served_count, h,
):
    """Max-weight policy: sample a cardinality class, then take the budgeted
    number of requests maximizing age/denominator (ties to smallest id)."""
    sched_buf = np.empty(h.shape[0], dtype=np.int64)
    served_flags = np.zeros(h.shape[0], dtype=np.bool_)
    chosen = np.zeros(h.shape[0], dtype=np.bool_)
    for t in range(1, slots + 1):
        _observe_and_reset(t, burn_in, h, age_sums)
        ci = _categorical(state, mu0, mu0_total)
        m = m_budget[ci]
        n_sched = 0
        for _ in range(m):
            best = np.int64(-1)
            bw = -1.0
            for idx in range(class_off[ci], class_off[ci + 1]):
                r = class_members[idx]
                if not chosen[r]:
                    w = h[r] / denom[r]
                    if w > bw:
                        bw = w
                        best = r
            chosen[best] = True
            sched_buf[n_sched] = best
            n_sched += 1
        for a in range(n_sched):
            chosen[sched_buf[a]] = False
        _insertion_sort(sched_buf, n_sched)
        if _total_cost(sched_buf, n_sched, users_off) > memory:
            return False
        _slot_dynamics(
            state, sched_buf, n_sched, users_off, users_flat, p, q_req,
            sched_count, served_count, served_flags,
        )
        _age_update(h, served_flags)
    return True


@njit(cache=True)
def mma_kernel(
    state, slots, burn_in, memory,
    users_off, users_flat, p, q_req,
    phi, phi_total,
    sub_off, sub_class_idx, class_off, class_members,
    age_sums, sched_count, served_count, h,
):
    """Max-age policy: sample a cardinality subset, then take the oldest
    request of each included cardinality (ties to smallest id)."""
    sched_buf = np.empty(h.shape[0], dtype=np.int64)
    served_flags = np.zeros(h.shape[0], dtype=np.bool_)
    for t in range(1, slots + 1):
        _observe_and_reset(t, burn_in, h, age_sums)
        j = _categorical(state, phi, phi_total)
        n_sched = 0
        for si in range(sub_off[j], sub_off[j + 1]):
            ci = sub_class_idx[si]
            best = np.int64(-1)
            bh = np.int64(-1)
            for idx in range(class_off[ci], class_off[ci + 1]):
                r = class_members[idx]
                if h[r] > bh:
                    bh = h[r]
                    best = r
            sched_buf[n_sched] = best
            n_sched += 1
        _insertion_sort(sched_buf, n_sched)
        if _total_cost(sched_buf, n_sched, users_off) > memory:
            return False
        _slot_dynamics(
            state, sched_buf, n_sched, users_off, users_flat, p, q_req,
            sched_count, served_count, served_flags,
        )
        _age_update(h, served_flags)
    return True
