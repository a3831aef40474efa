"""Compiled Gillespie direct-method loop.

The loop never draws random numbers itself: it consumes a caller-supplied
buffer of uniforms, two per event (waiting time, channel selection), so the
random stream is owned by numpy on the Python side.  Channel order per trait
is birth, natural death, competition death, migrations by ascending target,
mutation; ``stochastic_sim.step`` walks the same order.
"""

import numpy as np
from numba import njit

BIRTH, NATURAL_DEATH, COMPETITION_DEATH, MIGRATION, MUTATION = range(5)

RUNNING, DONE, ABSORBED, EXPLODED, MUTATED = range(5)


@njit(cache=True)
def run_chunk(
    counts,
    discovered,
    state,  # float64[1]: current time
    b,
    d,
    comp_over_k,
    mig,
    mut,
    mut_seq,
    mut_ptr,  # int64[1]
    grid,
    gidx,  # int64[1]
    samples,
    uniforms,
    kind_counts,
    cap,
    horizon,
    record,
    ev_time,
    ev_kind,
    ev_from,
    ev_to,
    last_mutation,  # int64[2]: parent, mutant of the event that returned MUTATED
):
    """Advance until the uniform buffer is used up, the horizon passes, or absorption.

    Also returns right after every mutation so the caller can log it.
    Returns ``(status, events_done, events_recorded)``.
    """
    n = counts.shape[0]
    n_grid = grid.shape[0]
    n_pairs = uniforms.shape[0] // 2
    t = state[0]
    total_count = 0
    for x in range(n):
        total_count += counts[x]
    rates = np.zeros(n * (4 + n))
    width = 4 + n
    recorded = 0
    k = 0
    while k < n_pairs:
        # candidate mutant, skipping entries discovered by earlier mutations
        p = mut_ptr[0]
        while p < mut_seq.shape[0] and discovered[mut_seq[p]]:
            p += 1
        mut_ptr[0] = p
        candidate = mut_seq[p] if p < mut_seq.shape[0] else -1

        total = 0.0
        for x in range(n):
            base = x * width
            nx = counts[x]
            if nx == 0:
                for c in range(width):
                    rates[base + c] = 0.0
                continue
            press = 0.0
            for y in range(n):
                press += comp_over_k[x, y] * counts[y]
            rates[base] = b[x] * nx
            rates[base + 1] = d[x] * nx
            rates[base + 2] = nx * press
            for y in range(n):
                if discovered[y] and mig[x, y] > 0.0:
                    rates[base + 3 + y] = mig[x, y] * nx
                else:
                    rates[base + 3 + y] = 0.0
            if candidate >= 0:
                rates[base + 3 + n] = mut[x] * nx
            else:
                rates[base + 3 + n] = 0.0
            for c in range(width):
                total += rates[base + c]

        if total == 0.0:
            while gidx[0] < n_grid and grid[gidx[0]] <= horizon:
                for x in range(n):
                    samples[gidx[0], x] = counts[x]
                gidx[0] += 1
            state[0] = t
            return ABSORBED, k, recorded
        if not np.isfinite(total):
            state[0] = t
            return EXPLODED, k, recorded

        t_new = t - np.log1p(-uniforms[2 * k]) / total
        while gidx[0] < n_grid and grid[gidx[0]] <= t_new:
            if grid[gidx[0]] > horizon:
                break
            for x in range(n):
                samples[gidx[0], x] = counts[x]
            gidx[0] += 1
        if t_new > horizon:
            state[0] = horizon
            return DONE, k + 1, recorded

        target = uniforms[2 * k + 1] * total
        acc = 0.0
        chosen = -1
        for c in range(n * width):
            r = rates[c]
            if r > 0.0:
                acc += r
                chosen = c
                if target < acc:
                    break
        x = chosen // width
        c = chosen - x * width
        to = x
        if c == 0:
            counts[x] += 1
            total_count += 1
            kind = BIRTH
        elif c == 1:
            counts[x] -= 1
            total_count -= 1
            kind = NATURAL_DEATH
        elif c == 2:
            counts[x] -= 1
            total_count -= 1
            kind = COMPETITION_DEATH
        elif c < 3 + n:
            to = c - 3
            counts[x] -= 1
            counts[to] += 1
            kind = MIGRATION
        else:
            to = candidate
            counts[to] += 1
            discovered[to] = True
            total_count += 1
            kind = MUTATION
        kind_counts[kind] += 1
        if record:
            ev_time[recorded] = t_new
            ev_kind[recorded] = kind
            ev_from[recorded] = x
            ev_to[recorded] = to
            recorded += 1
        t = t_new
        k += 1
        if total_count > cap:
            state[0] = t
            return EXPLODED, k, recorded
        if kind == MUTATION:
            last_mutation[0] = x
            last_mutation[1] = to
            state[0] = t
            return MUTATED, k, recorded
    state[0] = t
    return RUNNING, k, recorded
