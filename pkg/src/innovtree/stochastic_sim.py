"""Exact simulation of the individual-based birth, death, competition, migration and mutation process.

Per-individual exponential clocks are superposed into per-trait channels and
sampled with the Gillespie direct method.  ``step`` is a plain-Python single
event; ``simulate`` runs the compiled loop in :mod:`innovtree._kernel`, which
consumes the same random stream in the same way, so the two agree event for
event under a shared seed.

Random streams (version 1): a single run with integer seed ``s`` draws from
``PCG64(SeedSequence(s))``; ensemble replicate ``r`` draws from
``PCG64(SeedSequence(s, spawn_key=(r,)))``.  Each event consumes two doubles
from ``Generator.random``: the waiting time ``-log1p(-u0) / total`` and the
channel selector ``u1 * total``.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .errors import (
    AbsorbingStateError,
    ExplosionError,
    ModelError,
    PreconditionError,
    ReplicateError,
)
from .model import Configuration, ScalingRegime, TraitCatalog, next_mutant

log = logging.getLogger(__name__)

STREAM_VERSION = 1
DEFAULT_CAP = 10**8
_CHUNK = 1 << 16


class EventKind(enum.IntEnum):
    CLONAL_BIRTH = _kernel.BIRTH
    NATURAL_DEATH = _kernel.NATURAL_DEATH
    COMPETITION_DEATH = _kernel.COMPETITION_DEATH
    MIGRATION = _kernel.MIGRATION
    MUTATION = _kernel.MUTATION


@dataclass(frozen=True)
class PopulationState:
    counts: tuple[int, ...]
    time: float = 0.0
    discovered: frozenset[int] = frozenset()

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ModelError(f"negative count in {counts}")
        object.__setattr__(self, "counts", counts)
        disc = frozenset(self.discovered) | {i for i, c in enumerate(counts) if c > 0}
        object.__setattr__(self, "discovered", disc)

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: EventKind
    trait: int
    target: int  # equal to trait except for migration and mutation


@dataclass(frozen=True)
class EventRates:
    birth: np.ndarray
    natural_death: np.ndarray
    competition_death: np.ndarray
    migration: np.ndarray  # (n, n): from -> to
    mutation: np.ndarray
    mutant: int | None

    @property
    def total(self) -> float:
        # same summation order as the compiled loop
        total = 0.0
        n = len(self.birth)
        for x in range(n):
            for r in self.channels(x):
                total += r
        return total

    def channels(self, x: int) -> list[float]:
        n = len(self.birth)
        return [
            float(self.birth[x]),
            float(self.natural_death[x]),
            float(self.competition_death[x]),
            *(float(self.migration[x, y]) for y in range(n)),
            float(self.mutation[x]),
        ]


@dataclass
class Trajectory:
    """Densities (counts / K) sampled left-continuously on a time grid."""

    trait_ids: list[str]
    K: int
    epsilon: float
    sample_times: np.ndarray
    states: np.ndarray  # (len(sample_times), n_traits)
    events_total: dict[str, int]
    absorbed: bool = False
    absorption_time: float | None = None
    mutations: list[tuple[float, int, int]] = field(default_factory=list)
    events: list[EventRecord] | None = None
    final_state: PopulationState | None = None

    def at(self, i: int) -> Configuration:
        return Configuration.from_array(self.states[i])


@dataclass
class EnsembleStats:
    trait_ids: list[str]
    sample_times: np.ndarray
    replicates: int
    mean: np.ndarray
    var: np.ndarray
    p05: np.ndarray
    p95: np.ndarray
    trajectories: list[Trajectory] | None = None


def migration_matrix(catalog: TraitCatalog, regime: ScalingRegime) -> np.ndarray:
    """``epsilon * m`` restricted to neighbours on the fitness ladder."""
    mig = np.array(catalog.migration, dtype=float)
    if not mig.any():
        return mig
    rank = catalog.rank
    n = len(catalog)
    for x in range(n):
        for y in range(n):
            if abs(rank[x] - rank[y]) != 1:
                mig[x, y] = 0.0
    return regime.epsilon * mig


def mutation_sequence(catalog: TraitCatalog, discovered) -> np.ndarray:
    """Order in which the mutant policy will discover traits, starting from ``discovered``."""
    seq = []
    disc = set(discovered)
    while True:
        nxt = next_mutant(catalog, disc)
        if nxt is None:
            break
        seq.append(nxt)
        disc.add(nxt)
    return np.array(seq, dtype=np.int64)


def event_rates(state: PopulationState, catalog: TraitCatalog, regime: ScalingRegime) -> EventRates:
    """Per-trait channel rates at ``state``; competition pressure uses ``competition / K``."""
    n = len(catalog)
    if len(state.counts) != n:
        raise ModelError(f"state has {len(state.counts)} traits, catalog {n}")
    counts = state.counts
    comp = catalog.competition / regime.K
    mig = migration_matrix(catalog, regime)
    mutant = next_mutant(catalog, state.discovered) if catalog.mutation_weight.any() else None
    birth = np.zeros(n)
    nat = np.zeros(n)
    cdeath = np.zeros(n)
    migr = np.zeros((n, n))
    mutr = np.zeros(n)
    for x in range(n):
        nx = counts[x]
        if nx == 0:
            continue
        press = 0.0
        for y in range(n):
            press += float(comp[x, y]) * counts[y]
        birth[x] = float(catalog.b[x]) * nx
        nat[x] = float(catalog.d[x]) * nx
        cdeath[x] = nx * press
        for y in range(n):
            if y in state.discovered and mig[x, y] > 0.0:
                migr[x, y] = float(mig[x, y]) * nx
        if mutant is not None:
            mutr[x] = float(regime.sigma * catalog.mutation_weight[x]) * nx
    rates = EventRates(birth, nat, cdeath, migr, mutr, mutant)
    if not math.isfinite(rates.total):
        raise ExplosionError("total event rate overflowed")
    return rates


def step(
    state: PopulationState, catalog: TraitCatalog, regime: ScalingRegime, rng: np.random.Generator
) -> tuple[EventRecord, PopulationState]:
    """Draw the next event and return it together with the updated state."""
    rates = event_rates(state, catalog, regime)
    total = rates.total
    if total == 0.0:
        raise AbsorbingStateError(f"no event possible at t={state.time}")
    u = rng.random(2)
    t_new = state.time - math.log1p(-u[0]) / total
    target = u[1] * total
    n = len(catalog)
    acc = 0.0
    chosen = None
    for x in range(n):
        for c, r in enumerate(rates.channels(x)):
            if r > 0.0:
                acc += r
                chosen = (x, c)
                if target < acc:
                    break
        else:
            continue
        break
    x, c = chosen
    counts = list(state.counts)
    discovered = set(state.discovered)
    to = x
    if c == 0:
        kind = EventKind.CLONAL_BIRTH
        counts[x] += 1
    elif c == 1:
        kind = EventKind.NATURAL_DEATH
        counts[x] -= 1
    elif c == 2:
        kind = EventKind.COMPETITION_DEATH
        counts[x] -= 1
    elif c < 3 + n:
        kind = EventKind.MIGRATION
        to = c - 3
        counts[x] -= 1
        counts[to] += 1
    else:
        kind = EventKind.MUTATION
        to = rates.mutant
        counts[to] += 1
        discovered.add(to)
    return EventRecord(t_new, kind, x, to), PopulationState(tuple(counts), t_new, frozenset(discovered))


def make_grid(horizon: float, sample_grid) -> np.ndarray:
    """Uniform grid of ``sample_grid`` points on [0, horizon], or explicit increasing times."""
    if horizon < 0:
        raise PreconditionError("horizon must be >= 0")
    if isinstance(sample_grid, (int, np.integer)):
        if sample_grid < 1:
            raise PreconditionError("grid needs at least one point")
        if sample_grid == 1:
            return np.array([0.0])
        return np.linspace(0.0, horizon, int(sample_grid))
    grid = np.asarray(sample_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise PreconditionError("explicit grid must be a non-empty list of times")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > horizon:
        raise PreconditionError("grid times must increase within [0, horizon]")
    return grid


def initial_counts(initial: Configuration, catalog: TraitCatalog, K: int) -> np.ndarray:
    dens = initial.to_array(len(catalog))
    counts = np.rint(dens * K)
    if np.any(np.abs(counts - dens * K) > 1e-6 * np.maximum(1.0, dens * K)):
        log.debug("initial densities rounded to whole individuals: %s", counts)
    return counts.astype(np.int64)


def default_discovered(catalog: TraitCatalog, initial: Configuration) -> frozenset[int]:
    """Without mutation the whole catalog is the trait space; with it, only the initial support."""
    if catalog.mutation_weight.any():
        return frozenset(initial.support)
    return frozenset(range(len(catalog)))


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def replicate_seed(base_seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(replicate),))


def simulate(
    catalog: TraitCatalog,
    regime: ScalingRegime,
    initial: Configuration,
    horizon: float,
    sample_grid=101,
    seed=0,
    *,
    discovered=None,
    burn_in: float = 0.0,
    record_events: bool = False,
    cap: int = DEFAULT_CAP,
) -> Trajectory:
    """Run one path up to ``horizon`` (after an optional unrecorded ``burn_in``)."""
    n = len(catalog)
    grid = make_grid(horizon, sample_grid)
    counts = initial_counts(initial, catalog, regime.K)
    if discovered is None:
        discovered = default_discovered(catalog, initial)
    disc = np.zeros(n, dtype=np.bool_)
    for x in set(discovered) | {i for i in range(n) if counts[i] > 0}:
        disc[x] = True

    b = np.ascontiguousarray(catalog.b, dtype=float)
    d = np.ascontiguousarray(catalog.d, dtype=float)
    comp = np.ascontiguousarray(catalog.competition / regime.K)
    mig = np.ascontiguousarray(migration_matrix(catalog, regime))
    mut = np.ascontiguousarray(regime.sigma * catalog.mutation_weight)
    if mut.any():
        mut_seq = mutation_sequence(catalog, np.flatnonzero(disc))
    else:
        mut_seq = np.zeros(0, dtype=np.int64)

    shifted = grid + burn_in
    end = horizon + burn_in
    samples = np.zeros((len(grid), n))
    tstate = np.zeros(1)
    mut_ptr = np.zeros(1, dtype=np.int64)
    gidx = np.zeros(1, dtype=np.int64)
    kinds = np.zeros(5, dtype=np.int64)
    last = np.zeros(2, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(_seed_sequence(seed)))
    if record_events:
        ev = [np.zeros(_CHUNK), np.zeros(_CHUNK, np.int64), np.zeros(_CHUNK, np.int64), np.zeros(_CHUNK, np.int64)]
    else:
        ev = [np.zeros(1), np.zeros(1, np.int64), np.zeros(1, np.int64), np.zeros(1, np.int64)]
    events: list[EventRecord] = []
    mutations: list[tuple[float, int, int]] = []
    absorbed = False
    absorption_time = None

    uniforms = rng.random(2 * _CHUNK)
    offset = 0
    while True:
        status, used, recorded = _kernel.run_chunk(
            counts, disc, tstate, b, d, comp, mig, mut, mut_seq, mut_ptr,
            shifted, gidx, samples, uniforms[2 * offset:], kinds, cap, end,
            record_events, ev[0], ev[1], ev[2], ev[3], last,
        )  # fmt: skip
        offset += used
        if record_events:
            for i in range(recorded):
                events.append(EventRecord(float(ev[0][i]), EventKind(int(ev[1][i])), int(ev[2][i]), int(ev[3][i])))
        if status == _kernel.MUTATED:
            mutations.append((float(tstate[0]) - burn_in, int(last[0]), int(last[1])))
        elif status == _kernel.DONE:
            break
        elif status == _kernel.ABSORBED:
            absorbed = True
            absorption_time = float(tstate[0]) - burn_in
            break
        elif status == _kernel.EXPLODED:
            raise ExplosionError(
                f"population exceeded cap {cap} (or rate overflow) at t={tstate[0]:.6g}: counts={counts.tolist()}"
            )
        if offset >= _CHUNK:
            uniforms = rng.random(2 * _CHUNK)
            offset = 0

    return Trajectory(
        trait_ids=catalog.ids,
        K=regime.K,
        epsilon=regime.epsilon,
        sample_times=grid,
        states=samples / regime.K,
        events_total={k.name: int(kinds[k]) for k in EventKind},
        absorbed=absorbed,
        absorption_time=absorption_time,
        mutations=mutations,
        events=events if record_events else None,
        final_state=PopulationState(tuple(int(c) for c in counts), float(tstate[0]), frozenset(np.flatnonzero(disc).tolist())),
    )


def _replicate_job(args):
    catalog, regime, initial, horizon, grid, base_seed, r, kwargs = args
    try:
        return simulate(catalog, regime, initial, horizon, grid, replicate_seed(base_seed, r), **kwargs)
    except Exception as exc:  # re-raised with the replicate index in the parent
        return ReplicateError(r, exc)


def run_ensemble(
    catalog: TraitCatalog,
    regime: ScalingRegime,
    initial: Configuration,
    horizon: float,
    sample_grid=101,
    replicates: int = 1,
    base_seed: int = 0,
    *,
    workers: int = 1,
    keep_trajectories: bool = False,
    **sim_kwargs,
) -> EnsembleStats:
    """Independent replicates aggregated per grid time and trait.

    Replicate ``r`` always uses the stream derived from ``(base_seed, r)`` and
    results are stacked by replicate index, so the statistics do not depend
    on ``workers``.
    """
    if replicates < 1:
        raise PreconditionError("replicates must be >= 1")
    grid = make_grid(horizon, sample_grid)
    jobs = [(catalog, regime, initial, horizon, grid, base_seed, r, sim_kwargs) for r in range(replicates)]
    if workers > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_job, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        results = [_replicate_job(j) for j in jobs]
    for res in results:
        if isinstance(res, ReplicateError):
            raise res
    stack = np.stack([res.states for res in results])  # (R, T, n)
    mean = stack.mean(axis=0)
    var = stack.var(axis=0)
    p05, p95 = np.percentile(stack, [5, 95], axis=0)
    return EnsembleStats(
        trait_ids=catalog.ids,
        sample_times=grid,
        replicates=replicates,
        mean=mean,
        var=var,
        p05=p05,
        p95=p95,
        trajectories=results if keep_trajectories else None,
    )
