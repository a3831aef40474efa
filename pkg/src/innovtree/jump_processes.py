"""Mutation-timescale jump chains.

The trait substitution sequence (TSS) is a monomorphic chain on single traits.
The trait substitution tree (TST) is a chain on alternating configurations:
traits ordered by fitness, the fittest present, and presence alternating
downwards, each present trait at its single-trait equilibrium mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ModelError, PreconditionError
from .model import Configuration, TraitCatalog, equilibrium_mass, invasion_fitness, next_mutant


@dataclass
class TssPath:
    jump_times: list[float]  # start of each segment; first entry is 0
    states: list[tuple[int, float]]  # (trait, equilibrium mass) per segment
    absorbed: bool = False


def tss_jump_rates(current: int, catalog: TraitCatalog, visited: Iterable[int] | None = None) -> dict[int, float]:
    """Rates ``nbar(z) [f(y, z)]_+ / b(y) * mu(z) p(z, y)`` out of resident ``z``.

    The transition weight ``mu(z) p(z, y)`` puts the whole mutation rate of
    ``z`` on the single candidate chosen by the catalog's mutant policy.
    """
    visited = {current} if visited is None else set(visited) | {current}
    y = next_mutant(catalog, visited)
    if y is None:
        return {}
    weight = float(catalog.mutation_weight[current])
    fit = max(invasion_fitness(y, current, catalog), 0.0)
    return {y: equilibrium_mass(current, catalog) * fit / catalog.traits[y].b * weight}


def simulate_tss(start: int, horizon: float, catalog: TraitCatalog, seed=0) -> TssPath:
    """Continuous-time jump chain of the resident trait; time in units of ``1/(K sigma)``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    current = start
    visited = {start}
    t = 0.0
    path = TssPath([0.0], [(start, equilibrium_mass(start, catalog))])
    while True:
        rates = tss_jump_rates(current, catalog, visited)
        total = sum(rates.values())
        if total <= 0.0:
            path.absorbed = True
            return path
        t += rng.exponential(1.0 / total)
        if t > horizon:
            return path
        targets = list(rates)
        if len(targets) == 1:
            nxt = targets[0]
        else:
            nxt = targets[int(rng.choice(len(targets), p=np.array([rates[y] for y in targets]) / total))]
        visited.add(nxt)
        current = nxt
        path.jump_times.append(t)
        path.states.append((current, equilibrium_mass(current, catalog)))


@dataclass(frozen=True)
class TstConfiguration:
    """Traits in increasing fitness with their presence bits and masses."""

    ordered_traits: tuple[int, ...]
    present: tuple[bool, ...]
    masses: tuple[float, ...]
    generation: int = 0

    def __post_init__(self):
        n = len(self.ordered_traits)
        if len(self.present) != n or len(self.masses) != n:
            raise ModelError("ordered_traits, present and masses must have equal length")
        if len(set(self.ordered_traits)) != n:
            raise ModelError("a trait appears twice in the configuration")

    @property
    def present_traits(self) -> list[int]:
        return [x for x, p in zip(self.ordered_traits, self.present) if p]

    def to_configuration(self) -> Configuration:
        return Configuration({x: m for x, p, m in zip(self.ordered_traits, self.present, self.masses) if p})

    def is_alternating(self) -> bool:
        n = len(self.present)
        return all(self.present[i] == ((n - 1 - i) % 2 == 0) for i in range(n))


def gamma_configuration(traits: Sequence[int], catalog: TraitCatalog, generation: int | None = None) -> TstConfiguration:
    """Equilibrium of a mutation-free ladder: every other trait present, counted from the top."""
    ordered = sorted(traits, key=lambda x: catalog.rank[x])
    n = len(ordered)
    present = tuple((n - 1 - i) % 2 == 0 for i in range(n))
    masses = tuple(equilibrium_mass(x, catalog) if p else 0.0 for x, p in zip(ordered, present))
    return TstConfiguration(tuple(ordered), present, masses, n - 1 if generation is None else generation)


def _check_insertion(config: TstConfiguration, parent: int, mutant: int, catalog: TraitCatalog):
    if parent not in config.present_traits:
        raise PreconditionError(f"parent {parent} is not present")
    if mutant in config.ordered_traits:
        raise PreconditionError(f"mutant {mutant} is already in the configuration")
    if not 0 <= mutant < len(catalog):
        raise PreconditionError(f"mutant {mutant} is not a catalog trait")
    rank = catalog.rank  # raises OrderViolationError on an unordered catalog
    ordered = list(config.ordered_traits)
    pos = sum(1 for x in ordered if rank[x] < rank[mutant])
    # strict order against each new neighbour that it competes with
    for nb in ordered[max(pos - 1, 0) : pos + 1]:
        if catalog.interacting(nb, mutant):
            f1, f2 = invasion_fitness(nb, mutant, catalog), invasion_fitness(mutant, nb, catalog)
            if f1 * f2 >= 0:
                raise ModelError(f"mutant {mutant} is not strictly ordered against trait {nb}")
    return pos


def tst_transition(config: TstConfiguration, parent: int, mutant: int, catalog: TraitCatalog) -> TstConfiguration:
    """New configuration after ``parent`` produces ``mutant``, by the case analysis on parity.

    Old traits are ``x_0 < ... < x_n``.  For ``n = 2l`` the even-indexed ones
    are present and a mutant between ``x_2j`` and ``x_2j+1`` survives, giving
    ``{x_1, x_3, .., x_2j-1} + mutant + {x_2j+2, .., x_2l}``; a mutant between
    ``x_2j-1`` and ``x_2j`` dies, giving ``{x_1, .., x_2j-1} + {x_2j, .., x_2l}``.
    For ``n = 2l + 1`` the roles of the two parities swap.  Index ranges that
    run past either end are empty, which covers mutants below ``x_0`` or
    above ``x_n``.
    """
    pos = _check_insertion(config, parent, mutant, catalog)
    x = list(config.ordered_traits)
    n = len(x) - 1

    def pick(indices):
        return {x[i] for i in indices if 0 <= i <= n}

    if n % 2 == 0:
        l = n // 2
        if pos % 2 == 1:  # x_2j < mutant < x_2j+1
            j = (pos - 1) // 2
            present = pick(2 * i - 1 for i in range(1, j + 1)) | {mutant} | pick(2 * i for i in range(j + 1, l + 1))
        else:  # x_2j-1 < mutant < x_2j
            j = pos // 2
            present = pick(2 * i - 1 for i in range(1, j + 1)) | pick(2 * i for i in range(j, l + 1))
    else:
        l = (n - 1) // 2
        if pos % 2 == 0:  # x_2j-1 < mutant < x_2j
            j = pos // 2
            present = pick(2 * i - 2 for i in range(1, j + 1)) | {mutant} | pick(2 * i - 1 for i in range(j + 1, l + 2))
        else:  # x_2j-2 < mutant < x_2j-1
            j = (pos + 1) // 2
            present = pick(2 * i - 2 for i in range(1, j + 1)) | pick(2 * i - 1 for i in range(j, l + 2))

    ordered = x[:pos] + [mutant] + x[pos:]
    bits = tuple(t in present for t in ordered)
    masses = tuple(equilibrium_mass(t, catalog) if p else 0.0 for t, p in zip(ordered, bits))
    return TstConfiguration(tuple(ordered), bits, masses, config.generation + 1)


def parity_flip_oracle(config: TstConfiguration, position: int, mutant: int, catalog: TraitCatalog) -> TstConfiguration:
    """Reference transition: insert the mutant and re-derive presence by alternation from the top."""
    ordered = list(config.ordered_traits)
    if not 0 <= position <= len(ordered):
        raise PreconditionError(f"insertion position {position} out of range")
    ordered.insert(position, mutant)
    n = len(ordered)
    present = [False] * n
    flag = True
    for i in range(n - 1, -1, -1):
        present[i] = flag
        flag = not flag
    masses = tuple(equilibrium_mass(x, catalog) if p else 0.0 for x, p in zip(ordered, present))
    return TstConfiguration(tuple(ordered), tuple(present), masses, config.generation + 1)


def tst_mutation_rates(config: TstConfiguration, catalog: TraitCatalog) -> dict[int, float]:
    """Rate ``nbar(x) mu(x)`` at which each present trait emits the policy's next mutant.

    Empty when the policy has no mutant left to offer.
    """
    if next_mutant(catalog, config.ordered_traits) is None:
        return {}
    return {x: equilibrium_mass(x, catalog) * float(catalog.mutation_weight[x]) for x in config.present_traits}


@dataclass
class TstPath:
    jump_times: list[float]
    configurations: list[TstConfiguration]
    end_reason: str = "horizon"  # "horizon", "frozen" (zero total rate) or "exhausted" (no mutant left)
    sources: list[int] = field(default_factory=list)

    def to_records(self, catalog: TraitCatalog) -> list[dict]:
        ids = catalog.ids
        return [
            {
                "time": t,
                "generation": c.generation,
                "ordered_traits": [ids[x] for x in c.ordered_traits],
                "presence": [int(p) for p in c.present],
                "masses": list(c.masses),
            }
            for t, c in zip(self.jump_times, self.configurations)
        ]


def initial_tst(trait: int, catalog: TraitCatalog) -> TstConfiguration:
    return TstConfiguration((trait,), (True,), (equilibrium_mass(trait, catalog),), 0)


def simulate_tst(initial: TstConfiguration, horizon: float, catalog: TraitCatalog, seed=0) -> TstPath:
    """Jump chain on configurations; time in units of ``1/(K sigma)``."""
    if len(initial.ordered_traits) != 1 or not initial.present[0]:
        raise PreconditionError("a tree starts from a single present trait")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    config = initial
    path = TstPath([0.0], [initial])
    t = 0.0
    while True:
        rates = tst_mutation_rates(config, catalog)
        if not rates:
            path.end_reason = "exhausted"
            return path
        total = sum(rates.values())
        if total <= 0.0:
            path.end_reason = "frozen"
            return path
        t += rng.exponential(1.0 / total)
        if t > horizon:
            return path
        sources = list(rates)
        probs = np.array([rates[x] for x in sources]) / total
        parent = sources[int(rng.choice(len(sources), p=probs))]
        mutant = next_mutant(catalog, config.ordered_traits)
        config = tst_transition(config, parent, mutant, catalog)
        path.jump_times.append(t)
        path.configurations.append(config)
        path.sources.append(parent)
