"""Trait catalog, scaling regime and the single-trait / pairwise fitness formulas.

Every other module reads its parameters from a :class:`TraitCatalog`.  Rates are
macroscopic: the competition kernel ``competition[x, y]`` is the limit of
``K * alpha(x, y)``, so the per-individual pressure at population scale ``K`` is
``competition[x, y] / K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelError, OrderViolationError, SingularModelError


@dataclass(frozen=True)
class NumericPolicy:
    """Thresholds that turn the strict inequalities of the theory into software checks."""

    tau_sign: float = 1e-12  # |f| <= tau_sign counts as zero fitness
    tau_eig: float = 1e-9  # eigenvalue real parts within this band are marginal
    tau_fp: float = 1e-9  # max |rhs| for a point to count as a fixed point
    tau_den: float = 1e-12  # smallest admissible 2x2 competition determinant


DEFAULT_POLICY = NumericPolicy()


@dataclass(frozen=True)
class TraitParams:
    id: str
    b: float
    d: float = 0.0

    def __post_init__(self):
        for name in ("b", "d"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ModelError(f"trait {self.id!r}: {name}={value} must be finite and >= 0")

    @property
    def growth(self) -> float:
        return self.b - self.d


@dataclass(frozen=True)
class MutantPolicy:
    """Rule deciding which catalog entry a mutation discovers next.

    ``fitter_than_all`` takes the next rung of the fitness ladder above every
    discovered trait, ``next_in_catalog`` the first undiscovered trait in
    declaration order, ``explicit`` the first undiscovered entry of ``sequence``.
    """

    kind: str = "fitter_than_all"
    sequence: tuple[int, ...] = ()

    KINDS = ("fitter_than_all", "next_in_catalog", "explicit")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ModelError(f"unknown mutant policy {self.kind!r}")
        if self.kind != "explicit" and self.sequence:
            raise ModelError("only the explicit policy takes a sequence")
        object.__setattr__(self, "sequence", tuple(int(s) for s in self.sequence))

    @classmethod
    def fitter_than_all(cls):
        return cls("fitter_than_all")

    @classmethod
    def next_in_catalog(cls):
        return cls("next_in_catalog")

    @classmethod
    def explicit(cls, sequence: Sequence[int]):
        return cls("explicit", tuple(sequence))


def _frozen_matrix(values, n, name):
    arr = np.array(values, dtype=float)
    if arr.shape != (n, n):
        raise ModelError(f"{name} must be {n}x{n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ModelError(f"{name} entries must be finite and >= 0")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TraitCatalog:
    """Finite trait space with demographic rates and pairwise kernels.

    ``competition`` and ``migration`` are dense ``(n, n)`` arrays indexed by
    declaration order; ``mutation_weight`` holds the per-trait mutation rate
    ``mu`` before the ``sigma`` rescaling.
    """

    traits: tuple[TraitParams, ...]
    competition: np.ndarray
    migration: np.ndarray = None
    mutation_weight: np.ndarray = None
    mutant_policy: MutantPolicy = field(default_factory=MutantPolicy)

    def __post_init__(self):
        traits = tuple(self.traits)
        n = len(traits)
        if n < 1:
            raise ModelError("a catalog needs at least one trait")
        ids = [t.id for t in traits]
        if len(set(ids)) != n:
            raise ModelError(f"duplicate trait ids in {ids}")
        object.__setattr__(self, "traits", traits)
        object.__setattr__(self, "competition", _frozen_matrix(self.competition, n, "competition"))
        mig = np.zeros((n, n)) if self.migration is None else self.migration
        object.__setattr__(self, "migration", _frozen_matrix(mig, n, "migration"))
        mu = np.zeros(n) if self.mutation_weight is None else np.array(self.mutation_weight, dtype=float)
        if mu.shape != (n,) or not np.all(np.isfinite(mu)) or np.any(mu < 0):
            raise ModelError("mutation_weight must be n finite values >= 0")
        mu.setflags(write=False)
        object.__setattr__(self, "mutation_weight", mu)
        for s in self.mutant_policy.sequence:
            if not 0 <= s < n:
                raise ModelError(f"explicit mutant sequence refers to unknown trait {s}")

    @classmethod
    def ladder(
        cls,
        b: Sequence[float],
        d: Sequence[float] | float = 0.0,
        *,
        diagonal: float = 1.0,
        neighbor: float | None = 1.0,
        migration: float = 0.0,
        mu: Sequence[float] | float = 0.0,
        policy: MutantPolicy | None = None,
        ids: Sequence[str] | None = None,
    ) -> "TraitCatalog":
        """Build a catalog whose kernels couple declaration-order neighbours only.

        ``neighbor=None`` couples every pair with ``diagonal`` instead.
        """
        n = len(b)
        d = [d] * n if np.isscalar(d) else list(d)
        mu = [mu] * n if np.isscalar(mu) else list(mu)
        ids = list(ids) if ids is not None else [f"x{i}" for i in range(n)]
        traits = [TraitParams(ids[i], float(b[i]), float(d[i])) for i in range(n)]
        comp = np.zeros((n, n))
        mig = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i == j:
                    comp[i, j] = diagonal
                elif neighbor is None:
                    comp[i, j] = diagonal
                elif abs(i - j) == 1:
                    comp[i, j] = neighbor
                    mig[i, j] = migration
        return cls(traits, comp, mig, mu, policy or MutantPolicy())

    def __len__(self):
        return len(self.traits)

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.traits]

    def index(self, trait_id: str) -> int:
        for i, t in enumerate(self.traits):
            if t.id == trait_id:
                return i
        raise ModelError(f"unknown trait id {trait_id!r}")

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([t.b for t in self.traits])

    @cached_property
    def d(self) -> np.ndarray:
        return np.array([t.d for t in self.traits])

    def interacting(self, x: int, y: int) -> bool:
        return self.competition[x, y] > 0 or self.competition[y, x] > 0

    def with_policy(self, policy: MutantPolicy) -> "TraitCatalog":
        return TraitCatalog(self.traits, self.competition, self.migration, self.mutation_weight, policy)

    @cached_property
    def order(self) -> tuple[int, ...]:
        return tuple(fitness_order(self))

    @cached_property
    def rank(self) -> dict[int, int]:
        return {x: r for r, x in enumerate(self.order)}


@dataclass(frozen=True)
class ScalingRegime:
    """Population scale ``K`` with the migration (``epsilon``) and mutation (``sigma``) rescalings."""

    K: int
    epsilon: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ModelError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        if not 0 < self.epsilon <= 1:
            raise ModelError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0 < self.sigma <= 1:
            raise ModelError(f"sigma must lie in (0, 1], got {self.sigma}")

    @classmethod
    def from_exponents(cls, K: int, a: float | None = None, c: float | None = None):
        """``epsilon = K**-a`` and ``sigma = K**-c``; a missing exponent means 1.0."""
        eps = float(K) ** (-a) if a is not None else 1.0
        sig = float(K) ** (-c) if c is not None else 1.0
        return cls(K, eps, sig)


@dataclass(frozen=True)
class Configuration:
    """Finite point measure on the catalog: trait index -> nonnegative density."""

    density: Mapping[int, float]

    def __post_init__(self):
        clean = {}
        for k, v in dict(self.density).items():
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ModelError(f"density of trait {k} must be finite and >= 0, got {v}")
            clean[int(k)] = v
        object.__setattr__(self, "density", clean)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "Configuration":
        return cls({i: v for i, v in enumerate(values) if v != 0})

    def to_array(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for k, v in self.density.items():
            if not 0 <= k < n:
                raise ModelError(f"configuration refers to trait {k} outside a catalog of {n}")
            out[k] = v
        return out

    @property
    def support(self) -> set[int]:
        return {k for k, v in self.density.items() if v > 0}

    def __getitem__(self, k: int) -> float:
        return self.density.get(k, 0.0)


def _check_index(catalog: TraitCatalog, *xs: int):
    for x in xs:
        if not 0 <= x < len(catalog):
            raise ModelError(f"trait index {x} outside catalog of {len(catalog)} traits")


def equilibrium_mass(x: int, catalog: TraitCatalog) -> float:
    """Stable rest point ``(b - d) / competition[x, x]`` of the single-trait logistic equation."""
    _check_index(catalog, x)
    alpha = catalog.competition[x, x]
    if alpha <= 0:
        raise SingularModelError(f"trait {catalog.traits[x].id!r} has zero self-competition")
    t = catalog.traits[x]
    return float((t.b - t.d) / alpha)


def invasion_fitness(x: int, y: int, catalog: TraitCatalog) -> float:
    """Growth rate of a rare ``x`` population in a resident ``y`` population at equilibrium."""
    _check_index(catalog, x, y)
    t = catalog.traits[x]
    return float(t.b - t.d - catalog.competition[x, y] * equilibrium_mass(y, catalog))


def fitness_order(catalog: TraitCatalog, policy: NumericPolicy = DEFAULT_POLICY) -> list[int]:
    """Chain the catalog into ``x_0 < x_1 < ... < x_L`` under the invasion order.

    Only competing pairs carry an order relation (pairs with zero kernel in
    both directions coexist trivially).  The relation must admit exactly one
    linear extension whose consecutive traits are directly related.
    """
    n = len(catalog)
    succ = {i: set() for i in range(n)}
    indeg = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if not catalog.interacting(i, j):
                continue
            fij = invasion_fitness(i, j, catalog)
            fji = invasion_fitness(j, i, catalog)
            if abs(fij) <= policy.tau_sign or abs(fji) <= policy.tau_sign or fij * fji >= 0:
                ids = catalog.ids
                raise OrderViolationError(
                    f"traits {ids[i]!r} and {ids[j]!r} are not strictly ordered: "
                    f"f({ids[i]},{ids[j]})={fij:.6g}, f({ids[j]},{ids[i]})={fji:.6g}",
                    pair=(i, j),
                )
            lo, hi = (i, j) if fij < 0 else (j, i)
            succ[lo].add(hi)
            indeg[hi] += 1
    order = []
    sources = [i for i in range(n) if indeg[i] == 0]
    while sources:
        if len(sources) > 1:
            ids = catalog.ids
            raise OrderViolationError(
                f"traits {ids[sources[0]]!r} and {ids[sources[1]]!r} cannot be ranked against each other",
                pair=(sources[0], sources[1]),
            )
        x = sources.pop()
        order.append(x)
        for y in sorted(succ[x]):
            indeg[y] -= 1
            if indeg[y] == 0:
                sources.append(y)
    if len(order) != n:
        raise OrderViolationError("the invasion relation contains a cycle")
    return order


def next_mutant(catalog: TraitCatalog, discovered: Iterable[int]) -> int | None:
    """Catalog entry the next mutation would create, or None when the policy is exhausted."""
    discovered = set(discovered)
    policy = catalog.mutant_policy
    if policy.kind == "fitter_than_all":
        order = catalog.order
        top = max((catalog.rank[x] for x in discovered), default=-1)
        return order[top + 1] if top + 1 < len(order) else None
    if policy.kind == "next_in_catalog":
        candidates = range(len(catalog))
    else:
        candidates = policy.sequence
    for x in candidates:
        if x not in discovered:
            return x
    return None


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    severity: str = "error"  # "error" or "warning"
    detail: str = ""
    pair: tuple | None = None
    values: tuple | None = None


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[Check, ...]

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed and c.severity == "error"]

    @property
    def warnings(self) -> list[Check]:
        return [c for c in self.checks if not c.passed and c.severity == "warning"]

    @property
    def status(self) -> str:
        if self.failures:
            return "fail"
        return "pass_with_warnings" if self.warnings else "pass"

    @property
    def passed(self) -> bool:
        """True unless a hard (error-severity) check failed."""
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "checks": [
                {
                    "name": c.name,
                    "passed": bool(c.passed),
                    "severity": c.severity,
                    "detail": c.detail,
                    "pair": list(c.pair) if c.pair is not None else None,
                    "values": list(c.values) if c.values is not None else None,
                }
                for c in self.checks
            ],
        }


def _a1_checks(catalog: TraitCatalog) -> list[Check]:
    checks = []
    for i, t in enumerate(catalog.traits):
        ok = t.b > 0 and t.d >= 0 and t.b - t.d > 0 and catalog.competition[i, i] > 0
        checks.append(
            Check(
                "A1",
                ok,
                detail=f"{t.id}: b={t.b:g}, d={t.d:g}, self-competition={catalog.competition[i, i]:g}",
                pair=(i, i),
                values=(t.b, t.d, float(catalog.competition[i, i])),
            )
        )
    return checks


def validate_assumptions(
    catalog: TraitCatalog, regime: ScalingRegime | None = None, policy: NumericPolicy = DEFAULT_POLICY
) -> AssumptionReport:
    """Evaluate every modelling assumption and collect the outcome without raising."""
    checks = _a1_checks(catalog)
    a1_ok = all(c.passed for c in checks)
    n = len(catalog)

    if a1_ok:
        for i in range(n):
            for j in range(i + 1, n):
                if not catalog.interacting(i, j):
                    continue
                fij = invasion_fitness(i, j, catalog)
                fji = invasion_fitness(j, i, catalog)
                ok = fij * fji < 0 and min(abs(fij), abs(fji)) > policy.tau_sign
                checks.append(
                    Check(
                        "A2",
                        ok,
                        detail=f"f({catalog.ids[i]},{catalog.ids[j]})={fij:.6g}, "
                        f"f({catalog.ids[j]},{catalog.ids[i]})={fji:.6g}",
                        pair=(i, j),
                        values=(fij, fji),
                    )
                )

    order = None
    if a1_ok:
        try:
            order = fitness_order(catalog, policy)
            checks.append(Check("order", True, detail="ladder " + " < ".join(catalog.ids[x] for x in order)))
        except OrderViolationError as exc:
            checks.append(Check("order", False, detail=str(exc), pair=exc.pair))

    if order is not None:
        pos = {x: r for r, x in enumerate(order)}
        bad = [
            (i, j)
            for i in range(n)
            for j in range(n)
            if abs(pos[i] - pos[j]) > 1 and (catalog.competition[i, j] > 0 or catalog.migration[i, j] > 0)
        ]
        checks.append(
            Check(
                "kernel_support",
                not bad,
                detail="competition and migration vanish beyond ladder neighbours"
                if not bad
                else f"{len(bad)} non-neighbour pairs carry a kernel",
                pair=bad[0] if bad else None,
            )
        )
        for k in range(len(order) - 2):
            x0, x1, x2 = order[k : k + 3]
            lhs = 2.0 / catalog.traits[x2].growth
            rhs = 1.0 / invasion_fitness(x1, x0, catalog) + 1.0 / invasion_fitness(x2, x1, catalog)
            checks.append(
                Check(
                    "B3",
                    lhs >= rhs,
                    severity="warning",
                    detail=f"({catalog.ids[x0]},{catalog.ids[x1]},{catalog.ids[x2]}): "
                    f"2/(b-d)={lhs:.6g} vs {rhs:.6g}; fixation-time bound may be loose",
                    pair=(x0, x1, x2),
                    values=(lhs, rhs),
                )
            )

    if regime is not None:
        checks.append(
            Check(
                "regime",
                True,
                detail=f"K={regime.K}, epsilon={regime.epsilon:.6g}, sigma={regime.sigma:.6g}",
            )
        )
    return AssumptionReport(tuple(checks))
