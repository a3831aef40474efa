"""Deterministic large-population limits and their equilibria.

Three right-hand sides are supported: the single-trait logistic equation, the
two-trait Lotka-Volterra system, and the nearest-neighbour system on a whole
fitness ladder, optionally with the ``epsilon``-scaled migration flux.
"""

from __future__ import annotations

import cmath
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegenerateKernelError, NotAFixedPointError, PreconditionError, StiffnessError
from .model import DEFAULT_POLICY, NumericPolicy, ScalingRegime, TraitCatalog
from .stochastic_sim import Trajectory, migration_matrix


@dataclass(frozen=True)
class Logistic:
    b: float
    d: float
    alpha0: float

    dimension = 1

    @classmethod
    def from_catalog(cls, catalog: TraitCatalog, x: int = 0):
        return cls(float(catalog.b[x]), float(catalog.d[x]), float(catalog.competition[x, x]))


@dataclass(frozen=True)
class LV2:
    b: tuple[float, float]
    d: tuple[float, float]
    alpha0: tuple[tuple[float, float], tuple[float, float]]

    dimension = 2

    @classmethod
    def from_catalog(cls, catalog: TraitCatalog, x: int = 0, y: int = 1):
        idx = (x, y)
        return cls(
            tuple(float(catalog.b[i]) for i in idx),
            tuple(float(catalog.d[i]) for i in idx),
            tuple(tuple(float(catalog.competition[i, j]) for j in idx) for i in idx),
        )

    def growth(self, i: int) -> float:
        return self.b[i] - self.d[i]

    def fitness(self, i: int, j: int) -> float:
        """Invasion fitness of component ``i`` against component ``j`` at its equilibrium."""
        return self.growth(i) - self.alpha0[i][j] * self.growth(j) / self.alpha0[j][j]


class NearestNeighborLV:
    """Competition between ladder neighbours, with optional migration flux.

    ``d n_x/dt = (b_x - d_x - sum_y a(x,y) n_y) n_x + sum_y eps (m(y,x) n_y - m(x,y) n_x)``
    with both sums running over ladder neighbours only.
    """

    def __init__(self, catalog: TraitCatalog, regime: ScalingRegime | None = None, include_migration: bool = True):
        self.catalog = catalog
        self.regime = regime
        self.include_migration = include_migration
        n = len(catalog)
        self.dimension = n
        self.r = catalog.b - catalog.d
        comp = np.array(catalog.competition, dtype=float)
        if n > 1:
            rank = catalog.rank
            for x in range(n):
                for y in range(n):
                    if abs(rank[x] - rank[y]) > 1:
                        comp[x, y] = 0.0
        self.alpha = comp
        if include_migration:
            if regime is None:
                raise PreconditionError("migration flux needs a scaling regime for epsilon")
            self.mig = migration_matrix(catalog, regime)
        else:
            self.mig = np.zeros((n, n))
        self.outflow = self.mig.sum(axis=1)


OdeSystem = Logistic | LV2 | NearestNeighborLV


def _lv2_arrays(system: LV2):
    return (
        np.array([system.growth(0), system.growth(1)]),
        np.array(system.alpha0, dtype=float),
    )


def rhs(system, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if isinstance(system, Logistic):
        r = system.b - system.d
        return (r - system.alpha0 * n) * n
    if isinstance(system, LV2):
        r, a = _lv2_arrays(system)
        return (r - a @ n) * n
    if isinstance(system, NearestNeighborLV):
        out = (system.r - system.alpha @ n) * n
        if system.include_migration:
            out = out + system.mig.T @ n - system.outflow * n
        return out
    raise TypeError(f"unsupported system {type(system).__name__}")


def jacobian(system, n) -> np.ndarray:
    """Analytic Jacobian of :func:`rhs`."""
    n = np.asarray(n, dtype=float)
    if isinstance(system, Logistic):
        return np.array([[system.b - system.d - 2 * system.alpha0 * n[0]]])
    if isinstance(system, LV2):
        r, a = _lv2_arrays(system)
    elif isinstance(system, NearestNeighborLV):
        r, a = system.r, system.alpha
    else:
        raise TypeError(f"unsupported system {type(system).__name__}")
    jac = -a * n[:, None]
    jac[np.diag_indices_from(jac)] += r - a @ n
    if isinstance(system, NearestNeighborLV) and system.include_migration:
        jac += system.mig.T
        jac[np.diag_indices_from(jac)] -= system.outflow
    return jac


@dataclass
class OdeSolution:
    t: np.ndarray
    y: np.ndarray  # (len(t), dimension)
    nfev: int

    @property
    def terminal(self) -> np.ndarray:
        return self.y[-1]

    def to_trajectory(self, trait_ids: Sequence[str], K: int = 0, epsilon: float = 1.0) -> Trajectory:
        return Trajectory(list(trait_ids), K, epsilon, self.t.copy(), self.y.copy(), {})


def integrate(system, y0, t_end: float, t_eval=None, rtol: float = 1e-8, atol: float = 1e-10) -> OdeSolution:
    """Adaptive Dormand-Prince 5(4) integration with a nonnegativity projection.

    Components that end up within ``atol`` below zero are clipped to zero.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape != (system.dimension,):
        raise PreconditionError(f"initial state has shape {y0.shape}, system dimension is {system.dimension}")
    if np.any(y0 < 0):
        raise PreconditionError("initial state must be componentwise >= 0")
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 101)
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(lambda t, y: rhs(system, y), (0.0, t_end), y0, method="RK45", t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StiffnessError(f"integration stopped at t={sol.t[-1] if sol.t.size else 0.0}: {sol.message}")
    y = sol.y.T.copy()
    y[(y < 0) & (y > -atol)] = 0.0
    return OdeSolution(sol.t, y, sol.nfev)


class Stability(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


@dataclass(frozen=True)
class FixedPointReport:
    point: tuple[float, ...]
    eigenvalues: tuple[complex, ...]
    classification: Stability
    admissible: bool


def _eig2(m) -> tuple[complex, complex]:
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    root = cmath.sqrt(tr * tr / 4 - det)
    return complex(tr / 2 + root), complex(tr / 2 - root)


def classify_stability(system, point, policy: NumericPolicy = DEFAULT_POLICY) -> FixedPointReport:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    residual = np.max(np.abs(rhs(system, point)))
    if residual >= policy.tau_fp:
        raise NotAFixedPointError(f"|rhs| = {residual:.3g} at {point.tolist()}")
    jac = jacobian(system, point)
    if isinstance(system, Logistic):
        eig = (complex(jac[0, 0]),)
    elif isinstance(system, LV2):
        eig = _eig2(jac)
    else:
        eig = tuple(complex(v) for v in np.linalg.eigvals(jac))
    re = [e.real for e in eig]
    if all(v < -policy.tau_eig for v in re):
        cls = Stability.STABLE
    elif any(v > policy.tau_eig for v in re):
        cls = Stability.UNSTABLE
    else:
        cls = Stability.MARGINAL
    return FixedPointReport(tuple(point.tolist()), eig, cls, bool(np.all(point >= 0)))


def fixed_points_lv(system: LV2, policy: NumericPolicy = DEFAULT_POLICY) -> list[FixedPointReport]:
    """Origin, both single-trait equilibria and (when it exists) the interior point.

    A singular competition matrix with parallel nullclines has no interior
    point and only the three boundary candidates are returned; coincident
    nullclines (a continuum of fixed points) raise :class:`DegenerateKernelError`.
    """
    (axx, axy), (ayx, ayy) = system.alpha0
    if axx <= 0 or ayy <= 0:
        raise DegenerateKernelError("self-competition must be positive")
    rx, ry = system.growth(0), system.growth(1)
    points = [(0.0, 0.0), (rx / axx, 0.0), (0.0, ry / ayy)]
    den = axx * ayy - axy * ayx
    if abs(den) > policy.tau_den:
        nx = ayy * system.fitness(0, 1) / den
        ny = axx * system.fitness(1, 0) / den
        points.append((nx, ny))
    else:
        # rows (axx, axy | rx) and (ayx, ayy | ry) proportional => same line
        if abs(axx * ry - ayx * rx) <= policy.tau_den * max(1.0, abs(axx * ry)):
            raise DegenerateKernelError("competition matrix is singular and the nullclines coincide")
    return [classify_stability(system, p, policy) for p in points]
