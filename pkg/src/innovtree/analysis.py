"""Timescale checks, fixation-time prediction and measurement, and path comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GridMismatchError, PreconditionError
from .model import Configuration, ScalingRegime, TraitCatalog, invasion_fitness
from .stochastic_sim import EnsembleStats, Trajectory


@dataclass(frozen=True)
class ScalingCheck:
    name: str
    lhs: float
    rhs: float
    ratio: float
    passed: bool
    informational: bool = False


@dataclass(frozen=True)
class ScalingReport:
    K: int
    epsilon: float
    sigma: float
    rho: float
    checks: tuple[ScalingCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.informational)

    @property
    def failures(self) -> list[ScalingCheck]:
        return [c for c in self.checks if not c.passed and not c.informational]

    def to_dict(self) -> dict:
        return {
            "inputs": {"K": self.K, "epsilon": self.epsilon, "sigma": self.sigma, "rho": self.rho},
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "lhs": c.lhs,
                    "rhs": c.rhs,
                    "ratio": c.ratio,
                    "passed": c.passed,
                    "informational": c.informational,
                }
                for c in self.checks
            ],
        }


def _much_less(name, lhs, rhs, rho, informational=False):
    ratio = lhs / rhs if rhs > 0 else math.inf
    if math.isinf(rhs):
        ratio = 0.0
    return ScalingCheck(name, float(lhs), float(rhs), float(ratio), bool(ratio <= rho), informational)


def check_scaling(
    regime: ScalingRegime, rho: float = 0.2, *, migration: bool = True, mutation: bool = True, C: float = 1.0
) -> ScalingReport:
    """Evaluate each ``a << b`` separation as ``a / b <= rho``.

    Checks involving the unspecified constant ``C`` of the large-deviation
    bounds are evaluated at the given ``C`` and marked informational.
    """
    K, eps, sig = regime.K, regime.epsilon, regime.sigma
    checks = []
    if migration:
        checks.append(_much_less("1 << K*epsilon", 1.0, K * eps, rho))
        checks.append(_much_less("K*epsilon << K", K * eps, K, rho))
    if mutation:
        ln_k = math.log(K)
        checks.append(_much_less("exp(-C*K) << K*sigma", math.exp(-C * K), K * sig, rho, informational=True))
        checks.append(_much_less("K*sigma << 1/ln(K)", K * sig, 1.0 / ln_k if ln_k > 0 else math.inf, rho))
    if migration and mutation:
        checks.append(_much_less("ln(1/epsilon) << 1/(K*sigma)", math.log(1.0 / eps), 1.0 / (K * sig), rho))
        checks.append(
            _much_less("1/(K*sigma) << exp(K*C)", 1.0 / (K * sig), math.exp(min(K * C, 700.0)), rho, informational=True)
        )
    return ScalingReport(K, eps, sig, rho, tuple(checks))


@dataclass(frozen=True)
class FixationEstimate:
    """Predicted fixation time in multiples of ``ln(1/epsilon)``."""

    predicted_time_units: float
    traits: tuple[int, ...]
    invasion_fitness: tuple[float, ...]  # f(x_{i+1}, x_i) along the ladder
    c1: tuple[float, ...]
    c2: tuple[float, ...]
    b3_ok: tuple[bool, ...]
    heuristic: bool

    def to_dict(self) -> dict:
        return {
            "predicted_time_units": self.predicted_time_units,
            "traits": list(self.traits),
            "invasion_fitness": list(self.invasion_fitness),
            "c1": list(self.c1),
            "c2": list(self.c2),
            "b3_ok": list(self.b3_ok),
            "heuristic": self.heuristic,
        }


def _triple_constants(catalog, x0, x1, x2):
    f10 = invasion_fitness(x1, x0, catalog)
    f21 = invasion_fitness(x2, x1, catalog)
    f01 = invasion_fitness(x0, x1, catalog)
    f12 = invasion_fitness(x1, x2, catalog)
    r0 = catalog.traits[x0].growth
    c1 = min(abs(f01) / f21, 1.0)
    c2 = c1 * abs(f12) / r0
    b3 = 2.0 / catalog.traits[x2].growth >= 1.0 / f10 + 1.0 / f21
    return c1, c2, c1 / r0, b3


def predicted_fixation_time(catalog: TraitCatalog, traits: Sequence[int]) -> FixationEstimate:
    """Time for a ladder started at its bottom trait to settle into the alternating equilibrium.

    For three traits this is ``1/f(x1,x0) + 1/f(x2,x1) + c1/(b(x0)-d(x0))``
    with ``c1 = min(|f(x0,x1)| / f(x2,x1), 1)``.  Longer ladders add one
    invasion time per rung and one recovery time per consecutive triple; that
    composition is flagged heuristic.
    """
    traits = tuple(traits)
    if len(traits) < 2:
        raise PreconditionError("need at least two ordered traits")
    fits = []
    for lo, hi in zip(traits, traits[1:]):
        up = invasion_fitness(hi, lo, catalog)
        down = invasion_fitness(lo, hi, catalog)
        if not (up > 0 > down):
            raise PreconditionError(f"traits {lo} and {hi} are not in increasing fitness order")
        fits.append(up)
    total = sum(1.0 / f for f in fits)
    c1s, c2s, b3s = [], [], []
    for k in range(len(traits) - 2):
        c1, c2, recovery, b3 = _triple_constants(catalog, *traits[k : k + 3])
        c1s.append(c1)
        c2s.append(c2)
        b3s.append(b3)
        total += recovery
    return FixationEstimate(total, traits, tuple(fits), tuple(c1s), tuple(c2s), tuple(b3s), len(traits) != 3)


def total_variation_distance(a: Configuration, b: Configuration) -> float:
    """Unnormalised total variation norm of the signed measure ``a - b``."""
    keys = set(a.density) | set(b.density)
    return float(sum(abs(a[k] - b[k]) for k in sorted(keys)))


@dataclass(frozen=True)
class FixationTime:
    reached: bool
    time: float | None = None
    scaled: float | None = None  # time / ln(1/epsilon)
    delta: float = 0.0

    def to_dict(self) -> dict:
        return {"reached": self.reached, "time": self.time, "time_over_ln_inv_epsilon": self.scaled, "delta": self.delta}


def tv_curve(trajectory: Trajectory, target: Configuration) -> np.ndarray:
    ref = target.to_array(trajectory.states.shape[1])
    return np.abs(trajectory.states - ref).sum(axis=1)


def measure_fixation_time(
    trajectory: Trajectory, target: Configuration, delta: float, epsilon: float | None = None
) -> FixationTime:
    """First grid time after which the path stays within ``delta`` of ``target`` until the horizon."""
    tv = tv_curve(trajectory, target)
    outside = np.flatnonzero(tv > delta)
    if outside.size == 0:
        idx = 0
    elif outside[-1] == tv.size - 1:
        return FixationTime(False, delta=delta)
    else:
        idx = int(outside[-1]) + 1
    t = float(trajectory.sample_times[idx])
    eps = trajectory.epsilon if epsilon is None else epsilon
    scaled = t / math.log(1.0 / eps) if eps < 1 else None
    return FixationTime(True, t, scaled, delta)


@dataclass
class Comparison:
    sup_gap: float
    gaps: np.ndarray  # max over traits per grid time
    sample_times: np.ndarray
    per_trait: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "sup_gap": self.sup_gap,
            "sample_times": self.sample_times.tolist(),
            "gaps": self.gaps.tolist(),
        }


def compare_to_ode(ensemble: EnsembleStats | Trajectory, ode: Trajectory) -> Comparison:
    """Sup-norm gap between an ensemble mean (or a single path) and a deterministic path."""
    values = ensemble.mean if isinstance(ensemble, EnsembleStats) else ensemble.states
    times = ensemble.sample_times
    if len(times) != len(ode.sample_times) or not np.allclose(times, ode.sample_times, rtol=0, atol=1e-12):
        raise GridMismatchError("sample grids differ")
    if values.shape != ode.states.shape:
        raise GridMismatchError(f"trait counts differ: {values.shape[1]} vs {ode.states.shape[1]}")
    diff = np.abs(values - ode.states)
    gaps = diff.max(axis=1)
    return Comparison(float(gaps.max()), gaps, np.asarray(times), diff)
