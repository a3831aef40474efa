import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from innovtree.analysis import (
    check_scaling,
    compare_to_ode,
    measure_fixation_time,
    predicted_fixation_time,
    total_variation_distance,
)
from innovtree.errors import GridMismatchError, PreconditionError
from innovtree.model import Configuration, ScalingRegime, TraitCatalog
from innovtree.stochastic_sim import EnsembleStats, Trajectory


def test_scaling_ratios_for_the_three_trait_regime():
    reg = ScalingRegime.from_exponents(1000, a=0.8)
    report = check_scaling(reg, mutation=False)
    first, second = report.checks
    assert first.ratio == pytest.approx(1000**-0.2)
    assert not first.passed  # 0.251 > 0.2
    assert second.ratio == pytest.approx(1000**-0.8)
    assert second.passed
    assert check_scaling(reg, rho=0.3, mutation=False).passed


def test_scaling_with_mutation():
    reg = ScalingRegime.from_exponents(400, a=0.8, c=1.5)
    report = check_scaling(reg)
    by_name = {c.name: c for c in report.checks}
    assert by_name["K*sigma << 1/ln(K)"].ratio == pytest.approx(400**-0.5 * math.log(400))
    assert by_name["ln(1/epsilon) << 1/(K*sigma)"].ratio == pytest.approx(0.8 * math.log(400) * 400**-0.5)
    assert by_name["exp(-C*K) << K*sigma"].informational
    info_failures = [c for c in report.failures if c.informational]
    assert not info_failures


def test_scaling_without_migration_ignores_epsilon():
    report = check_scaling(ScalingRegime(100, sigma=1e-4), migration=True, mutation=True)
    assert not report.passed  # epsilon = 1 cannot sit below K
    report = check_scaling(ScalingRegime(100, sigma=1e-4), migration=False)
    assert report.passed
    d = report.to_dict()
    assert d["inputs"] == {"K": 100, "epsilon": 1.0, "sigma": 1e-4, "rho": 0.2}


def test_predicted_fixation_time_three_traits():
    cat = TraitCatalog.ladder([3.0, 6.0, 8.0])
    est = predicted_fixation_time(cat, [0, 1, 2])
    # 1/f(x1,x0) + 1/f(x2,x1) + min(|f(x0,x1)| / f(x2,x1), 1) / (b(x0) - d(x0))
    assert est.predicted_time_units == pytest.approx(1 / 3 + 1 / 2 + 1 / 3)
    assert est.c1 == (1.0,)
    assert est.b3_ok == (False,)
    assert not est.heuristic


def test_predicted_fixation_time_general_ladder_is_flagged():
    cat = TraitCatalog.ladder([3.0, 6.0, 8.0, 10.0], d=[0.5, 0.0, 0.0, 1.0])
    est = predicted_fixation_time(cat, [0, 1, 2, 3])
    assert est.heuristic
    assert len(est.invasion_fitness) == 3 and len(est.c1) == 2


def test_predicted_fixation_time_rejects_unordered_input():
    cat = TraitCatalog.ladder([3.0, 6.0, 8.0])
    with pytest.raises(PreconditionError):
        predicted_fixation_time(cat, [1, 0, 2])
    with pytest.raises(PreconditionError):
        predicted_fixation_time(cat, [0])


configs = st.dictionaries(st.integers(0, 4), st.floats(0, 100, allow_nan=False), max_size=5).map(Configuration)


@settings(max_examples=500, deadline=None)
@given(configs, configs, configs)
def test_tv_is_a_metric(a, b, c):
    assert total_variation_distance(a, a) == 0.0
    assert total_variation_distance(a, b) == total_variation_distance(b, a)
    assert total_variation_distance(a, b) <= total_variation_distance(a, c) + total_variation_distance(c, b) + 1e-9


def test_tv_is_unnormalised():
    assert total_variation_distance(Configuration({0: 3.0}), Configuration({1: 8.0})) == 11.0


def _traj(values, times=None, epsilon=0.01):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    times = np.arange(len(values), dtype=float) if times is None else np.asarray(times)
    return Trajectory(["x0"], 100, epsilon, times, values, {})


def test_fixation_means_entering_and_staying():
    tr = _traj([0.0, 2.9, 0.0, 2.5, 3.2, 3.0])
    fix = measure_fixation_time(tr, Configuration({0: 3.0}), delta=0.6)
    assert fix.reached and fix.time == 3.0
    assert fix.scaled == pytest.approx(3.0 / math.log(100))


def test_fixation_not_reached_when_last_point_is_outside():
    tr = _traj([3.0, 3.0, 1.0])
    assert not measure_fixation_time(tr, Configuration({0: 3.0}), delta=0.5).reached


def test_fixation_from_the_start_and_without_epsilon_scaling():
    tr = _traj([3.0, 3.1], epsilon=1.0)
    fix = measure_fixation_time(tr, Configuration({0: 3.0}), delta=0.5)
    assert fix.time == 0.0 and fix.scaled is None


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=30), st.floats(0.1, 5))
def test_fixation_time_shrinks_as_delta_grows(values, delta):
    tr = _traj(values)
    target = Configuration({0: 5.0})
    small = measure_fixation_time(tr, target, delta)
    large = measure_fixation_time(tr, target, 2 * delta)
    if small.reached:
        assert large.reached and large.time <= small.time


def test_compare_self_is_zero():
    tr = _traj([[1.0, 2.0], [3.0, 4.0]])
    tr.trait_ids = ["x0", "x1"]
    assert compare_to_ode(tr, tr).sup_gap == 0.0


def test_compare_ensemble_mean():
    times = np.array([0.0, 1.0])
    mean = np.array([[1.0], [2.5]])
    ens = EnsembleStats(["x0"], times, 10, mean, mean * 0, mean, mean)
    ode = _traj([1.0, 2.0], times)
    cmp = compare_to_ode(ens, ode)
    assert cmp.sup_gap == 0.5 and cmp.gaps.tolist() == [0.0, 0.5]


def test_compare_mismatches():
    a = _traj([1.0, 2.0])
    with pytest.raises(GridMismatchError):
        compare_to_ode(a, _traj([1.0, 2.0, 3.0]))
    with pytest.raises(GridMismatchError):
        compare_to_ode(a, _traj([[1.0, 0.0], [2.0, 0.0]]))


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 100_000), st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.05, 1.0))
def test_smaller_epsilon_never_breaks_the_upper_separation(K, a, shrink, rho):
    wide = ScalingRegime(K, epsilon=K**-a)
    narrow = ScalingRegime(K, epsilon=K**-a * shrink)
    upper = "K*epsilon << K"
    before = {c.name: c.passed for c in check_scaling(wide, rho, mutation=False).checks}[upper]
    after = {c.name: c.passed for c in check_scaling(narrow, rho, mutation=False).checks}[upper]
    assert after or not before


def test_listed_k400_regime_fails_the_mutation_separation_at_default_margin():
    reg = ScalingRegime.from_exponents(400, a=0.8, c=1.5)
    check = {c.name: c for c in check_scaling(reg).checks}["ln(1/epsilon) << 1/(K*sigma)"]
    assert check.ratio == pytest.approx(0.2397, abs=1e-4)
    assert not check.passed
    assert {c.name: c for c in check_scaling(reg, rho=0.25).checks}["ln(1/epsilon) << 1/(K*sigma)"].passed


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1.0, 30.0), min_size=3, max_size=7, unique=True).map(sorted))
def test_prediction_depends_only_on_the_triple(bs):
    if min(b - a for a, b in zip(bs, bs[1:])) < 1e-6:
        return
    small = predicted_fixation_time(TraitCatalog.ladder(bs[:3]), [0, 1, 2])
    large = predicted_fixation_time(TraitCatalog.ladder(bs), [0, 1, 2])
    assert large == small
