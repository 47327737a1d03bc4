import math

import numpy as np
import pytest

from exclusion_lab._rng import derive_seed
from exclusion_lab.checks import label_flux
from exclusion_lab.coupling import NestedFamily, reflect_holes, reflect_stream
from exclusion_lab.engine import (
    Configuration,
    Event,
    EventStream,
    Window,
    evolve_to,
    sample_initial_step,
)
from exclusion_lab.kernel import StepProfileParams, integrated_profile, parse_kernel
from exclusion_lab.observables import (
    BufferInadequate,
    CrossingCounter,
    FluxCounter,
    MoveCrossingCounter,
    SubadditiveRecord,
    bernoulli_marginal_test,
    density_from_X,
    empirical_density,
    estimate_X_infinity,
    flux_identity_check,
    flux_observe,
    lln_error,
    run_trajectory,
    subadditive_array,
)

TASEP = parse_kernel("1:1")
MIXED = parse_kernel("2:0.5,-1:0.5")


# -- flux -------------------------------------------------------------------


def test_flux_observe_examples():
    w = Window(-5, 5)
    c = FluxCounter(0)
    flux_observe(c, Event(0.1, 0, 1), Configuration.from_sites(w, [0]))
    assert c.count == 1
    flux_observe(c, Event(0.2, 1, -2), Configuration.from_sites(w, [1]))
    assert c.count == 0
    flux_observe(c, Event(0.3, 0, 1), Configuration.from_sites(w, [0, 1]))
    assert c.count == 0


def test_flux_identity_trivial_cases():
    w = Window(-5, 5)
    c = Configuration.from_sites(w, [0])
    none = run_trajectory(c, EventStream(1, TASEP, w), 0.0, [0.0])
    assert none.fluxes[0.0] == 0 and flux_identity_check(none, 0.0)
    # advance to the first applied jump of the lone particle: exactly one crossing of 0
    s = EventStream(1, TASEP, w)
    t_first = next(e.time for e in s if e.site == 0)
    one = run_trajectory(c, EventStream(1, TASEP, w), t_first, [0.0])
    assert one.fluxes[0.0] == 1 and flux_identity_check(one, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_flux_identity_long_runs(seed):
    w = Window(-80, 80)
    c = sample_initial_step(w, StepProfileParams(0.8, 0.3), seed)
    bounds = [-20.5, -1.0, 0.0, 3.5, 40.0]
    traj = run_trajectory(c, EventStream(seed, MIXED, w), 700.0, bounds)
    assert traj.events >= 100_000
    assert all(flux_identity_check(traj, r) for r in bounds)


def test_native_and_python_flux_counters_agree():
    w = Window(-25, 25)
    c = sample_initial_step(w, StepProfileParams(0.9, 0.1), 4)
    native = [FluxCounter(r) for r in (-2.0, 0.0, 1.5)]
    evolve_to(c, EventStream(4, MIXED, w), 30.0, observers=native)
    python = [FluxCounter(r) for r in (-2.0, 0.0, 1.5)]
    evolve_to(c, EventStream(4, MIXED, w), 30.0,
              observers=[lambda ev, before, o=o: flux_observe(o, ev, before) for o in python])
    assert [o.count for o in native] == [o.count for o in python]
    for r, o in zip((-2.0, 0.0, 1.5), native):
        assert label_flux(c, EventStream(4, MIXED, w), 30.0, r)[0] == o.count


def test_flux_under_hole_reflection():
    """Each particle crossing rightward across bond r is a hole crossing leftward;
    in reflected coordinates that hole crosses bond -r-1 rightward."""
    w = Window(-30, 30)
    for seed in range(4):
        c = sample_initial_step(w, StepProfileParams(0.7, 0.2), seed)
        for r in (-3, 0, 5):
            direct = FluxCounter(r)
            evolve_to(c, EventStream(seed, MIXED, w), 40.0, observers=[direct])
            mirrored = FluxCounter(-r - 1)
            evolve_to(reflect_holes(c), reflect_stream(EventStream(seed, MIXED, w)), 40.0,
                      observers=[mirrored])
            assert mirrored.count == direct.count


def test_crossing_counters():
    w = Window(-15, 15)
    c = sample_initial_step(w, StepProfileParams(0.5, 0.5), 2)
    marks, native_marks, moves = CrossingCounter(0), CrossingCounter(0), MoveCrossingCounter(0)
    evolve_to(c, EventStream(2, MIXED, w), 20.0, observers=[native_marks])
    evolve_to(c, EventStream(2, MIXED, w), 20.0, observers=[marks, moves])
    assert marks.count == native_marks.count
    assert 0 < moves.count <= marks.count


# -- densities --------------------------------------------------------------


def test_empirical_density_examples():
    w = Window(-10, 110)
    assert empirical_density(Configuration.empty(w), 0, 1, 100) == 0
    assert empirical_density(Configuration.full(w), 0, 1, 100) == pytest.approx(1.01)


def test_empirical_density_flags_unsafe_interval():
    w = Window(-10, 10)
    c = sample_initial_step(w, StepProfileParams(1.0, 0.0), 0)
    out = evolve_to(c, EventStream(0, TASEP, w), 30.0)
    with pytest.raises(BufferInadequate):
        empirical_density(out, -0.3, 0.3, 30.0)


def test_lln_error_constant_profile_centred():
    p, t = StepProfileParams(0.4, 0.4), 50.0
    errors = []
    for i in range(30):
        w = Window(-250, 250)
        seed = derive_seed(3, i)
        out = evolve_to(sample_initial_step(w, p, seed), EventStream(seed, MIXED, w), t)
        errors.append(lln_error(out, -1, 1, t, MIXED, p))
    sd = math.sqrt(101 * 0.24) / t / math.sqrt(len(errors))
    assert abs(np.mean(errors)) <= 3 * sd


# -- subadditive array ------------------------------------------------------


def zero_record(n_max=5):
    entries = {(m, n): 0 for n in range(n_max + 1) for m in range(n + 1)}
    return SubadditiveRecord(1.0, n_max, entries)


def test_estimate_all_zero():
    est = estimate_X_infinity(zero_record())
    assert est.value == 0 and est.slope == 0


def test_subadditive_diagonal_and_pathwise():
    rec = subadditive_array(StepProfileParams(0.8, 0.2), parse_kernel("2:1"), 1.0, 12, seed=5)
    assert all(rec.X(n, n) == 0 for n in range(13))
    assert rec.subadditivity_violations() == []
    assert rec.X(0, 1) <= rec.crossings_first_step
    assert (rec.matrix()[np.tril_indices(13, -1)] == -1).all()


def test_subadditive_equal_densities_vanish():
    rec = subadditive_array(StepProfileParams(0.5, 0.5), TASEP, 1.0, 8, seed=1)
    assert all(v == 0 for v in rec.entries.values())
    assert estimate_X_infinity(rec).value == 0


def test_subadditive_detects_small_window():
    with pytest.raises(BufferInadequate):
        subadditive_array(StepProfileParams(1.0, 0.0), TASEP, 0.5, 20, seed=0,
                          window=Window(-3, 30))


def test_subadditive_uses_given_initial_pair():
    w = Window(-60, 100)
    sigma = Configuration.from_sites(w, range(5, 101, 3))
    theta = Configuration(w, np.maximum(sigma.occupancy, (w.sites <= 0).astype(np.uint8)))
    pair = NestedFamily.from_configs([sigma, theta])
    rec = subadditive_array(StepProfileParams(1.0, 0.0), TASEP, 1.0, 10, seed=2, initial=pair)
    assert rec.subadditivity_violations() == []


def test_density_from_X_plateau_formula():
    p = StepProfileParams(0.7, 0.2)
    assert density_from_X(0.5, 1.0, p, 0.0, 0.0) == pytest.approx(0.1)
    assert density_from_X(0.5, 1.0, p, 0.4, 0.1) == pytest.approx(0.1 + 0.2 - 0.1)


# -- product-marginal test --------------------------------------------------


def test_marginal_fresh_samples_pass():
    w = Window(-300, 300)
    p = StepProfileParams(0.5, 0.5)
    configs = [sample_initial_step(w, p, derive_seed(9, i)) for i in range(20)]
    assert bernoulli_marginal_test(configs, (-300, 300), 0.5).passed


def test_marginal_after_evolution_passes():
    w = Window(-500, 500)
    p, t = StepProfileParams(0.5, 0.5), 100.0
    configs = []
    for i in range(20):
        seed = derive_seed(4, i)
        configs.append(evolve_to(sample_initial_step(w, p, seed), EventStream(seed, MIXED, w), t))
    lo = max(c.safe_range[0] for c in configs)
    hi = min(c.safe_range[1] for c in configs)
    assert hi - lo > 100
    assert bernoulli_marginal_test(configs, (lo, hi), 0.5).passed


def test_marginal_alternating_fails_on_covariance():
    w = Window(0, 199)
    alt = Configuration(w, (w.sites % 2).astype(np.uint8))
    report = bernoulli_marginal_test([alt] * 5, (0, 199), 0.5)
    assert not report.passed
    assert abs(report.mean_z) < 3 and report.cov_z < -3


def test_marginal_degenerate_density():
    w = Window(0, 9)
    assert bernoulli_marginal_test([Configuration.full(w)], (0, 9), 1.0).passed
    assert not bernoulli_marginal_test([Configuration.empty(w)], (0, 9), 1.0).passed
