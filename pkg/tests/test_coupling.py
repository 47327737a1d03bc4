import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exclusion_lab.checks import random_nested
from exclusion_lab.coupling import (
    NestedFamily,
    NestingError,
    burn_in_coupled,
    class_view,
    coupled_product,
    evolve_nested,
    merge_T,
    reclass_at,
    reflect_holes,
    reflect_stream,
    truncate_left,
    truncate_right,
)
from exclusion_lab.engine import (
    Configuration,
    Event,
    EventStream,
    Window,
    apply_event,
    evolve_to,
    sample_initial_step,
)
from exclusion_lab.kernel import StepProfileParams, parse_kernel

MIXED = parse_kernel("2:0.5,-1:0.5")
W = Window(-10, 10)


def conf(*sites, window=W):
    return Configuration.from_sites(window, sites)


def occupancy_sets(window, bits):
    return Configuration(window, np.array(bits, dtype=np.uint8))


# -- nested evolution -------------------------------------------------------


def test_single_level_equals_plain_evolution():
    c = sample_initial_step(W, StepProfileParams(0.7, 0.2), 4)
    fam = evolve_nested(NestedFamily.from_configs([c]), EventStream(4, MIXED, W), 30.0)
    assert fam.level(0) == evolve_to(c, EventStream(4, MIXED, W), 30.0)


def test_empty_first_level_gives_plain_exclusion_for_class_two():
    c = sample_initial_step(W, StepProfileParams(0.7, 0.2), 5)
    fam = NestedFamily.from_configs([Configuration.empty(W), c])
    out = evolve_nested(fam, EventStream(5, MIXED, W), 25.0)
    assert np.array_equal(out.class_occupancy(2), evolve_to(c, EventStream(5, MIXED, W), 25.0).occupancy)
    assert out.class_occupancy(1).sum() == 0


@pytest.mark.parametrize("seed", range(5))
def test_attractiveness_and_marginals(seed):
    fam = random_nested(W, 3, seed)
    info = []
    out = evolve_nested(fam, EventStream(seed, MIXED, W), 200.0, info=info)
    assert out.is_nested() and info[0].nest_violations == 0
    for j in range(3):
        solo = evolve_to(fam.level(j), EventStream(seed, MIXED, W), 200.0)
        assert np.array_equal(solo.occupancy, out.levels[j])


def test_class_counts_conserved():
    fam = random_nested(W, 4, 9)
    info = []
    out = evolve_nested(fam, EventStream(9, MIXED, W), 100.0, info=info)
    for j in range(1, 5):
        assert out.class_occupancy(j).sum() == fam.class_occupancy(j).sum()


def test_rejects_unnested():
    fam = NestedFamily.from_configs([conf(1), conf(2)])
    with pytest.raises(NestingError):
        evolve_nested(fam, EventStream(0, MIXED, W), 1.0)
    with pytest.raises(NestingError):
        class_view(fam)


# -- class view -------------------------------------------------------------


def test_class_view_examples():
    same = NestedFamily.from_configs([conf(0, 3), conf(0, 3)])
    assert set(class_view(same).labels) <= {0, 1}
    fam = NestedFamily.from_configs([conf(), conf(4)])
    view = class_view(fam)
    assert view.labels[W.index(4)] == 2
    assert view.counts().tolist() == [W.size - 1, 0, 1]


def test_class_view_csv(tmp_path):
    view = class_view(NestedFamily.from_configs([conf(1), conf(1, 2)]))
    view.dump_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "site,class" and f"{1},1" in lines and "2,2" in lines


# -- truncations and merge --------------------------------------------------


def test_truncations():
    c = sample_initial_step(W, StepProfileParams(0.5, 0.5), 3)
    assert truncate_left(c, W.hi) == c
    assert truncate_left(c, W.lo - 1) == Configuration.empty(W)
    for m in (-4, 0, 6):
        left, right = truncate_left(c, m), truncate_right(c, m)
        assert np.array_equal(left.occupancy + right.occupancy, c.occupancy)
        assert left.occupancy[W.sites > m].sum() == 0


def test_merge_examples():
    assert merge_T(conf(), conf(-1, 1)) == conf(-1)
    c = conf(-3, 0, 5)
    assert merge_T(c, c) == c
    assert merge_T(conf(2), conf(-3, 2)) == conf(-3, 2)
    with pytest.raises(NestingError):
        merge_T(conf(2), conf(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([0, 1]), min_size=21, max_size=21),
       st.lists(st.sampled_from([0, 1]), min_size=21, max_size=21))
def test_merge_lies_between(a, b):
    lower = np.minimum(a, b)
    upper = np.maximum(a, b)
    s, t = occupancy_sets(W, lower), occupancy_sets(W, upper)
    m = merge_T(s, t)
    assert s <= m <= t


# -- reflection -------------------------------------------------------------


def test_reflect_holes_examples():
    assert reflect_holes(Configuration.empty(W)) == Configuration.full(W)
    r = reflect_holes(conf(3))
    assert r.particles == W.size - 1 and r[-3] == 0
    c = sample_initial_step(W, StepProfileParams(0.6, 0.1), 2)
    assert reflect_holes(reflect_holes(c)) == c
    with pytest.raises(ValueError):
        reflect_holes(Configuration.empty(Window(-3, 4)))


def test_reflect_stream_maps_marks():
    s = EventStream(6, MIXED, W)
    r = reflect_stream(EventStream(6, MIXED, W))
    for _ in range(300):
        a, b = s.next_event(), r.next_event()
        assert b.time == a.time and b.displacement == a.displacement
        assert b.site == -(a.site + a.displacement)
        assert b.target == -a.site
    back = reflect_stream(r)
    assert not back.reflected


def test_hole_move_is_reflected_particle_move():
    # particle 0 -> 2 means a hole 2 -> 0; reflected, the hole sits at -2 and moves to 0 (z = +2)
    before = conf(0)
    after = apply_event(before, Event(1.0, 0, 2))
    reflected_event = Event(1.0, -(0 + 2), 2)
    assert apply_event(reflect_holes(before), reflected_event) == reflect_holes(after)


@pytest.mark.parametrize("seed", range(4))
def test_reflection_conjugacy(seed):
    p = StepProfileParams(0.8, 0.3)
    c = sample_initial_step(W, p, seed)
    direct = evolve_to(c, EventStream(seed, MIXED, W), 60.0)
    mirrored = evolve_to(reflect_holes(c), reflect_stream(EventStream(seed, MIXED, W)), 60.0)
    assert reflect_holes(direct) == mirrored


# -- re-splitting -----------------------------------------------------------


def four(sigma, xi, zeta):
    s = np.asarray(sigma, dtype=np.uint8)
    x = np.asarray(xi, dtype=np.uint8)
    z = np.asarray(zeta, dtype=np.uint8)
    return NestedFamily(W, np.stack([s, s + x, s + x, s + x + z]))


def indicator(*sites):
    return conf(*sites).occupancy


def test_reclass_identity_when_nothing_to_move():
    fam = four(indicator(-5, 7), indicator(-2, 1), indicator())
    assert reclass_at(fam, 3, 1.0) == fam


def test_reclass_moves_mass_as_specified():
    fam = four(indicator(-8), indicator(-1, 5), indicator(2, 6))
    out = reclass_at(fam, 3, 0.5)
    assert np.array_equal(out.levels[3], fam.levels[3])
    assert np.array_equal(out.class_occupancy(2), indicator(-1, 2))   # T_3(xi + zeta)
    assert np.array_equal(out.class_occupancy(3), indicator(5))       # V_3(xi)
    assert np.array_equal(out.class_occupancy(4), indicator(6))       # V_3(zeta)
    total = sum(out.class_occupancy(j).sum() for j in (2, 3, 4))
    assert total == fam.class_occupancy(2).sum() + fam.class_occupancy(4).sum()


def test_reclass_rejects_bad_input():
    with pytest.raises(ValueError):
        reclass_at(NestedFamily.from_configs([conf(), conf(1)]), 0, 1.0)
    s = indicator()
    bad = NestedFamily(W, np.stack([s, s, indicator(1), indicator(1)]))
    with pytest.raises(ValueError):
        reclass_at(bad, 0, 1.0)
    with pytest.raises(ValueError):
        reclass_at(four(s, s, s), 0, 0.0)


# -- burn-in ----------------------------------------------------------------


def test_product_coupling_is_nested_with_right_marginals():
    w = Window(-5000, 5000)
    pair = coupled_product(StepProfileParams(0.8, 0.3), w, 1)
    assert pair.is_nested()
    assert abs(pair.levels[0].mean() - 0.3) < 0.02 and abs(pair.levels[1].mean() - 0.8) < 0.02


def test_burn_in_equal_densities_gives_equal_levels():
    pair = burn_in_coupled(StepProfileParams(0.4, 0.4), MIXED, Window(-30, 30), t_burn=50.0, seed=3)
    assert np.array_equal(pair.levels[0], pair.levels[1])


def test_burn_in_keeps_nesting_and_particle_counts():
    w = Window(-30, 30)
    start = coupled_product(StepProfileParams(0.8, 0.3), w, 2)
    pair = burn_in_coupled(StepProfileParams(0.8, 0.3), MIXED, w, t_burn=80.0, seed=2)
    assert pair.is_nested()
    assert pair.levels.sum(axis=1).tolist() == start.levels.sum(axis=1).tolist()
    assert pair != start
    with pytest.raises(ValueError):
        burn_in_coupled(StepProfileParams(0.8, 0.3), MIXED, w, t_burn=-1.0)
