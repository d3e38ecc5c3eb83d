import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bl_vertex_enumeration
from semigroup_lab.measure import (Ball, Measure, bl_distance, boundary_mass, convex_combine, format_measure,
                                   lbs_convergence_check, pair, parse_measure, portmanteau_battery,
                                   restrict_normalize, support, total_variation)
from semigroup_lab.space import coordinate_space, example_space, explicit_space, flow_space
from semigroup_lab.testfn import capped_identity, constant, identity


@st.composite
def measure_triples(draw, max_points=8):
    n = draw(st.integers(1, max_points))
    coords = draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=n, max_size=n, unique=True))
    space = coordinate_space(coords, [f"p{i}" for i in range(n)])
    weights = st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n)
    ms = []
    for _ in range(3):
        w = np.array(draw(weights)) + 1e-9
        ms.append(Measure(space, w / w.sum()))
    return ms


@st.composite
def explicit_pairs(draw):
    n = draw(st.integers(2, 4))
    pts = np.array(draw(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=n, max_size=n)))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    if np.any(d[~np.eye(n, dtype=bool)] < 1e-3):
        d = d + 1e-3 * (1 - np.eye(n))
    space = explicit_space([f"q{i}" for i in range(n)], d)
    a = np.array(draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))) + 1e-9
    b = np.array(draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))) + 1e-9
    return space, a / a.sum(), b / b.sum()


@settings(max_examples=200, deadline=None)
@given(measure_triples())
def test_bl_metric_axioms(triple):
    mu, nu, eta = triple
    assert bl_distance(mu, mu) <= 1e-12
    d_mn, d_nm = bl_distance(mu, nu), bl_distance(nu, mu)
    assert d_mn >= 0
    assert d_mn == pytest.approx(d_nm, abs=1e-10)
    assert d_mn <= bl_distance(mu, eta) + bl_distance(eta, nu) + 1e-10
    assert d_mn <= total_variation(mu, nu) + 1e-12


@settings(max_examples=200, deadline=None)
@given(measure_triples(max_points=4))
def test_bl_chain_matches_vertex_oracle(triple):
    mu, nu, _ = triple
    c = mu.space.coordinates
    ref = bl_vertex_enumeration(mu.weights - nu.weights, np.abs(c[:, None] - c[None, :]))
    assert bl_distance(mu, nu) == pytest.approx(ref, abs=1e-8)
    assert bl_distance(mu, nu, method="lp") == pytest.approx(ref, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(measure_triples())
def test_bl_chain_matches_lp_on_eight_points(triple):
    mu, nu, _ = triple
    assert bl_distance(mu, nu) == pytest.approx(bl_distance(mu, nu, method="lp"), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(explicit_pairs())
def test_bl_explicit_metric_matches_vertex_oracle(case):
    space, a, b = case
    ref = bl_vertex_enumeration(a - b, space.metric_matrix)
    assert bl_distance(Measure(space, a), Measure(space, b)) == pytest.approx(ref, abs=1e-8)


def test_bl_two_diracs_is_min_of_distance_and_two():
    s = coordinate_space([0.0, 0.3, 5.0], ["a", "b", "c"])
    da, db, dc = (Measure.dirac(s, k) for k in "abc")
    assert bl_distance(da, db) == pytest.approx(0.3)
    assert bl_distance(da, dc) == pytest.approx(2.0)


def test_bl_on_flow_atoms():
    s = flow_space(1.0, 10.0)
    mu = Measure(s, np.array([0.5, 0.5]), np.array([2.0, 3.0]))
    nu = Measure(s, np.array([1.0]), np.array([2.5]))
    assert bl_distance(mu, nu) == pytest.approx(0.5)
    assert bl_distance(mu, nu, method="lp") == pytest.approx(0.5)


def test_bl_rejects_mixed_spaces_and_unknown_method():
    a, b = example_space("example1", 3), example_space("example1", 3)
    with pytest.raises(ValueError):
        bl_distance(Measure.dirac(a, "0"), Measure.dirac(b, "0"))
    with pytest.raises(ValueError):
        bl_distance(Measure.dirac(a, "0"), Measure.dirac(a, "1"), method="simplex")


def test_measure_validation():
    s = example_space("example1", 3)
    with pytest.raises(ValueError):
        Measure(s, np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        Measure(s, np.array([1.5, -0.5, 0.0, 0.0, 0.0]))
    assert Measure.dirac(s, "1/2").is_probability()


def test_format_parse_round_trip():
    s = example_space("example2", 5)
    mu = Measure.from_mapping(s, {"0": 0.25, "1/3": 0.5, "4": 0.25})
    text = format_measure(mu)
    assert text == "0=0.25;1/3=0.5;4=0.25"
    assert np.array_equal(parse_measure(s, text).weights, mu.weights)
    assert parse_measure(s, "1/5").weight("1/5") == 1.0


def test_pair_and_support():
    s = example_space("example1", 4)
    mu = Measure.from_mapping(s, {"1/2": 0.5, "1": 0.5})
    assert pair(identity(), mu) == pytest.approx(0.75)
    assert pair(constant(3.0), mu) == pytest.approx(3.0)
    assert {p.label for p in support(mu)} == {"1/2", "1"}
    assert {p.label for p in support(mu, threshold=0.6)} == set()


def test_convex_combine_and_restrict():
    s = example_space("example1", 4)
    a, b = Measure.dirac(s, "0"), Measure.dirac(s, "1")
    m = convex_combine([0.25, 0.75], [a, b])
    assert m.weight("1") == 0.75
    r = restrict_normalize(m, s.ball_members("0", 0.1))
    assert r.weight("0") == 1.0
    with pytest.raises(ValueError):
        restrict_normalize(a, ["1"])
    with pytest.raises(ValueError):
        convex_combine([-0.1, 1.1], [a, b])


def test_boundary_mass():
    s = example_space("example1", 4)
    mu = Measure.from_mapping(s, {"1/2": 0.5, "1/4": 0.5})
    assert boundary_mass(mu, "0", 0.5) == 0.5
    assert boundary_mass(mu, "0", 0.4) == 0.0


def test_portmanteau_agrees_on_converging_sequence():
    s = example_space("example1", 50)
    seq = [Measure.dirac(s, f"1/{n}") for n in range(1, 51)]
    rep = portmanteau_battery(seq, Measure.dirac(s, "0"), tol=0.05)
    assert rep.consistent


def test_portmanteau_flags_non_convergence():
    s = example_space("example1", 20)
    seq = [Measure.dirac(s, "1") for _ in range(10)]
    rep = portmanteau_battery(seq, Measure.dirac(s, "0"))
    assert not rep.converges
    assert rep.gaps["closed_sets"] > 0.5


def test_lbs_tents_detect_convergence():
    s = example_space("example1", 2000)
    seq = [Measure.dirac(s, f"1/{n}") for n in range(1000, 2001)]
    good = lbs_convergence_check(seq, Measure.dirac(s, "0"), [0.5, 0.1], tol=0.02)
    bad = lbs_convergence_check(seq, Measure.dirac(s, "1"), [0.5, 0.1], tol=0.02)
    assert good.passed and not bad.passed


def test_ball_members_open_and_closed():
    s = example_space("example1", 4)
    assert set(Ball("0", 0.5).members(s)) == {s.index_of(x) for x in ["0", "1/4", "1/3"]}
    assert s.index_of("1/2") in Ball("0", 0.5, closed=True).members(s)
    assert capped_identity().values(s, [s.index_of("1")])[0] == 1.0
