import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import triangle_wave
from semigroup_lab.space import example_space, explicit_space, flow_space
from semigroup_lab.testfn import (CB, LB, LBS, TestFunction, capped_identity, constant, identity, indicator_smoothed,
                                  make_tent, make_triangular_wave, resolve, spikes, tabulated, validate_class)


def test_tent_on_interval():
    f = make_tent((1.0, 2.0), 0.5)
    assert f.class_tag == LBS
    assert np.allclose(f(np.array([0.5, 0.75, 1.5, 2.25, 3.0])), [0.0, 0.5, 1.0, 0.5, 0.0])
    assert f.lipschitz_constant == 2.0 and f.support_bound == 1.0


def test_tent_on_point_set_of_explicit_space():
    s = explicit_space(["a", "b", "c"], [[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    f = make_tent(["a"], 2.0, s)
    assert np.allclose(f.values(s), [1.0, 0.5, 0.0])
    assert validate_class(f, s).passed


def test_tent_rejects_bad_input():
    with pytest.raises(ValueError):
        make_tent((1.0, 2.0), 0.0)
    with pytest.raises(ValueError):
        make_tent((2.0, 1.0), 1.0)
    with pytest.raises(ValueError):
        make_tent([], 1.0)


@given(st.floats(1.0, 500.0))
def test_triangle_wave_matches_oracle(x):
    assert make_triangular_wave()(x) == pytest.approx(triangle_wave(x), abs=1e-12)


def test_triangle_wave_domain():
    with pytest.raises(ValueError):
        make_triangular_wave()(0.5)


def test_spikes_are_narrowing():
    f = spikes()
    assert f(5.0) == 1.0 and f(5.0 + 1 / 25) == 0.0 and f(5.0 + 1 / 50) == pytest.approx(0.5)
    assert f.class_tag == CB and f.lipschitz_constant is None


def test_validate_class_catches_lipschitz_violation():
    s = flow_space(1.0, 100.0)
    bad = spikes()
    object.__setattr__(bad, "lipschitz_constant", 1.0)
    assert not validate_class(bad, s, sample=[5.0, 5.01, 7.0]).passed
    assert validate_class(make_triangular_wave(), s, sample=np.linspace(1, 20, 200)).passed


def test_validate_class_continuity_at_limit_point():
    s = example_space("example1", 50)
    assert validate_class(identity(), s).passed
    jump = tabulated({lab: (0.0 if lab == "0" else 1.0) for lab in s.labels})
    check = validate_class(jump, s)
    assert not check.passed and "limit point" in check.violation


def test_validate_class_lbs_requirements():
    s = example_space("example1", 5)
    unbounded_support = TestFunction("ramp", LBS, on_coords=lambda x: np.clip(x, 0, 1), sup_bound=1.0,
                                     lipschitz_constant=1.0)
    assert "support bound" in validate_class(unbounded_support, s).violation
    negative = TestFunction("neg", LBS, on_coords=lambda x: -x, lipschitz_constant=1.0, support_bound=2.0)
    assert "negative" in validate_class(negative, s).violation
    assert validate_class(make_tent(["0"], 0.5, s), s).passed


def test_scaled_keeps_certificates():
    f = make_tent((0.0, 1.0), 0.5).scaled(3.0)
    assert f.sup_bound == 3.0 and f.lipschitz_constant == 6.0
    assert f(0.5) == 3.0
    with pytest.raises(ValueError):
        f.scaled(0.0)


def test_constant_and_identity():
    s = example_space("example2", 4)
    assert np.all(constant(2.0).values(s) == 2.0)
    assert constant(2.0).sup_norm() == 2.0
    assert np.array_equal(identity().values(s), s.coordinates)
    assert capped_identity().values(s).max() == 1.0


def test_resolve_registry():
    s = example_space("example1", 5)
    assert resolve("identity").name == "identity"
    assert resolve("const(0.5)").constant == 0.5
    assert resolve("tent(1:2,0.5)")(1.5) == 1.0
    assert resolve("tent(0;1/5,1/10)", s).values(s)[s.index_of("1/5")] == 1.0
    assert resolve("indicator_smoothed(1,2,0.5)")(2.25) == pytest.approx(0.5)
    assert resolve("0=1;1=2").table == {"0": 1.0, "1": 2.0}
    with pytest.raises(ValueError):
        resolve("sin")


def test_tabulated_missing_point():
    s = example_space("example1", 3)
    with pytest.raises(KeyError):
        tabulated({"0": 1.0}).values(s)
