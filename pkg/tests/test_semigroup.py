import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from oracles import example1_row, expm_mp
from semigroup_lab.measure import Measure, bl_distance, pair, total_variation
from semigroup_lab.semigroup import (GeneratorMatrix, GeneratorModel, chapman_kolmogorov_residual, dual_apply,
                                     invariant_measure, matrix_exponential, poisson_weights, propagate_vector,
                                     sample_states_at, sample_trajectory, taylor_exponential)
from semigroup_lab.space import coordinate_space
from semigroup_lab.testfn import capped_identity, identity, tabulated
from semigroup_lab.zoo import birth_death_generator, instantiate


def random_generator(rng, n, scale=1.0):
    q = rng.uniform(0, scale, (n, n)) * (rng.random((n, n)) < 0.6)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    space = coordinate_space(np.arange(n, dtype=float), [str(i) for i in range(n)])
    return GeneratorMatrix(space, q)


def test_poisson_weights_tail():
    w = poisson_weights(37.5)
    assert 1.0 - w.sum() < 1e-13
    assert w[0] == pytest.approx(np.exp(-37.5))
    with pytest.raises(ValueError):
        poisson_weights(-1.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("t", [1e-6, 0.01, 0.7, 5.0, 400.0])
def test_uniformization_matches_extended_precision(seed, t):
    Q = random_generator(np.random.default_rng(seed), 5, scale=3.0)
    P = matrix_exponential(Q, t)
    assert np.abs(P - expm_mp(Q.entries, t)).max() < 1e-12
    assert np.all(P >= 0)
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-12


def test_uniformization_large_rate_time_is_halved():
    g = birth_death_generator([300.0, 300.0], [300.0, 300.0])
    P = matrix_exponential(g, 10.0)
    assert np.allclose(P, 1 / 3, atol=1e-12)


def test_taylor_agrees_for_small_times():
    Q = random_generator(np.random.default_rng(7), 4)
    assert np.abs(taylor_exponential(Q, 0.2) - matrix_exponential(Q, 0.2)).max() < 1e-13


def test_propagate_vector_matches_matrix():
    Q = random_generator(np.random.default_rng(3), 6, scale=2.0)
    v = np.linspace(-1, 1, 6)
    for t in (0.0, 0.3, 12.0, 900.0):
        assert np.abs(propagate_vector(Q, v, t) - matrix_exponential(Q, t) @ v).max() < 1e-12


def test_generator_validation():
    s = coordinate_space([0.0, 1.0], ["a", "b"])
    with pytest.raises(ValueError):
        GeneratorMatrix(s, [[-1.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        GeneratorMatrix(s, [[1.0, -1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        GeneratorMatrix(s, [[0.0]])


def test_example1_rows_match_closed_form():
    e = instantiate("example1", n_max=30)
    for n in (0, 1, 2, 7, 30):
        lab = "0" if n == 0 else ("1" if n == 1 else f"1/{n}")
        for t in (0.01, 0.5, 3.0):
            row = e.model.row(lab, t)
            ref = Measure.from_mapping(e.space, example1_row(n, t))
            assert np.abs(row.weights - ref.weights).max() < 1e-15
    assert e.model.row("0", 0.0).weight("0") == 1.0


def _finite_models():
    e2 = instantiate("example2", n_max=12)
    return {
        "example1": instantiate("example1", n_max=40).model,
        "example2": e2.model,
        "example2_generator": e2.alternate,
        "antifeller": instantiate("antifeller", n_max=40).model,
        "birth_death": instantiate("birth_death", n_states=6, seed=3).model,
    }


MODELS = _finite_models()
GENERATOR_MODELS = {k: v for k, v in MODELS.items() if isinstance(v, GeneratorModel)}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_transition_matrices_are_stochastic(name):
    m = MODELS[name]
    for t in (0.0, 1e-3, 0.3, 4.0, 60.0):
        M = m.matrix(t)
        M = M.toarray() if sparse.issparse(M) else M
        assert M.min() >= 0
        assert np.abs(M.sum(axis=1) - 1).max() < 1e-12


@pytest.mark.parametrize("name", sorted(MODELS))
def test_chapman_kolmogorov_on_random_pairs(name):
    rng = np.random.default_rng(11)
    m = MODELS[name]
    worst = max(chapman_kolmogorov_residual(m, s, t) for s, t in rng.uniform(0, 5, (100, 2)))
    assert worst <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(MODELS)), st.floats(0.0, 20.0), st.integers(0, 2**31 - 1))
def test_duality_and_mass_conservation(name, t, seed):
    m = MODELS[name]
    rng = np.random.default_rng(seed)
    mu = Measure(m.space, rng.dirichlet(np.ones(m.space.size)))
    f = tabulated(dict(zip(m.space.labels, rng.uniform(-1, 1, m.space.size))))
    nu = m.evolve(mu, t)
    assert abs(nu.mass - 1.0) <= 1e-12
    assert abs(pair(f, nu) - float(mu.weights @ m.dual_values(f, t))) <= 1e-10


def test_dual_on_grid_propagation_matches_pointwise():
    m = MODELS["example2_generator"]
    f = capped_identity()
    times = [3.0, 0.0, 0.25, 10.0, 0.25]
    fast = m.dual_on_grid(f, times, np.arange(m.space.size))
    slow = np.array([m.dual_values(f, t) for t in times])
    assert np.abs(fast - slow).max() < 1e-12


def test_generator_and_closed_form_example2_agree():
    e = instantiate("example2", n_max=12)
    for t in (0.05, 1.0, 7.0):
        A = e.model.matrix(t).toarray()
        B = e.alternate.matrix(t)
        assert np.abs(A - B).max() < 1e-12


def test_dual_apply_tabulates():
    m = MODELS["example1"]
    g = dual_apply(m, identity(), 1.0, ["1/2", "0"])
    assert g.table["0"] == 1.0
    assert g.table["1/2"] == pytest.approx(0.5 * np.exp(-2) + 1 - np.exp(-2))


def test_flow_model_evolves_atoms():
    shift = instantiate("shift_flow", horizon=100.0).model
    mu = Measure(shift.space, np.array([0.5, 0.5]), np.array([1.0, 2.0]))
    nu = shift.evolve(mu, 3.0)
    assert np.array_equal(nu.positions, [4.0, 5.0])
    with pytest.raises(ValueError):
        shift.row(50.0, 60.0)
    with pytest.raises(TypeError):
        shift.matrix(1.0)
    masked = shift.dual_masked(identity(), [1.0, 200.0], [2.0])
    assert masked[0, 0] == 3.0 and np.isnan(masked[1, 0])


def test_invariant_measure_of_birth_death_is_detailed_balance():
    birth, death = np.array([1.0, 2.0, 0.5]), np.array([0.7, 1.3, 2.0])
    res = invariant_measure(birth_death_generator(birth, death))
    pi = np.concatenate([[1.0], np.cumprod(birth / death)])
    assert res.unique
    assert np.abs(res.measure.weights - pi / pi.sum()).max() < 1e-12


def test_invariant_measure_detects_non_uniqueness():
    s = coordinate_space([0.0, 1.0, 2.0], ["0", "1", "2"])
    Q = GeneratorMatrix(s, np.zeros((3, 3)))
    res = invariant_measure(Q)
    assert not res.unique and res.nullity == 3


def test_negative_times_rejected():
    m = MODELS["example1"]
    with pytest.raises(ValueError):
        m.matrix(-1.0)
    with pytest.raises(ValueError):
        chapman_kolmogorov_residual(m, -1.0, 1.0)


def test_sampling_is_seeded_and_close_to_exact():
    m = MODELS["birth_death"]
    mu0 = Measure.dirac(m.space, "0")
    a = sample_states_at(m, mu0, 1.5, 20000, seed=5)
    b = sample_states_at(m, mu0, 1.5, 20000, seed=5)
    assert np.array_equal(a.weights, b.weights)
    assert total_variation(a, m.evolve(mu0, 1.5)) < 0.05
    p1 = sample_trajectory(m, mu0, 10.0, seed=2)
    p2 = sample_trajectory(m, mu0, 10.0, seed=2)
    assert p1.states == p2.states and np.array_equal(p1.times, p2.times)
    assert p1.states[0] == "0" and np.all(np.diff(p1.times) > 0)


def test_cached_matrix_is_read_only():
    m = GeneratorModel(birth_death_generator([1.0], [1.0]), cache_size=2)
    M = m.matrix(0.5)
    with pytest.raises(ValueError):
        M[0, 0] = 3.0
    for t in (0.1, 0.2, 0.3):
        m.matrix(t)
    assert len(m._cache) == 2
    assert bl_distance(m.row("0", 0.5), m.row("0", 0.5)) == 0.0
