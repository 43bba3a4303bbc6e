import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otprop.core import (
    ClassPartition,
    CostSpec,
    DualPotential,
    ProbabilityVector,
    SolverConfig,
    ValidationError,
    WeightedSample,
    cost_column,
    step_policy_valid,
    validate_simplex,
)


def test_cost_column_examples():
    s = WeightedSample.uniform([[0.0, 0.0]])
    t = WeightedSample.uniform([[3.0, 4.0]])
    assert cost_column(s, t, None, 0).tolist() == [25.0]
    assert cost_column(s, s, None, 0).tolist() == [0.0]
    s2 = WeightedSample.uniform([[0.0, 0.0], [1.0, 0.0]])
    t2 = WeightedSample.uniform([[1.0, 1.0]])
    assert cost_column(s2, t2, None, 0).tolist() == [2.0, 1.0]


def test_cost_dimension_mismatch_names_both():
    s = WeightedSample.uniform(np.zeros((2, 2)))
    t = WeightedSample.uniform(np.zeros((2, 3)))
    with pytest.raises(ValidationError, match="2.*3"):
        cost_column(s, t, None, 0)


def test_precomputed_and_on_demand_identical(rng):
    s = WeightedSample.uniform(rng.random((40, 3)))
    t = WeightedSample.uniform(rng.random((25, 3)))
    cost = CostSpec.build(s, t)
    assert cost.precomputed
    lazy = CostSpec.build(s, t, budget=10)
    assert not lazy.precomputed
    for j in range(t.size):
        assert np.array_equal(cost_column(s, t, cost, j), cost_column(s, t, lazy, j))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_cost_symmetry_and_nonnegativity(I, J, d, seed):
    r = np.random.default_rng(seed)
    A = WeightedSample.uniform(r.normal(size=(I, d)))
    B = WeightedSample.uniform(r.normal(size=(J, d)))
    for i in range(I):
        for j in range(J):
            assert cost_column(A, B, None, j)[i] == cost_column(B, A, None, i)[j]
    assert np.all(cost_column(A, B, None, 0) >= 0)


def test_validate_simplex_examples():
    assert validate_simplex([0.5, 0.5], 1e-9).tolist() == [0.5, 0.5]
    assert validate_simplex([1.0], 1e-9).tolist() == [1.0]
    with pytest.raises(ValidationError, match="1.1"):
        validate_simplex([0.6, 0.5], 1e-9)
    with pytest.raises(ValidationError, match="entry 1 is -0.1"):
        validate_simplex([1.1, -0.1], 1e-9)


def test_validate_simplex_clamps_tiny_negatives():
    p = validate_simplex([1.0 + 5e-10, -5e-10], 1e-9)
    assert p.values[1] == 0.0 and abs(p.values.sum() - 1) < 1e-15


def test_uniform_weights_round_trip_large():
    s = WeightedSample.uniform(np.zeros((1_000_000, 1)))
    assert abs(s.weights.sum() - 1.0) <= 1e-12


def test_weighted_sample_rejections():
    with pytest.raises(ValidationError):
        WeightedSample(np.zeros((2, 1)), [0.7, 0.7])
    with pytest.raises(ValidationError, match="negative"):
        WeightedSample(np.zeros((2, 1)), [1.5, -0.5])
    with pytest.raises(ValidationError):
        WeightedSample(np.zeros((0, 1)), [])
    with pytest.raises(ValidationError):
        WeightedSample.uniform([[np.nan]])


def test_samples_are_immutable():
    s = WeightedSample.uniform(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        s.points[0, 0] = 1.0


def test_partition_sizes_and_empty_class():
    p = ClassPartition([0, 1, 1, 2], 3)
    assert p.sizes.tolist() == [1, 2, 1] and p.sizes.sum() == p.size
    with pytest.raises(ValidationError, match="empty"):
        ClassPartition([0, 0, 2], 3)
    with pytest.raises(ValidationError):
        ClassPartition([0, 3], 2)


def test_dual_potential_centering():
    DualPotential([1.0, -1.0], centered=True)
    with pytest.raises(ValidationError):
        DualPotential([1.0, 0.0], centered=True)
    c = DualPotential([1.0, 2.0, 6.0]).center()
    assert c.centered and abs(c.values.sum()) < 1e-12


def test_step_policy():
    assert step_policy_valid(0.51) and step_policy_valid(0.99) and step_policy_valid(1.0)
    assert not step_policy_valid(0.5) and not step_policy_valid(1.01)
    with pytest.raises(ValidationError):
        SolverConfig(step_exponent=0.5)
    with pytest.raises(ValidationError):
        SolverConfig(step_exponent=1.01)


def test_config_presets_and_validation():
    da = SolverConfig.for_solver("desc-asc")
    assert (da.epsilon, da.step_exponent, da.n_out, da.n_in, da.eta) == (5e-4, 0.51, 10_000, 10, 10.0)
    assert da.resolved_step_scale(5000) == pytest.approx(5000 * 5e-4 / 1.9)
    mm = SolverConfig.for_solver("minmax")
    assert (mm.epsilon, mm.lam, mm.step_scale, mm.step_exponent, mm.n) == (1e-4, 1e-4, 5.0, 0.99, 10_000)
    for bad in (dict(epsilon=0), dict(lam=-1), dict(eta=0), dict(n=0), dict(n_in=0), dict(seed=-1)):
        with pytest.raises(ValidationError):
            SolverConfig(**bad)
    with pytest.raises(ValidationError):
        SolverConfig.for_solver("nope")


def test_probability_vector_rejects_off_simplex():
    with pytest.raises(ValidationError):
        ProbabilityVector([0.5, 0.6])
    with pytest.raises(ValidationError):
        ProbabilityVector([1.5, -0.5])
