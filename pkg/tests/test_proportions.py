import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otprop.core import ClassPartition, NumericalAbort, SolverConfig, ValidationError, WeightedSample
from otprop.data import ShiftMap, random_mixture, simulate_pair, two_class_mixture
from otprop.proportions import (
    DESC_ASC,
    MINMAX,
    GammaOperator,
    entropy_penalty,
    estimate,
    estimate_descent_ascent,
    estimate_minmax_swap,
    f_eps_lambda,
    f_grad_u,
    gamma_apply,
    gamma_transpose_apply,
    h_of_u,
    outer_gradient,
    profile_two_class,
    select_best_source,
    softmax,
    softmax_jacobian,
)
from otprop.semidual import g_eps, robbins_monro_ascent

# -eps log 3 - lam log 2 - eps at eps = 0.1, lam = 0.05 (mpmath)
F_AT_ZERO = -0.244518587894808234610386129765

FOUR = GammaOperator(ClassPartition([0, 0, 1, 1], 2))


def _random_gamma(r, I, K):
    labels = np.concatenate([np.arange(K), r.integers(0, K, I - K)])
    return GammaOperator(ClassPartition(labels, K))


def test_gamma_examples():
    assert gamma_apply(FOUR, [0.6, 0.4]) == pytest.approx([0.3, 0.3, 0.2, 0.2], abs=1e-16)
    part = ClassPartition([0, 1, 1, 2, 2, 2], 3)
    assert gamma_apply(GammaOperator(part), part.proportions()) == pytest.approx(np.full(6, 1 / 6), abs=1e-16)
    assert gamma_apply(GammaOperator(ClassPartition([0, 0, 0], 1)), [1.0]).tolist() == [1 / 3] * 3
    with pytest.raises(ValidationError):
        gamma_apply(FOUR, [1.0])


def test_gamma_transpose_examples():
    assert gamma_transpose_apply(FOUR, np.ones(4)).tolist() == [1.0, 1.0]
    assert gamma_transpose_apply(FOUR, np.zeros(4)).tolist() == [0.0, 0.0]
    assert gamma_transpose_apply(FOUR, [1.0, 3.0, 2.0, 6.0]).tolist() == [2.0, 4.0]
    with pytest.raises(ValidationError):
        gamma_transpose_apply(FOUR, np.zeros(3))


@given(st.integers(0, 2**32 - 1))
def test_gamma_is_adjoint_and_weights_normalized(seed):
    r = np.random.default_rng(seed)
    K = int(r.integers(1, 6))
    g = _random_gamma(r, int(r.integers(K, 30)), K)
    h, u = r.dirichlet(np.ones(K)), r.normal(size=g.shape[0])
    w = gamma_apply(g, h)
    assert abs(w.sum() - 1) <= 1e-12
    assert u @ w == pytest.approx(gamma_transpose_apply(g, u) @ h, abs=1e-12)


def test_softmax_examples():
    assert softmax([0.0, 0.0]).tolist() == [0.5, 0.5]
    assert softmax([np.log(2), 0.0, 0.0]).values == pytest.approx([0.5, 0.25, 0.25], abs=1e-16)
    assert softmax([1000.0, 0.0]).tolist() == [1.0, 0.0]


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance(z, t):
    assert softmax(np.array(z) + t).values == pytest.approx(softmax(z).values, abs=1e-12)


def test_jacobian_examples():
    assert softmax_jacobian([0.0, 0.0]).tolist() == [[0.25, -0.25], [-0.25, 0.25]]
    assert softmax_jacobian([3.0]).tolist() == [[0.0]]


@given(st.integers(0, 2**32 - 1))
def test_jacobian_structure(seed):
    z = np.random.default_rng(seed).normal(size=5) * 3
    J = softmax_jacobian(z)
    assert np.array_equal(J, J.T)
    assert np.abs(J.sum(axis=0)).max() <= 1e-12 and np.abs(J.sum(axis=1)).max() <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_jacobian_matches_finite_differences(seed):
    z = np.random.default_rng(seed).normal(size=5)
    h = 1e-5
    fd = np.empty((5, 5))
    for k in range(5):
        e = np.zeros(5)
        e[k] = h
        fd[:, k] = (softmax(z + e).values - softmax(z - e).values) / (2 * h)
    J = softmax_jacobian(z)
    assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-7


def test_h_of_u_examples():
    g = _random_gamma(np.random.default_rng(0), 9, 3)
    assert h_of_u(g, np.zeros(9), 0.1).values == pytest.approx(np.full(3, 1 / 3), abs=1e-16)
    assert h_of_u(g, np.full(9, 4.2), 0.1).values == pytest.approx(np.full(3, 1 / 3), abs=1e-15)


@given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_h_of_u_shift_property(seed, t):
    r = np.random.default_rng(seed)
    g = _random_gamma(r, 12, 3)
    u = r.normal(size=12)
    assert h_of_u(g, u + t, 0.05).values == pytest.approx(h_of_u(g, u, 0.05).values, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_h_of_u_matches_grid_search(seed):
    r = np.random.default_rng(seed)
    g = _random_gamma(r, 10, 2)
    u = r.normal(size=10) * 0.2
    lam = 0.1
    grid = np.linspace(0, 1, 200_001)
    means = gamma_transpose_apply(g, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.nan_to_num(grid * np.log(grid)) + np.nan_to_num((1 - grid) * np.log(1 - grid))
    obj = grid * means[0] + (1 - grid) * means[1] + lam * phi
    best = grid[np.argmin(obj)]
    assert h_of_u(g, u, lam).values[0] == pytest.approx(best, abs=1e-3)


def test_f_examples():
    one = GammaOperator(ClassPartition([0], 1))
    assert f_eps_lambda([0.0], one, [0.8], 1.0, 0.1, 0.01) == pytest.approx(0.7, abs=1e-14)
    g = GammaOperator(ClassPartition([0, 1, 1], 2))
    assert f_eps_lambda(np.zeros(3), g, np.zeros(3), 1.0, 0.1, 0.05) == pytest.approx(F_AT_ZERO, abs=1e-15)


def test_f_grad_examples():
    one = GammaOperator(ClassPartition([0], 1))
    assert f_grad_u([0.3], one, [0.1], 0.1, 0.1).tolist() == [0.0]
    two = GammaOperator(ClassPartition([0, 1], 2))
    assert f_grad_u(np.zeros(2), two, [0.4, 0.4], 0.1, 0.1).tolist() == [0.0, 0.0]


@given(st.integers(0, 2**32 - 1))
def test_f_equals_penalized_semidual_at_inner_minimizer(seed):
    r = np.random.default_rng(seed)
    K = int(r.integers(1, 5))
    g = _random_gamma(r, int(r.integers(K, 15)), K)
    u, c = r.normal(size=g.shape[0]), r.random(g.shape[0])
    eps, lam = float(r.uniform(0.01, 1)), float(r.uniform(0.01, 1))
    h = h_of_u(g, u, lam)
    expected = g_eps(u, gamma_apply(g, h), c, 0.25, eps) + lam * entropy_penalty(h)
    assert f_eps_lambda(u, g, c, 0.25, eps, lam) == pytest.approx(expected, abs=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_f_is_translation_invariant(seed, t):
    r = np.random.default_rng(seed)
    g = _random_gamma(r, 8, 3)
    u, c = r.normal(size=8), r.random(8)
    assert f_eps_lambda(u + t, g, c, 0.5, 0.1, 0.05) == pytest.approx(f_eps_lambda(u, g, c, 0.5, 0.1, 0.05), abs=1e-10)
    assert abs(f_grad_u(u, g, c, 0.1, 0.05).sum()) <= 1e-12


@pytest.mark.parametrize("seed", range(100))
def test_f_grad_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    K = int(r.integers(1, 5))
    I = int(r.integers(K, 21))
    g = _random_gamma(r, I, K)
    u, c = r.normal(size=I) * 0.3, r.random(I)
    eps, lam = float(r.uniform(0.01, 1)), float(r.uniform(0.01, 1))
    fd = np.empty(I)
    for i in range(I):
        e = np.zeros(I)
        e[i] = 1e-6
        fd[i] = (f_eps_lambda(u + e, g, c, 0.5, eps, lam) - f_eps_lambda(u - e, g, c, 0.5, eps, lam)) / 2e-6
    grad = f_grad_u(u, g, c, eps, lam)
    assert np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-3) < 1e-5


def _separated_pair(seed, I=600):
    spec, _ = two_class_mixture()
    r = np.random.default_rng(seed)
    labels = np.repeat([0, 1], [I // 3, I - I // 3])
    pts = spec.means[labels] + np.sqrt(spec.variances[labels]) * r.standard_normal((I, 2))
    return WeightedSample.uniform(pts), ClassPartition(labels, 2)


def test_single_class_short_circuits():
    s = WeightedSample.uniform(np.random.default_rng(0).random((20, 2)))
    part = ClassPartition(np.zeros(20, dtype=int), 1)
    for solver in (DESC_ASC, MINMAX):
        assert estimate(s, part, s, SolverConfig(n_out=1, n=1), solver).proportions.tolist() == [1.0]


def test_descent_ascent_self_consistency():
    s, part = _separated_pair(1)
    est = estimate_descent_ascent(s, part, s, SolverConfig.for_solver("desc-asc"))
    assert est.proportions.values == pytest.approx(part.proportions().values, abs=0.02)
    assert est.solver == DESC_ASC


def test_descent_ascent_trace_with_benchmark():
    s, part = _separated_pair(2, I=300)
    bench = part.proportions()
    est = estimate_descent_ascent(s, part, s, SolverConfig(n_out=50), bench, trace_every=10)
    assert [t.iteration for t in est.trace] == [10, 20, 30, 40, 50]
    assert all(t.kl is not None and t.kl >= 0 for t in est.trace)
    assert est.trace[-1].proportions == tuple(est.proportions.tolist())


def test_minmax_budgets_and_trace():
    s, part = _separated_pair(3, I=300)
    est = estimate_minmax_swap(s, part, s, SolverConfig.for_solver("minmax"), n_iter=0)
    assert est.proportions.tolist() == [0.5, 0.5] and not est.converged
    est = estimate_minmax_swap(s, part, s, SolverConfig.for_solver("minmax", n=1050), part.proportions())
    its = [t.iteration for t in est.trace]
    assert its[:3] == [100, 200, 300] and its[-1] == 1050
    assert abs(est.proportions.values.sum() - 1) <= 1e-12


def test_minmax_self_consistency():
    s, part = _separated_pair(4)
    est = estimate_minmax_swap(s, part, s, SolverConfig.for_solver("minmax"))
    assert est.proportions.values == pytest.approx(part.proportions().values, abs=0.05)


def test_descent_ascent_aborts_on_overflow():
    s, part = _separated_pair(5, I=60)
    t = WeightedSample.uniform(s.points + 0.5)
    with pytest.raises(NumericalAbort) as info:
        estimate_descent_ascent(s, part, t, SolverConfig(n_out=50, epsilon=1e-3, step_scale=1e308))
    assert info.value.iteration >= 1


def test_unknown_solver_and_mismatched_benchmark():
    s, part = _separated_pair(6, I=30)
    with pytest.raises(ValidationError):
        estimate(s, part, s, SolverConfig(), "nope")
    with pytest.raises(ValidationError):
        estimate(s, part, s, SolverConfig(n_out=1), DESC_ASC, benchmark=softmax([0.0, 0.0, 0.0]))


def test_outer_gradient_sign_matches_grid_slope():
    spec, pi = two_class_mixture()
    pair = simulate_pair(spec, pi, ShiftMap.default(2), 400, 400, 7)
    s, part, t = pair.source, pair.partition, pair.target
    g = GammaOperator(part)
    cfg = SolverConfig(epsilon=0.01, seed=3, n=20_000)
    truth = pair.target_proportions.values[0]
    agree = probed = 0
    for h1 in np.round(np.arange(0.05, 1.0, 0.1), 2):
        if abs(h1 - truth) < 0.1:
            continue
        z = np.log([h1, 1 - h1])
        u = robbins_monro_ascent(s, t, gamma_apply(g, softmax(z)), cfg, cfg.n).potential.values
        omega = outer_gradient(g, z, u)
        lo, hi = profile_two_class(s, part, t, [h1 - 0.025, h1 + 0.025], cfg)
        probed += 1
        agree += np.sign(omega[0]) == np.sign(hi - lo)
    assert agree >= 0.9 * probed


def test_select_best_source_trivial_cases():
    s, part = _separated_pair(7, I=80)
    cfg = SolverConfig.for_solver("minmax", n=200)
    idx, est, scores = select_best_source([(s, part)], s, cfg, MINMAX)
    assert idx == 0 and len(scores) == 1
    idx, _, scores = select_best_source([(s, part), (s, part)], s, cfg, MINMAX)
    assert idx == 0 and scores[0] == scores[1]
    with pytest.raises(ValidationError):
        select_best_source([], s, cfg)
    with pytest.raises(ValidationError, match="dimension"):
        select_best_source([(WeightedSample.uniform(np.zeros((2, 3))), ClassPartition([0, 1], 2))], s, cfg)


def test_select_best_source_prefers_matching_candidate():
    hits = 0
    for seed in range(20):
        spec, pi = random_mixture(3, 2, seed)
        pair = simulate_pair(spec, pi, ShiftMap.identity(2), 300, 300, seed)
        far = WeightedSample.uniform(pair.source.points * 0.5 + 0.6)
        cfg = SolverConfig.for_solver("minmax", n=2000, seed=seed)
        candidates = [(far, pair.partition), (pair.target, ClassPartition(pair.target_labels, 3))]
        idx, _, _ = select_best_source(candidates, pair.target, cfg, MINMAX)
        hits += idx == 1
    assert hits >= 19


def test_select_best_source_parallel_matches_serial():
    s, part = _separated_pair(8, I=80)
    t = WeightedSample.uniform(s.points + 0.1)
    cfg = SolverConfig.for_solver("minmax", n=300)
    cands = [(t, part), (s, part)]
    serial = select_best_source(cands, s, cfg, MINMAX, workers=1)
    parallel = select_best_source(cands, s, cfg, MINMAX, workers=2)
    assert serial[0] == parallel[0] and serial[2] == parallel[2]


def test_profile_two_class_rules():
    s, part = _separated_pair(9, I=60)
    cfg = SolverConfig(n=500, epsilon=0.01)
    assert profile_two_class(s, part, s, [0.5], cfg).shape == (1,)
    three = ClassPartition(np.arange(60) % 3, 3)
    with pytest.raises(ValidationError, match="K=3"):
        profile_two_class(s, three, s, [0.5], cfg)
    with pytest.raises(ValidationError):
        profile_two_class(s, part, s, [1.5], cfg)


def test_profile_symmetric_minimum_in_middle():
    r = np.random.default_rng(11)
    labels = np.repeat([0, 1], 100)
    pts = np.where(labels[:, None] == 0, 0.25, 0.75) + 0.03 * r.standard_normal((200, 2))
    s = WeightedSample.uniform(pts)
    part = ClassPartition(labels, 2)
    values = profile_two_class(s, part, s, [0.0, 0.5, 1.0], SolverConfig(n=5000, epsilon=0.01))
    assert np.argmin(values) == 1
