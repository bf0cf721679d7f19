"""Assignment solver tests with independent reference oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from polystep.assignment import (
    CostEvaluationError,
    SolverOptions,
    barycentric_displacement,
    barycentric_step,
    build_cost_matrix,
    degenerate_rules,
    kl_softmax_plan,
    sinkhorn_plan,
    softmax_plan,
    transport_cost,
)
from polystep.geometry import polytope_vertices, sample_rotation, step_offsets


def uniform(n):
    return np.full(n, 1.0 / n)


def reference_sinkhorn(C, a, b, epsilon, n_iter=100_000):
    """Plain log-domain Sinkhorn, omega=1, fixed iteration count."""
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    for _ in range(n_iter):
        f = epsilon * (np.log(a) - logsumexp((g[None, :] - C) / epsilon, axis=1))
        g = epsilon * (np.log(b) - logsumexp((f[:, None] - C) / epsilon, axis=0))
    f = epsilon * (np.log(a) - logsumexp((g[None, :] - C) / epsilon, axis=1))
    return np.exp((f[:, None] + g[None, :] - C) / epsilon)


# ------------------------------------------------------------ cost matrix


def test_cost_matrix_constant_loss():
    probes = np.random.default_rng(0).standard_normal((3, 4, 2, 5))
    cm, evals = build_cost_matrix(probes, lambda theta: 2.5)
    assert evals == 3 * 4 * 2
    assert np.all(cm.entries == 2.5)
    assert cm.shape == (3, 4)


def test_cost_matrix_probe_average():
    calls = {"n": 0}

    def alternating(theta):
        calls["n"] += 1
        return 1.0 if calls["n"] % 2 else 3.0

    probes = np.zeros((2, 3, 2, 4))
    cm, _ = build_cost_matrix(probes, alternating)
    assert np.all(cm.entries == 2.0)


def test_cost_matrix_matches_direct_evaluation():
    rng = np.random.default_rng(1)
    probes = rng.standard_normal((2, 4, 3, 6))

    def loss(theta):
        return float(theta @ theta)

    cm, _ = build_cost_matrix(probes, loss)
    expected = np.empty((2, 4))
    for i in range(2):
        for v in range(4):
            expected[i, v] = np.mean(
                [loss(probes[i, v, k]) for k in range(3)]
            )
    assert np.array_equal(cm.entries, expected)


def test_cost_matrix_opposing_vertices_symmetric():
    # quadratic loss centered at the probe origin: costs along +-e_j agree
    t = polytope_vertices("orthoplex", 3)
    probes = 0.5 * t.vertices[None, :, None, :]  # x = 0, K = 1
    cm, _ = build_cost_matrix(probes, lambda theta: float(theta @ theta))
    for j in range(3):
        assert cm.entries[0, 2 * j] == cm.entries[0, 2 * j + 1]


def test_cost_matrix_nonfinite_carries_index():
    probes = np.zeros((2, 3, 2, 1))
    probes[1, 2, 0, 0] = 99.0

    def loss(theta):
        return np.nan if theta[0] == 99.0 else 0.0

    with pytest.raises(CostEvaluationError) as err:
        build_cost_matrix(probes, loss)
    assert err.value.index == (1, 2, 0)


def test_cost_matrix_reconstructor_and_vectorized_paths_agree():
    rng = np.random.default_rng(2)
    probes = rng.standard_normal((3, 2, 2, 4))
    lift = rng.standard_normal((7, 4))

    def loss(theta):
        return float(np.sum(theta**2))

    def loss_many(batch):
        return np.sum(batch**2, axis=1)

    cm_a, evals_a = build_cost_matrix(
        probes, loss, reconstructor=lambda z: lift @ z
    )
    cm_b, evals_b = build_cost_matrix(
        probes, None, reconstructor=lambda z: lift @ z, loss_many=loss_many
    )
    assert evals_a == evals_b == 12
    assert np.allclose(cm_a.entries, cm_b.entries, rtol=1e-14, atol=0)


# ---------------------------------------------------------------- softmax


def test_softmax_constant_row_uniform():
    C = np.full((3, 4), 1.7)
    a = uniform(3)
    plan = softmax_plan(C, 0.3, a)
    assert np.allclose(plan.weights, a[:, None] / 4.0, rtol=1e-15, atol=0)


def test_softmax_two_column_exact_ratio():
    eps = 0.7
    C = np.array([[0.0, eps * np.log(3.0)]])
    plan = softmax_plan(C, eps, np.array([1.0]))
    assert np.allclose(plan.weights, [[0.75, 0.25]], rtol=1e-14, atol=0)


def test_softmax_shift_invariance_bit_exact():
    # dyadic entries and shift round identically, so the min-subtracted
    # rows coincide bit-for-bit
    rng = np.random.default_rng(3)
    C = rng.integers(-8, 8, size=(5, 6)).astype(float) / 16.0
    a = uniform(5)
    base = softmax_plan(C, 0.25, a)
    shifted = softmax_plan(C + 7.0, 0.25, a)
    assert np.array_equal(base.weights, shifted.weights)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    rows=st.integers(1, 12),
    cols=st.integers(2, 16),
    eps=st.sampled_from([0.01, 0.1, 1.0]),
)
def test_softmax_rows_sum_to_marginal(seed, rows, cols, eps):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((rows, cols)) * 3.0
    a = rng.uniform(0.1, 1.0, rows)
    a /= a.sum()
    plan = softmax_plan(C, eps, a)
    assert np.all(plan.weights >= 0)
    assert np.max(np.abs(plan.weights.sum(axis=1) - a)) < 1e-10


# ------------------------------------------------------------- kl softmax


def test_kl_lambda_zero_is_softmax_bitwise():
    rng = np.random.default_rng(4)
    C = rng.standard_normal((4, 6))
    a, b = uniform(4), uniform(6)
    plan, dual = kl_softmax_plan(C, 0.2, 0.0, a, b)
    ref = softmax_plan(C, 0.2, a)
    assert np.array_equal(plan.weights, ref.weights)
    assert dual.iterations_used == 0
    assert np.all(dual.g == 0.0)


def test_kl_large_lambda_matches_sinkhorn():
    rng = np.random.default_rng(5)
    C = rng.standard_normal((3, 4))
    a, b = uniform(3), uniform(4)
    plan, dual = kl_softmax_plan(C, 0.2, 1e6, a, b, max_iter=5000, tol=1e-12)
    col = plan.weights.sum(axis=0)
    assert np.max(np.abs(col - b)) < 1e-4
    ref = reference_sinkhorn(C, a, b, 0.2, n_iter=5000)
    assert np.max(np.abs(plan.weights - ref)) < 1e-4


def test_kl_infinite_lambda_routes_to_sinkhorn():
    rng = np.random.default_rng(6)
    C = rng.standard_normal((3, 4))
    a, b = uniform(3), uniform(4)
    plan, dual = kl_softmax_plan(C, 0.2, np.inf, a, b, max_iter=2000, tol=1e-9)
    assert dual.converged
    assert np.max(np.abs(plan.weights.sum(axis=0) - b)) < 1e-9


def test_kl_marginal_violation_monotone_in_lambda():
    rng = np.random.default_rng(7)
    for _ in range(3):
        C = rng.standard_normal((5, 7))
        a, b = uniform(5), uniform(7)
        divs = []
        for lam in [0.01, 0.1, 1.0, 10.0, 100.0]:
            plan, _ = kl_softmax_plan(C, 0.3, lam, a, b, max_iter=3000, tol=1e-13)
            q = plan.weights.sum(axis=0)
            divs.append(float(np.sum(q * np.log(q / b))))
        for lo, hi in zip(divs[1:], divs[:-1]):
            assert lo <= hi + 1e-9


def test_kl_rows_always_sum_to_marginal():
    rng = np.random.default_rng(8)
    C = rng.standard_normal((6, 5)) * 2.0
    a, b = uniform(6), uniform(5)
    for lam in [0.0, 0.5, 3.0, 1e4]:
        plan, _ = kl_softmax_plan(C, 0.15, lam, a, b)
        assert np.max(np.abs(plan.weights.sum(axis=1) - a)) < 1e-10


# ----------------------------------------------------------------- sinkhorn


def test_sinkhorn_flat_cost_outer_product():
    C = np.full((3, 5), 2.0)
    a, b = uniform(3), uniform(5)
    plan, dual = sinkhorn_plan(C, a, b, SolverOptions(epsilon=0.5))
    assert dual.converged
    assert np.max(np.abs(plan.weights - np.outer(a, b))) < 1e-12


def test_sinkhorn_matches_long_run_oracle():
    rng = np.random.default_rng(9)
    C = rng.standard_normal((3, 4))
    a, b = uniform(3), uniform(4)
    opts = SolverOptions(epsilon=0.2, tolerance=1e-12, max_iter=20_000)
    plan, dual = sinkhorn_plan(C, a, b, opts)
    assert dual.converged
    ref = reference_sinkhorn(C, a, b, 0.2)
    assert np.max(np.abs(plan.weights - ref)) < 1e-8
    assert np.max(np.abs(plan.weights.sum(axis=1) - a)) < 1e-10
    assert np.max(np.abs(plan.weights.sum(axis=0) - b)) < 1e-12


@pytest.mark.parametrize("eps", [0.01, 0.1, 1.0])
def test_sinkhorn_marginals_across_temperatures(eps):
    rng = np.random.default_rng(10)
    C = rng.standard_normal((8, 6))
    a = rng.uniform(0.2, 1.0, 8)
    a /= a.sum()
    b = rng.uniform(0.2, 1.0, 6)
    b /= b.sum()
    plan, dual = sinkhorn_plan(C, a, b, SolverOptions(epsilon=eps, max_iter=200_000))
    assert dual.converged
    assert np.max(np.abs(plan.weights.sum(axis=1) - a)) < 1e-10
    assert np.max(np.abs(plan.weights.sum(axis=0) - b)) < 1e-6


def test_sinkhorn_warm_start_cuts_iterations():
    # low-temperature regime, where cold starts are most expensive
    rng = np.random.default_rng(11)
    C = rng.standard_normal((6, 8))
    a, b = uniform(6), uniform(8)
    opts = SolverOptions(epsilon=0.02, tolerance=1e-6, max_iter=50_000)
    _, cold = sinkhorn_plan(C, a, b, opts)
    perturbed = C + 0.01 * np.sign(rng.standard_normal(C.shape))
    _, cold2 = sinkhorn_plan(perturbed, a, b, opts)
    _, warm = sinkhorn_plan(perturbed, a, b, opts, warm=cold)
    assert warm.converged
    assert warm.iterations_used <= cold2.iterations_used / 3


def test_sinkhorn_max_iter_flag_not_exception():
    rng = np.random.default_rng(12)
    C = rng.standard_normal((4, 4))
    a, b = uniform(4), uniform(4)
    plan, dual = sinkhorn_plan(
        C, a, b, SolverOptions(epsilon=0.01, tolerance=1e-14, max_iter=3)
    )
    assert not dual.converged
    assert dual.iterations_used == 3
    # rows stay exact even without convergence (final exact row sweep)
    assert np.max(np.abs(plan.weights.sum(axis=1) - a)) < 1e-10


def test_sinkhorn_turbo_agrees_with_plain():
    rng = np.random.default_rng(13)
    C = rng.standard_normal((10, 8))
    a, b = uniform(10), uniform(8)
    tol = 1e-8
    plain, dual_plain = sinkhorn_plan(
        C, a, b, SolverOptions(epsilon=0.1, tolerance=tol, max_iter=100_000)
    )
    turbo_opts = SolverOptions(
        epsilon=0.1,
        tolerance=tol,
        max_iter=100_000,
        anderson_depth=5,
        adaptive_omega=True,
        cost_mean_init=True,
    )
    turbo, dual_turbo = sinkhorn_plan(C, a, b, turbo_opts)
    assert dual_plain.converged and dual_turbo.converged
    assert np.max(np.abs(plain.weights - turbo.weights)) < 10 * tol


def test_sinkhorn_dual_momentum_keeps_fixed_point():
    rng = np.random.default_rng(14)
    C = rng.standard_normal((5, 6))
    a, b = uniform(5), uniform(6)
    opts = SolverOptions(epsilon=0.1, tolerance=1e-10, max_iter=50_000,
                         dual_momentum_beta=0.3)
    _, first = sinkhorn_plan(C, a, b, opts)
    shifted = C + 0.005 * rng.standard_normal(C.shape)
    plan_w, warm = sinkhorn_plan(shifted, a, b, opts, warm=first)
    plan_c, _ = sinkhorn_plan(
        shifted, a, b, SolverOptions(epsilon=0.1, tolerance=1e-10, max_iter=50_000)
    )
    assert warm.converged
    assert warm.f_prev is not None
    assert np.max(np.abs(plan_w.weights - plan_c.weights)) < 1e-8


# ----------------------------------------------------- barycentric + cost


def test_barycentric_uniform_orthoplex_is_exact_center():
    t = polytope_vertices("orthoplex", 3)
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 3))
    offsets = np.empty((2, t.n_vertices, 3))
    for i in range(2):
        offsets[i] = step_offsets(sample_rotation(3, rng), 1.3, 0.7, t)
    a = uniform(2)
    C = np.full((2, t.n_vertices), 4.2)
    plan = softmax_plan(C, 0.1, a)
    disp = barycentric_displacement(plan, offsets, a)
    assert np.all(disp == 0.0)
    # absolute-position form agrees up to rounding
    verts = x[:, None, :] + offsets
    new_pos = barycentric_step(plan, verts, a)
    assert np.allclose(new_pos, x, rtol=0, atol=1e-12)


def test_barycentric_one_hot_reaches_vertex():
    t = polytope_vertices("orthoplex", 2)
    offsets = step_offsets(np.eye(2), 2.0, 0.5, t)[None]  # scale = 1
    a = np.array([1.0])
    weights = np.zeros((1, 4))
    weights[0, 2] = 1.0  # +e_2 vertex
    from polystep.assignment import TransportPlan

    plan = TransportPlan(weights, a, None, "test")
    disp = barycentric_displacement(plan, offsets, a)
    assert np.array_equal(disp[0], offsets[0, 2])
    assert abs(np.linalg.norm(disp[0]) - 2.0 * 0.5) < 1e-12
    new_pos = barycentric_step(plan, offsets, a)  # centered at origin
    assert np.array_equal(new_pos[0], offsets[0, 2])


def test_barycentric_equal_pair_cancels():
    t = polytope_vertices("orthoplex", 2)
    offsets = step_offsets(sample_rotation(2, np.random.default_rng(16)), 1.0, 1.0, t)[None]
    a = np.array([1.0])
    weights = np.zeros((1, 4))
    weights[0, 0] = weights[0, 1] = 0.5  # equal mass on +-e_1
    from polystep.assignment import TransportPlan

    disp = barycentric_displacement(TransportPlan(weights, a, None, "test"), offsets, a)
    assert np.all(disp == 0.0)


def test_barycentric_linear_in_vertices():
    rng = np.random.default_rng(17)
    a = uniform(3)
    C = rng.standard_normal((3, 5))
    plan = softmax_plan(C, 0.3, a)
    v1 = rng.standard_normal((3, 5, 4))
    v2 = rng.standard_normal((3, 5, 4))
    lhs = barycentric_step(plan, v1 + v2, a)
    rhs = barycentric_step(plan, v1, a) + barycentric_step(plan, v2, a)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_transport_cost_against_naive_loops():
    rng = np.random.default_rng(18)
    C = rng.standard_normal((4, 6))
    a, b = uniform(4), uniform(6)
    plan, _ = sinkhorn_plan(C, a, b, SolverOptions(epsilon=0.3))
    naive = sum(
        C[i, v] * plan.weights[i, v] for i in range(4) for v in range(6)
    )
    assert abs(transport_cost(C, plan) - naive) < 1e-12
    # uniform plan recovers the mean cost
    uniform_plan = softmax_plan(np.zeros((4, 6)), 1.0, a)
    assert abs(transport_cost(C, uniform_plan) - C.mean()) < 1e-12


# --------------------------------------------------------- degenerate rules


def test_greedy_one_hot_and_tie_break():
    plan = degenerate_rules(np.array([[3.0, 1.0, 2.0]]), 0.1, "greedy")
    assert np.array_equal(plan.weights, [[0.0, 1.0, 0.0]])
    tie = degenerate_rules(np.array([[1.0, 1.0, 2.0]]), 0.1, "greedy")
    assert np.array_equal(tie.weights, [[1.0, 0.0, 0.0]])


def test_top_k_mean():
    plan = degenerate_rules(np.array([[3.0, 1.0, 2.0]]), 0.1, "top_k_mean", k=2)
    assert np.array_equal(plan.weights, [[0.0, 0.5, 0.5]])
    with pytest.raises(ValueError):
        degenerate_rules(np.array([[1.0, 2.0]]), 0.1, "top_k_mean", k=3)


def test_degenerate_rows_sum_to_uniform():
    rng = np.random.default_rng(19)
    C = rng.standard_normal((6, 5))
    for rule, k in [("greedy", 1), ("top_k_mean", 3)]:
        plan = degenerate_rules(C, 0.1, rule, k=k)
        assert np.max(np.abs(plan.weights.sum(axis=1) - 1.0 / 6.0)) < 1e-10


# ------------------------------------------------------------ option guards


def test_solver_option_bounds():
    with pytest.raises(ValueError):
        SolverOptions(epsilon=0.0)
    with pytest.raises(ValueError):
        SolverOptions(omega=2.0)
    with pytest.raises(ValueError):
        SolverOptions(dual_momentum_beta=1.0)
    with pytest.raises(ValueError):
        SolverOptions(kl_lambda=-0.1)
