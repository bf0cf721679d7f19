import numpy as np
import pytest

from polystep.baselines import (
    BaselineConfig,
    es_step,
    random_search_step,
    run_baseline,
    spsa_gains,
    spsa_step,
)
from polystep.objectives import quadratic, sphere_indicator


def test_spsa_gradient_estimate_is_unbiased_for_linear_loss():
    rng = np.random.default_rng(0)
    w = np.array([1.0, -2.0, 0.5, 3.0])
    loss = lambda theta: float(w @ theta)
    theta = np.zeros(4)
    c_t = 0.3
    samples = np.empty((100_000, 4))
    for i in range(samples.shape[0]):
        new_theta, _ = spsa_step(theta, loss, 1.0, c_t, rng)
        samples[i] = -(new_theta - theta)  # a_t = 1 so this is g-hat
    mean = samples.mean(axis=0)
    sem = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    assert np.all(np.abs(mean - w) <= 3.0 * sem)


def test_spsa_constant_loss_keeps_theta():
    rng = np.random.default_rng(1)
    theta = np.array([2.0, -1.0])
    new_theta, evals = spsa_step(theta, lambda _t: 5.0, 0.5, 0.1, rng)
    assert np.array_equal(new_theta, theta)
    assert evals == 2


def test_spsa_rejects_non_finite_loss():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError, match="non-finite"):
        spsa_step(np.zeros(2), lambda _t: np.inf, 0.1, 0.1, rng)
    with pytest.raises(ValueError, match="c_t"):
        spsa_step(np.zeros(2), lambda _t: 0.0, 0.1, 0.0, rng)


def test_spsa_gain_values():
    a_t, c_t = spsa_gains(0, a=0.1, c=0.2, stability_offset=10.0)
    assert a_t == 0.1 / 11.0**0.602
    assert c_t == 0.2
    a_t, c_t = spsa_gains(9, a=0.1, c=0.2, stability_offset=10.0)
    assert a_t == 0.1 / 20.0**0.602
    assert c_t == 0.2 / 10.0**0.101


def test_es_constant_loss_zero_update_with_rank_shaping():
    rng = np.random.default_rng(3)
    theta = np.array([1.0, 2.0, 3.0])
    new_theta, evals = es_step(theta, lambda _t: 7.0, 0.1, 0.5, 10, rng)
    assert np.array_equal(new_theta, theta)
    assert evals == 10


def test_es_update_aligns_with_negative_gradient():
    rng = np.random.default_rng(4)
    obj = quadratic(6)
    theta = np.full(6, 3.0)
    grad = theta.copy()  # gradient of 0.5 ||theta||^2
    total = np.zeros(6)
    for _ in range(1000):
        new_theta, _ = es_step(theta, obj.eval_fn, 0.01, 1.0, 8, rng)
        total += new_theta - theta
    cosine = total @ (-grad) / (np.linalg.norm(total) * np.linalg.norm(grad))
    assert cosine >= np.cos(np.deg2rad(30.0))


def test_es_antithetic_pairs():
    rng = np.random.default_rng(5)
    seen = []
    theta = np.zeros(3)

    def recording_loss(candidate):
        seen.append(candidate.copy())
        return 0.0

    _theta, evals = es_step(theta, recording_loss, 0.2, 0.1, 2, rng)
    assert evals == 2
    assert len(seen) == 2
    assert np.array_equal(seen[0], -seen[1])
    with pytest.raises(ValueError, match="even population"):
        es_step(theta, recording_loss, 0.2, 0.1, 3, rng)


def test_random_search_trace_non_increasing():
    cfg = BaselineConfig(kind="random_search", radius=0.5, seed=6)
    res = run_baseline(cfg, quadratic(5), initial_params=np.full(5, 2.0),
                       max_steps=200)
    trace = np.array(res.loss_trace)
    assert np.all(np.diff(trace) <= 0.0)
    assert trace[-1] < trace[0]
    assert res.eval_trace == list(range(201))


def test_random_search_zero_radius_is_stationary():
    rng = np.random.default_rng(7)
    theta = np.array([1.0, 1.0])
    obj = quadratic(2)
    center = obj(theta)
    new_theta, new_center, evals, accepted = random_search_step(
        theta, obj.eval_fn, 0.0, rng, center
    )
    assert np.array_equal(new_theta, theta)
    assert new_center == center
    assert evals == 1 and not accepted


def test_random_search_hit_rate_matches_geometric_law():
    # the walker stands still until a proposal lands in the ball, so the
    # hitting time is exactly geometric in the single-proposal hit rate
    obj = sphere_indicator(2, center=[1.2, 0.0], radius=0.8)
    start = np.zeros(2)
    radius = 1.0
    probe_rng = np.random.default_rng(100)
    n_mc = 20_000
    hits = 0
    for _ in range(n_mc):
        direction = probe_rng.standard_normal(2)
        point = start + (radius / np.linalg.norm(direction)) * direction
        hits += obj(point) == 0.0
    p_hat = hits / n_mc

    T = 20
    n_seeds = 200
    hit_by_T = 0
    for seed in range(n_seeds):
        cfg = BaselineConfig(kind="random_search", radius=radius, seed=seed)
        res = run_baseline(cfg, obj, initial_params=start, max_steps=T)
        hit_by_T += res.best_loss == 0.0
    expected = 1.0 - (1.0 - p_hat) ** T
    sigma = np.sqrt(expected * (1.0 - expected) / n_seeds)
    assert abs(hit_by_T / n_seeds - expected) <= 3.0 * sigma + 1e-9


def test_exact_eval_counts_per_kind():
    obj = quadratic(4)
    start = np.full(4, 1.5)
    for kind, per_step in (("spsa", 2), ("isotropic_es", 50), ("random_search", 1)):
        cfg = BaselineConfig(kind=kind, seed=8)
        res = run_baseline(cfg, obj, initial_params=start, max_steps=6)
        assert res.eval_trace == [per_step * i for i in range(7)], kind


def test_eval_budget_respected():
    cfg = BaselineConfig(kind="isotropic_es", population=10, seed=9)
    res = run_baseline(cfg, quadratic(3), initial_params=np.ones(3),
                       max_evals=35)
    assert res.eval_trace[-1] == 30
    assert res.n_steps == 3
    zero = run_baseline(cfg, quadratic(3), initial_params=np.ones(3),
                        max_evals=0)
    assert zero.n_steps == 0
    assert np.array_equal(zero.final_params, np.ones(3))


def test_deterministic_replay():
    for kind in ("spsa", "isotropic_es", "random_search"):
        cfg = BaselineConfig(kind=kind, population=6, seed=10)
        first = run_baseline(cfg, quadratic(5), initial_params=np.full(5, 2.0),
                             max_steps=20)
        second = run_baseline(cfg, quadratic(5), initial_params=np.full(5, 2.0),
                              max_steps=20)
        assert first.loss_trace == second.loss_trace


def test_best_checkpoint_and_schema():
    cfg = BaselineConfig(kind="spsa", a=0.5, seed=11)
    res = run_baseline(cfg, quadratic(3), initial_params=np.full(3, 2.0),
                       max_steps=30)
    assert res.best_loss == min(res.loss_trace)
    doc = res.to_json_dict()
    assert set(doc) == {
        "config", "seed", "loss_trace", "eval_trace",
        "best_loss", "wall_seconds", "environment",
    }
    assert doc["config"]["kind"] == "spsa"


def test_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(kind="cma_es")
    with pytest.raises(ValueError):
        BaselineConfig(kind="isotropic_es", population=7)
    with pytest.raises(ValueError):
        BaselineConfig(sigma=0.0)
    with pytest.raises(ValueError):
        BaselineConfig(kind="random_search", radius=-1.0)
