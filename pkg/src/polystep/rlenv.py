"""Deterministic CartPole dynamics, small policies with precision regimes,
and batched rollout cost estimation under common random numbers.

The environment is the standard published cart-pole: Euler integration at
dt = 0.02, force +/-10, termination at |x| > 2.4 or |theta| > 12 degrees,
500-step cap, reward 1 per step taken. Re-implemented directly so that a
given init seed always yields the identical trajectory; the CRN estimator
depends on that.

Precision regimes name the paper-table rows: "float32" is the plain tanh
policy (computed in float64 here; the label marks the unquantized regime),
"int8" symmetrically quantizes the hidden activation per evaluation with
s = max|h| / 127, "binary" replaces the activation with sign. Actions are
the argmax over two output logits either way, so every regime's return is
an integer-valued step count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from polystep.objectives import PIECEWISE_CONSTANT, Objective

__all__ = [
    "PRECISIONS",
    "CartPoleEnv",
    "Policy",
    "RolloutEstimate",
    "rollout",
    "rollout_trace",
    "batched_cost",
    "rl_objective",
    "hoeffding_radius",
]

PRECISIONS = ("float32", "int8", "binary")
DEFAULT_CHUNK = 8192


@dataclass(frozen=True)
class CartPoleEnv:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    dt: float = 0.02
    step_cap: int = 500
    x_limit: float = 2.4
    theta_limit: float = 12.0 * math.pi / 180.0

    @property
    def total_mass(self):
        return self.cart_mass + self.pole_mass

    @property
    def polemass_length(self):
        return self.pole_mass * self.half_length


@dataclass(frozen=True)
class Policy:
    """Single-hidden-layer MLP on the 4-dim observation, 2 action logits."""

    precision: str = "float32"
    width: int = 16
    obs_dim: int = 4
    n_actions: int = 2

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}")
        if self.width < 1:
            raise ValueError("width must be >= 1")

    @property
    def n_params(self):
        w = self.width
        return w * self.obs_dim + w + self.n_actions * w + self.n_actions

    def stack(self, params_batch):
        """Views (N, ...) of W1, b1, W2, b2 from flat rows."""
        params_batch = np.asarray(params_batch, dtype=float)
        n = params_batch.shape[0]
        w, f, a = self.width, self.obs_dim, self.n_actions
        ofs = 0
        w1 = params_batch[:, ofs : ofs + w * f].reshape(n, w, f)
        ofs += w * f
        b1 = params_batch[:, ofs : ofs + w]
        ofs += w
        w2 = params_batch[:, ofs : ofs + a * w].reshape(n, a, w)
        ofs += a * w
        b2 = params_batch[:, ofs : ofs + a]
        return w1, b1, w2, b2


@dataclass(frozen=True)
class RolloutEstimate:
    costs: np.ndarray
    rollouts: int
    horizon: int
    r_max: float
    crn_seeds: np.ndarray


def _activate(z, precision):
    if precision == "binary":
        return np.sign(z)
    h = np.tanh(z)
    if precision == "float32":
        return h
    scale = np.abs(h).max(axis=-1, keepdims=True) / 127.0
    quotient = np.divide(h, scale, out=np.zeros_like(h), where=scale > 0)
    return np.round(quotient) * scale


def _init_states(env, seeds):
    states = np.empty((len(seeds), 4))
    for row, seed in enumerate(seeds):
        states[row] = np.random.default_rng(int(seed)).uniform(-0.05, 0.05, 4)
    return states


def _physics(env, states, actions):
    x, xdot = states[:, 0], states[:, 1]
    theta, thetadot = states[:, 2], states[:, 3]
    force = np.where(actions == 1, env.force_mag, -env.force_mag)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + env.polemass_length * thetadot**2 * sin_t) / env.total_mass
    theta_acc = (env.gravity * sin_t - cos_t * temp) / (
        env.half_length
        * (4.0 / 3.0 - env.pole_mass * cos_t**2 / env.total_mass)
    )
    x_acc = temp - env.polemass_length * theta_acc * cos_t / env.total_mass
    out = np.empty_like(states)
    out[:, 0] = x + env.dt * xdot
    out[:, 1] = xdot + env.dt * x_acc
    out[:, 2] = theta + env.dt * thetadot
    out[:, 3] = thetadot + env.dt * theta_acc
    return out


def _simulate_chunk(env, policy, stacked, param_idx, seeds, record=None):
    """Episodes run in lockstep; finished ones are compacted away."""
    w1, b1, w2, b2 = (part[param_idx] for part in stacked)
    states = _init_states(env, seeds)
    returns = np.zeros(len(seeds))
    episode = np.arange(len(seeds))
    if record is not None:
        record["states"].append(states[0].tolist())
    for _ in range(env.step_cap):
        if episode.size == 0:
            break
        z = np.einsum("bwf,bf->bw", w1, states) + b1
        hidden = _activate(z, policy.precision)
        logits = np.einsum("baw,bw->ba", w2, hidden) + b2
        actions = np.argmax(logits, axis=1)
        states = _physics(env, states, actions)
        returns[episode] += 1.0
        if record is not None and episode[0] == 0:
            record["actions"].append(int(actions[0]))
            record["states"].append(states[0].tolist())
        alive = (
            (np.abs(states[:, 0]) <= env.x_limit)
            & (np.abs(states[:, 2]) <= env.theta_limit)
        )
        if not alive.all():
            states = states[alive]
            episode = episode[alive]
            w1, b1, w2, b2 = w1[alive], b1[alive], w2[alive], b2[alive]
    return returns


def rollout(env, policy, params, init_seed):
    """Return of one episode; shares the batched code path exactly."""
    stacked = policy.stack(np.asarray(params, dtype=float)[None, :])
    returns = _simulate_chunk(
        env, policy, stacked, np.zeros(1, dtype=int), [init_seed]
    )
    return float(returns[0])


def rollout_trace(env, policy, params, init_seed):
    """One episode with its state/action sequence, JSON-serializable."""
    stacked = policy.stack(np.asarray(params, dtype=float)[None, :])
    record = {"states": [], "actions": []}
    returns = _simulate_chunk(
        env, policy, stacked, np.zeros(1, dtype=int), [init_seed], record
    )
    return {
        "init_seed": int(init_seed),
        "return": float(returns[0]),
        "actions": record["actions"],
        "states": record["states"],
    }


def batched_cost(
    env, policy, candidates, rollouts, crn_base_seed, chunk=DEFAULT_CHUNK
):
    """Empirical negative mean return per candidate under shared seeds.

    Candidate i and rollout m run from seed crn_base_seed + m, the same
    seed for every i: common random numbers. Episodes are flattened into
    (candidate, rollout) pairs and stepped in vectorized chunks; chunk
    size never changes any trajectory, only memory use.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    n = candidates.shape[0]
    stacked = policy.stack(candidates)
    seeds = crn_base_seed + np.arange(rollouts)
    param_idx = np.repeat(np.arange(n), rollouts)
    episode_seeds = np.tile(seeds, n)
    total = np.empty(n * rollouts)
    for start in range(0, n * rollouts, chunk):
        stop = min(start + chunk, n * rollouts)
        total[start:stop] = _simulate_chunk(
            env,
            policy,
            stacked,
            param_idx[start:stop],
            episode_seeds[start:stop],
        )
    costs = -total.reshape(n, rollouts).mean(axis=1)
    return RolloutEstimate(
        costs=costs,
        rollouts=rollouts,
        horizon=env.step_cap,
        r_max=1.0,
        crn_seeds=seeds,
    )


def rl_objective(env, policy, rollouts, crn_base_seed):
    """Negative mean return as a minimization objective.

    The CRN seed block is fixed for the objective's lifetime, so the loss
    is a deterministic function of the parameters and probe batches share
    their rollout noise.
    """

    def eval_fn(theta):
        return float(
            batched_cost(env, policy, theta[None, :], rollouts, crn_base_seed)
            .costs[0]
        )

    def eval_many(thetas):
        return batched_cost(env, policy, thetas, rollouts, crn_base_seed).costs

    return Objective(
        name=f"cartpole-{policy.precision}",
        dim=policy.n_params,
        eval_fn=eval_fn,
        smoothness=PIECEWISE_CONSTANT,
        eval_many=eval_many,
    )


def hoeffding_radius(n_candidates, rollouts, horizon, r_max, delta):
    """2 H R_max sqrt(ln(2N/delta) / (2M)): simultaneous deviation bound
    for N bounded-return estimates sharing M rollouts each."""
    if min(n_candidates, rollouts, horizon, r_max) <= 0:
        raise ValueError("N, M, H, R_max must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return (
        2.0
        * horizon
        * r_max
        * math.sqrt(math.log(2.0 * n_candidates / delta) / (2.0 * rollouts))
    )
