"""Reference gradient-free optimizers: SPSA, isotropic ES, random search.

All three consume the same objective interface and budget accounting as the
main optimizer so equal-evaluation comparisons are one config swap away.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from polystep.optimizer import RunResult, environment_fingerprint

__all__ = [
    "BaselineConfig",
    "spsa_gains",
    "spsa_step",
    "es_step",
    "random_search_step",
    "run_baseline",
]

BASELINE_KINDS = ("spsa", "isotropic_es", "random_search")

SPSA_ALPHA_EXP = 0.602
SPSA_GAMMA_EXP = 0.101


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "spsa"
    # SPSA
    a: float = 0.1
    c: float = 0.1
    alpha_exp: float = SPSA_ALPHA_EXP
    gamma_exp: float = SPSA_GAMMA_EXP
    # isotropic ES
    sigma: float = 0.02
    lr: float = 0.01
    population: int = 50
    antithetic: bool = True
    rank_shaping: bool = True
    # random search
    radius: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        for name in ("a", "c", "sigma", "lr"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.radius < 0.0:
            raise ValueError("radius must be >= 0")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.antithetic and self.population % 2:
            raise ValueError("antithetic sampling needs an even population")

    def to_dict(self):
        return {
            "kind": self.kind,
            "a": self.a,
            "c": self.c,
            "alpha_exp": self.alpha_exp,
            "gamma_exp": self.gamma_exp,
            "sigma": self.sigma,
            "lr": self.lr,
            "population": self.population,
            "antithetic": self.antithetic,
            "rank_shaping": self.rank_shaping,
            "radius": self.radius,
            "seed": self.seed,
        }


def spsa_gains(t, a, c, stability_offset, alpha_exp=SPSA_ALPHA_EXP,
               gamma_exp=SPSA_GAMMA_EXP):
    """Classical decaying gains a_t = a/(t+1+A)^0.602, c_t = c/(t+1)^0.101."""
    a_t = a / (t + 1 + stability_offset) ** alpha_exp
    c_t = c / (t + 1) ** gamma_exp
    return a_t, c_t


def spsa_step(theta, loss, a_t, c_t, rng):
    """Simultaneous-perturbation step; exactly two loss evaluations.

    Returns (theta', evals).
    """
    if c_t <= 0.0:
        raise ValueError(f"c_t must be positive, got {c_t}")
    theta = np.asarray(theta, dtype=float)
    delta = rng.integers(0, 2, size=theta.size) * 2.0 - 1.0
    plus = float(loss(theta + c_t * delta))
    minus = float(loss(theta - c_t * delta))
    if not (np.isfinite(plus) and np.isfinite(minus)):
        raise ValueError(
            f"non-finite loss in SPSA probe: plus={plus}, minus={minus}"
        )
    grad_hat = (plus - minus) / (2.0 * c_t * delta)
    return theta - a_t * grad_hat, 2


def es_step(theta, loss, sigma, lr, pop, rng, antithetic=True,
            rank_shaping=True):
    """Isotropic evolution-strategies step; exactly ``pop`` evaluations.

    Antithetic mode draws pop/2 directions and evaluates both signs.
    Rank shaping replaces fitness values with zero-mean centered ranks
    (ascending in loss), so a constant loss yields a zero update. Returns
    (theta', evals).
    """
    theta = np.asarray(theta, dtype=float)
    if pop < 2:
        raise ValueError("population must be >= 2")
    if antithetic:
        if pop % 2:
            raise ValueError("antithetic sampling needs an even population")
        half = rng.standard_normal((pop // 2, theta.size))
        eps = np.concatenate([half, -half], axis=0)
    else:
        eps = rng.standard_normal((pop, theta.size))
    values = np.array([float(loss(theta + sigma * e)) for e in eps])
    if rank_shaping:
        ranks = rankdata(values, method="average")
        weights = (ranks - (pop + 1) / 2.0) / max(pop - 1, 1)
    else:
        weights = values
    grad_hat = weights @ eps / (pop * sigma)
    return theta - lr * grad_hat, pop


def random_search_step(theta, loss, radius, rng, center_loss):
    """Sphere proposal, accepted only on strict improvement; one evaluation.

    Returns (theta', center_loss', evals, accepted).
    """
    theta = np.asarray(theta, dtype=float)
    direction = rng.standard_normal(theta.size)
    norm = np.linalg.norm(direction)
    while norm == 0.0:
        direction = rng.standard_normal(theta.size)
        norm = np.linalg.norm(direction)
    proposal = theta + (radius / norm) * direction
    value = float(loss(proposal))
    if value < center_loss:
        return proposal, value, 1, True
    return theta, center_loss, 1, False


def _per_step_evals(config):
    if config.kind == "spsa":
        return 2
    if config.kind == "isotropic_es":
        return config.population
    return 1


def run_baseline(config, objective, initial_params=None, max_steps=None,
                 max_evals=None, callbacks=()):
    """Budgeted driver with the optimizer module's RunResult schema.

    The loss trace records the center loss after every step; for SPSA and
    ES the center evaluation is auxiliary bookkeeping outside the probe
    budget, mirroring the main optimizer's accounting.
    """
    if max_steps is None and max_evals is None:
        raise ValueError("need max_steps or max_evals")
    t_start = time.perf_counter()
    loss = objective.eval_fn
    theta = (
        np.zeros(objective.dim)
        if initial_params is None
        else np.asarray(initial_params, dtype=float).copy()
    )
    rng = np.random.default_rng(config.seed)
    per_step = _per_step_evals(config)
    if max_steps is not None:
        horizon = max_steps
    else:
        horizon = max_evals // per_step
    stability_offset = 0.1 * horizon

    center_loss = float(loss(theta))
    aux_evals = 1
    best_loss = center_loss
    best_params = theta.copy()
    loss_trace = [center_loss]
    eval_trace = [0]
    evals = 0
    t = 0
    aborted = False

    while True:
        if max_steps is not None and t >= max_steps:
            break
        if max_evals is not None and evals + per_step > max_evals:
            break
        if config.kind == "spsa":
            a_t, c_t = spsa_gains(
                t, config.a, config.c, stability_offset,
                config.alpha_exp, config.gamma_exp,
            )
            theta, used = spsa_step(theta, loss, a_t, c_t, rng)
            center_loss = float(loss(theta))
            aux_evals += 1
        elif config.kind == "isotropic_es":
            theta, used = es_step(
                theta, loss, config.sigma, config.lr, config.population,
                rng, config.antithetic, config.rank_shaping,
            )
            center_loss = float(loss(theta))
            aux_evals += 1
        else:
            theta, center_loss, used, _accepted = random_search_step(
                theta, loss, config.radius, rng, center_loss
            )
        evals += used
        t += 1
        loss_trace.append(center_loss)
        eval_trace.append(evals)
        if center_loss < best_loss:
            best_loss = center_loss
            best_params = theta.copy()
        if any(cb(t, center_loss, theta) for cb in callbacks):
            aborted = True
            break

    return RunResult(
        config=config.to_dict(),
        seed=config.seed,
        loss_trace=loss_trace,
        eval_trace=eval_trace,
        best_loss=best_loss,
        best_params=best_params,
        final_params=theta,
        wall_seconds=time.perf_counter() - t_start,
        environment=environment_fingerprint(),
        n_steps=t,
        aborted=aborted,
        aux_evals=aux_evals,
    )
