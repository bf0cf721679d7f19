"""The PolyStep outer loop: rotate, probe, solve, project, repeat.

Each step samples one rotation per particle, probes the loss along rotated
polytope directions, solves a soft assignment over the probe costs, and
moves every particle to the barycenter of its assigned vertices. Momentum,
plan amortization, biased rotations, and blockwise solving are all optional
refinements layered on that core update.
"""

from __future__ import annotations

import platform
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from polystep.assignment import (
    CostEvaluationError,
    SolverOptions,
    TransportPlan,
    barycentric_displacement,
    build_cost_matrix,
    degenerate_rules,
    kl_softmax_plan,
    sinkhorn_plan,
    softmax_plan,
    transport_cost,
)
from polystep.geometry import (
    ParticleMatrix,
    params_to_particles,
    particles_to_params,
    polytope_vertices,
    probe_points,
    sample_biased_rotation,
    sample_rotation,
    step_offsets,
)
from polystep.schedule import Schedule, flat, sample_jitter
from polystep.subspace import (
    build_adaptive,
    build_full,
    build_hybrid,
    build_linear,
    hybrid_subspace_dim,
    reconstruct,
    reconstruct_many,
)

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "StepMetrics",
    "RunResult",
    "init_state",
    "step",
    "amortized_plan",
    "should_solve",
    "run",
    "environment_fingerprint",
]

SOLVER_KINDS = ("softmax", "sinkhorn", "kl_softmax", "greedy", "top_k_mean")
SUBSPACE_MODES = ("full", "hybrid", "linear", "sparse", "adaptive")
PARTICLE_DIMS = (2, 4, 8)

# particle rows embedded per cost-evaluation call, bounded so full-space
# runs on large problems never materialize a probes-by-dimension matrix
EMBED_BATCH_SCALARS = 2_000_000


@dataclass(frozen=True)
class OptimizerConfig:
    d_p: int = 2
    polytope: str = "orthoplex"
    n_probes: int = 1
    solver: str = "softmax"
    solver_options: SolverOptions = field(default_factory=SolverOptions)
    top_k: int = 3
    epsilon: Schedule = field(default_factory=lambda: flat(0.1))
    r_s: Schedule = field(default_factory=lambda: flat(1.0))
    r_p: Schedule = field(default_factory=lambda: flat(2.0))
    momentum: Schedule = field(default_factory=lambda: flat(0.0))
    eta_max: float = 0.0
    subspace_mode: str = "full"
    subspace_rank: int = 8
    amortize_steps: int = 1
    amortize_ema: float = 0.0
    loss_gate_factor: float = 1.5
    biased_rotation: bool = False
    bias_strength: float = 0.5
    blockwise: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_p not in PARTICLE_DIMS:
            raise ValueError(f"d_p must be one of {PARTICLE_DIMS}, got {self.d_p}")
        if self.solver not in SOLVER_KINDS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.subspace_mode not in SUBSPACE_MODES:
            raise ValueError(f"unknown subspace mode {self.subspace_mode!r}")
        if self.n_probes < 1:
            raise ValueError("n_probes must be >= 1")
        if self.amortize_steps < 1:
            raise ValueError("amortize_steps must be >= 1")
        if not 0.0 <= self.amortize_ema <= 1.0:
            raise ValueError("amortize_ema must lie in [0, 1]")
        if self.loss_gate_factor <= 0.0:
            raise ValueError("loss_gate_factor must be positive")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ValueError("bias_strength must lie in [0, 1]")
        if not 0.0 <= self.eta_max < 1.0:
            raise ValueError("eta_max must lie in [0, 1)")

    def to_dict(self):
        def sched(s):
            return {
                "kind": s.kind,
                "start": s.start,
                "target": s.target,
                "horizon": s.horizon,
            }

        opts = self.solver_options
        return {
            "d_p": self.d_p,
            "polytope": self.polytope,
            "n_probes": self.n_probes,
            "solver": self.solver,
            "solver_options": {
                "epsilon": opts.epsilon,
                "omega": opts.omega,
                "max_iter": opts.max_iter,
                "tolerance": opts.tolerance,
                "anderson_depth": opts.anderson_depth,
                "adaptive_omega": opts.adaptive_omega,
                "cost_mean_init": opts.cost_mean_init,
                "dual_momentum_beta": opts.dual_momentum_beta,
                "kl_lambda": opts.kl_lambda,
            },
            "top_k": self.top_k,
            "epsilon_schedule": sched(self.epsilon),
            "r_s_schedule": sched(self.r_s),
            "r_p_schedule": sched(self.r_p),
            "momentum_schedule": sched(self.momentum),
            "eta_max": self.eta_max,
            "subspace_mode": self.subspace_mode,
            "subspace_rank": self.subspace_rank,
            "amortize_steps": self.amortize_steps,
            "amortize_ema": self.amortize_ema,
            "loss_gate_factor": self.loss_gate_factor,
            "biased_rotation": self.biased_rotation,
            "bias_strength": self.bias_strength,
            "blockwise": self.blockwise,
            "seed": self.seed,
        }


@dataclass
class StepMetrics:
    step_index: int
    loss: float
    transport_cost: float
    epsilon: float
    r_s: float
    r_p: float
    momentum: float
    jitter: float
    evals: int
    solver_iterations: int
    solved: bool
    amortized: bool
    gate_tripped: bool


@dataclass
class OptimizerState:
    particles: ParticleMatrix
    rng: np.random.Generator
    t: int = 0
    duals: list = field(default_factory=list)
    rotations: np.ndarray | None = None
    working_plan: TransportPlan | None = None
    momentum_buffer: np.ndarray | None = None
    prev_displacement: np.ndarray | None = None
    last_loss: float = np.inf
    prev_loss: float | None = None
    best_loss: float = np.inf
    best_params: np.ndarray | None = None
    eval_count: int = 0
    aux_eval_count: int = 0
    block_counts: list = field(default_factory=list)

    @property
    def params(self):
        return particles_to_params(self.particles)


def environment_fingerprint():
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def particle_block_counts(widths, d_p, n_particles):
    """Assign each particle to the block holding its first coordinate.

    Returns per-block particle counts with empty blocks dropped, so the
    result is a valid contiguous partition of the particle rows.
    """
    bounds = np.cumsum(widths)
    counts = [0] * len(widths)
    for p in range(n_particles):
        idx = int(np.searchsorted(bounds, p * d_p, side="right"))
        counts[min(idx, len(widths) - 1)] += 1
    return [c for c in counts if c > 0]


def init_state(config, dim, layer_widths=None, initial_loss=None):
    """Fresh optimizer state for a ``dim``-dimensional coordinate vector.

    ``layer_widths`` gives the contiguous coordinate block sizes used for
    blockwise solving; None or a single block disables the partition.
    """
    rng = np.random.default_rng(config.seed)
    particles = params_to_particles(np.zeros(dim), config.d_p)
    if config.blockwise and layer_widths and len(layer_widths) > 1:
        counts = particle_block_counts(
            layer_widths, config.d_p, particles.n_particles
        )
    else:
        counts = [particles.n_particles]
    state = OptimizerState(particles=particles, rng=rng)
    state.block_counts = counts
    state.duals = [None] * len(counts)
    state.momentum_buffer = np.zeros_like(particles.rows)
    state.prev_displacement = np.zeros_like(particles.rows)
    if initial_loss is not None:
        state.last_loss = float(initial_loss)
        state.best_loss = float(initial_loss)
        state.best_params = particles_to_params(particles)
    return state


def should_solve(state, config):
    """True when this step must run a fresh assignment solve."""
    if state.working_plan is None or config.amortize_steps == 1:
        return True
    if state.t % config.amortize_steps == 0:
        return True
    return gate_tripped(state, config)


def gate_tripped(state, config):
    return (
        state.prev_loss is not None
        and np.isfinite(state.prev_loss)
        and state.last_loss > config.loss_gate_factor * state.prev_loss
    )


def amortized_plan(state, config):
    """The plan reused on non-solve steps: the working EMA blend as-is."""
    return state.working_plan


def _blend_plans(working, fresh, ema, a):
    if working is None or ema == 0.0:
        return fresh
    weights = ema * working.weights + (1.0 - ema) * fresh.weights
    weights *= (a / weights.sum(axis=1))[:, None]
    return TransportPlan(
        weights=weights,
        row_marginal=a,
        col_marginal=fresh.col_marginal,
        solver_kind=fresh.solver_kind,
    )


def _solve_block(C_block, config, eps_t, warm):
    n_rows, n_cols = C_block.shape
    a = np.full(n_rows, 1.0 / n_rows)
    b = np.full(n_cols, 1.0 / n_cols)
    kind = config.solver
    if kind == "softmax":
        return softmax_plan(C_block, eps_t, a), None
    if kind == "sinkhorn":
        opts = replace(config.solver_options, epsilon=eps_t)
        return sinkhorn_plan(C_block, a, b, opts, warm=warm)
    if kind == "kl_softmax":
        opts = config.solver_options
        return kl_softmax_plan(
            C_block, eps_t, opts.kl_lambda, a, b,
            max_iter=opts.max_iter, tol=opts.tolerance,
        )
    return degenerate_rules(C_block, eps_t, kind, k=config.top_k), None


def _evaluate_cost(probes, center_padded, d_sub, d_p, objective, theta_base, proj):
    """Embed particle-local probes into full coordinates and batch-evaluate.

    probes: (P, V, K, d_p) in each particle's own coordinates. Each probe
    row is the current center with one particle slice replaced, evaluated
    in chunks so large full-space problems stay within memory. Embedding
    happens in the zero-padded layout; pad columns are dropped before the
    loss sees the rows, so probe motion along padding is invisible.
    """
    n_part, n_vert, n_probe, _ = probes.shape
    rows_per_call = n_vert * n_probe
    chunk = max(1, EMBED_BATCH_SCALARS // max(1, d_sub * rows_per_call))
    entries = np.empty((n_part, n_vert))
    evals = 0
    loss_many = objective.eval_many
    for start in range(0, n_part, chunk):
        stop = min(start + chunk, n_part)
        block = np.tile(center_padded, ((stop - start) * rows_per_call, 1))
        for local, i in enumerate(range(start, stop)):
            rows = slice(local * rows_per_call, (local + 1) * rows_per_call)
            block[rows, i * d_p : (i + 1) * d_p] = probes[i].reshape(
                rows_per_call, d_p
            )
        shaped = block[:, :d_sub].reshape(stop - start, n_vert, n_probe, d_sub)
        try:
            if loss_many is not None:
                cost, n_eval = build_cost_matrix(
                    shaped,
                    None,
                    loss_many=lambda rows: loss_many(
                        theta_base[None, :] + reconstruct_many(proj, rows)
                    ),
                )
            else:
                cost, n_eval = build_cost_matrix(
                    shaped,
                    objective.eval_fn,
                    reconstructor=lambda z: theta_base + reconstruct(proj, z),
                )
        except CostEvaluationError as err:
            i, v, k = err.index
            raise CostEvaluationError((start + i, v, k), err.value) from None
        entries[start:stop] = cost.entries
        evals += n_eval
    return entries, evals


def step(state, config, objective, theta_base, proj, template=None):
    """One full update. Returns (state, StepMetrics); state mutated in place.

    On a cost-evaluation error the state (including the generator) is left
    as it was on entry.
    """
    if template is None:
        template = polytope_vertices(config.polytope, config.d_p)
    t = state.t
    eps_t = config.epsilon(t)
    r_s_t = config.r_s(t)
    r_p_t = config.r_p(t)
    m_t = config.momentum(t)
    particles = state.particles.rows
    n_part = particles.shape[0]
    d_p = particles.shape[1]
    n_vert = template.n_vertices
    a_full = np.full(n_part, 1.0 / n_part)

    solving = should_solve(state, config)
    gate = gate_tripped(state, config)
    rng_snapshot = state.rng.bit_generator.state
    solver_iterations = 0
    evals = 0
    cost_value = float("nan")

    if solving:
        rotations = np.empty((n_part, d_p, d_p))
        for i in range(n_part):
            if config.biased_rotation:
                rotations[i] = sample_biased_rotation(
                    d_p,
                    state.prev_displacement[i],
                    config.bias_strength,
                    state.rng,
                )
            else:
                rotations[i] = sample_rotation(d_p, state.rng)
        eta = sample_jitter(config.eta_max, state.rng)
        probes = np.empty((n_part, n_vert, config.n_probes, d_p))
        for i in range(n_part):
            probes[i] = probe_points(
                particles[i], rotations[i], r_p_t, eps_t, eta,
                config.n_probes, template,
            )
        center_padded = particles.ravel()
        d_sub = state.particles.source_dim
        try:
            entries, evals = _evaluate_cost(
                probes, center_padded, d_sub, d_p, objective, theta_base, proj
            )
        except CostEvaluationError:
            state.rng.bit_generator.state = rng_snapshot
            raise
        plans = []
        duals = []
        row0 = 0
        for bi, count in enumerate(state.block_counts):
            C_block = entries[row0 : row0 + count]
            plan_b, dual_b = _solve_block(
                C_block, config, eps_t, state.duals[bi]
            )
            plans.append(plan_b.weights * (count / n_part))
            duals.append(dual_b)
            if dual_b is not None:
                solver_iterations += dual_b.iterations_used
            row0 += count
        fresh = TransportPlan(
            weights=np.vstack(plans),
            row_marginal=a_full,
            col_marginal=None,
            solver_kind=config.solver,
        )
        if gate:
            # stale-plan revert: discard the blend, trust the fresh solve
            plan = fresh
        else:
            plan = _blend_plans(state.working_plan, fresh, config.amortize_ema, a_full)
        state.working_plan = plan
        state.duals = duals
        state.rotations = rotations
        cost_value = transport_cost(entries, plan)
    else:
        rotations = state.rotations
        eta = 0.0
        plan = amortized_plan(state, config)

    offsets = np.empty((n_part, n_vert, d_p))
    for i in range(n_part):
        offsets[i] = step_offsets(rotations[i], r_s_t, eps_t, template)
    disp = barycentric_displacement(plan, offsets, a_full)

    delta = m_t * state.momentum_buffer + disp
    new_particles = particles + delta

    state.particles = ParticleMatrix(
        rows=new_particles,
        pad_count=state.particles.pad_count,
        source_dim=state.particles.source_dim,
    )
    state.momentum_buffer = delta
    state.prev_displacement = delta
    state.t = t + 1
    state.eval_count += evals

    new_z = particles_to_params(state.particles)
    new_loss = float(objective.eval_fn(theta_base + reconstruct(proj, new_z)))
    state.aux_eval_count += 1
    state.prev_loss = state.last_loss
    state.last_loss = new_loss
    if new_loss < state.best_loss:
        state.best_loss = new_loss
        state.best_params = new_z

    metrics = StepMetrics(
        step_index=t,
        loss=new_loss,
        transport_cost=cost_value,
        epsilon=eps_t,
        r_s=r_s_t,
        r_p=r_p_t,
        momentum=m_t,
        jitter=eta,
        evals=evals,
        solver_iterations=solver_iterations,
        solved=solving,
        amortized=not solving,
        gate_tripped=gate,
    )
    return state, metrics


@dataclass
class RunResult:
    config: dict
    seed: int
    loss_trace: list
    eval_trace: list
    best_loss: float
    best_params: np.ndarray
    final_params: np.ndarray
    wall_seconds: float
    environment: dict
    n_steps: int
    aborted: bool = False
    aux_evals: int = 0

    def to_json_dict(self):
        return {
            "config": self.config,
            "seed": self.seed,
            "loss_trace": [float(v) for v in self.loss_trace],
            "eval_trace": [int(v) for v in self.eval_trace],
            "best_loss": float(self.best_loss),
            "wall_seconds": float(self.wall_seconds),
            "environment": self.environment,
        }


def _build_projection(config, dim, layer_shapes, rng):
    mode = config.subspace_mode
    if mode == "full":
        return build_full(dim)
    if mode == "hybrid":
        if not layer_shapes:
            raise ValueError("hybrid subspace needs the objective's layer shapes")
        return build_hybrid(layer_shapes, config.subspace_rank, rng, seed=config.seed)
    if mode == "linear":
        return build_linear(dim, config.subspace_rank, rng, seed=config.seed)
    if mode == "sparse":
        return build_linear(
            dim, config.subspace_rank, rng, sparse=True, seed=config.seed
        )
    return build_adaptive(dim, config.subspace_rank, rng, seed=config.seed)


def _layer_widths(config, proj, layer_shapes):
    if proj.mode == "hybrid":
        return [width for _slice, _block, width in proj.blocks]
    if proj.mode == "full" and layer_shapes:
        return [shape.size for shape in layer_shapes]
    return None


def run(
    config,
    objective,
    initial_params=None,
    max_steps=None,
    max_evals=None,
    callbacks=(),
):
    """Drive step() under a steps or evaluations budget.

    The budget never starts a solve it cannot afford, so a zero evaluation
    budget returns the initial parameters untouched. Callbacks receive
    (metrics, state) after each step; a truthy return aborts gracefully.
    At termination the best checkpoint is restored as the result params.
    """
    if max_steps is None and max_evals is None:
        raise ValueError("need max_steps or max_evals")
    if max_steps is not None and max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    if max_evals is not None and max_evals < 0:
        raise ValueError("max_evals must be >= 0")

    t_start = time.perf_counter()
    theta0 = (
        np.zeros(objective.dim)
        if initial_params is None
        else np.asarray(initial_params, dtype=float).copy()
    )
    rng = np.random.default_rng(config.seed)
    layer_shapes = getattr(objective, "layer_shapes", None) or []
    proj = _build_projection(config, objective.dim, layer_shapes, rng)
    template = polytope_vertices(config.polytope, config.d_p)

    # align delta-evaluating objectives before anything probes from theta0
    if objective.on_center_update is not None:
        objective.on_center_update(theta0)
    initial_loss = float(objective.eval_fn(theta0))
    state = init_state(
        config,
        proj.d_sub,
        layer_widths=_layer_widths(config, proj, layer_shapes),
        initial_loss=initial_loss,
    )
    state.aux_eval_count += 1
    # continue the stream the projection build consumed from, so the
    # rotation draws never replay the projection entries
    state.rng = rng

    per_solve = state.particles.n_particles * template.n_vertices * config.n_probes
    loss_trace = [initial_loss]
    eval_trace = [0]
    aborted = False
    theta_prev = theta0.copy()

    while True:
        if max_steps is not None and state.t >= max_steps:
            break
        predicted = per_solve if should_solve(state, config) else 0
        if max_evals is not None and state.eval_count + predicted > max_evals:
            break
        state, metrics = step(state, config, objective, theta0, proj, template)
        loss_trace.append(metrics.loss)
        eval_trace.append(state.eval_count)
        if proj.mode == "adaptive" or objective.on_center_update is not None:
            theta_new = theta0 + reconstruct(proj, state.params)
            if proj.mode == "adaptive":
                proj.note_displacement(theta_new - theta_prev)
            if objective.on_center_update is not None:
                objective.on_center_update(theta_new)
            theta_prev = theta_new
        if any(cb(metrics, state) for cb in callbacks):
            aborted = True
            break

    final_z = state.params
    best_z = final_z if state.best_params is None else state.best_params
    best_theta = theta0 + reconstruct(proj, best_z)
    final_theta = theta0 + reconstruct(proj, final_z)
    return RunResult(
        config=config.to_dict(),
        seed=config.seed,
        loss_trace=loss_trace,
        eval_trace=eval_trace,
        best_loss=state.best_loss,
        best_params=best_theta,
        final_params=final_theta,
        wall_seconds=time.perf_counter() - t_start,
        environment=environment_fingerprint(),
        n_steps=state.t,
        aborted=aborted,
        aux_evals=state.aux_eval_count,
    )
