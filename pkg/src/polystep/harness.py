"""Experiment orchestration: task construction, seeded multi-run execution,
flat config files, JSON persistence, and ablation sweeps.

Config files are flat ``key = value`` text with dotted section keys
(``optimizer.solver = sinkhorn``, ``task.n_vars = 1000``). Schedules are
written ``kind:args``, e.g. ``cosine:10:0.1:200`` or a bare number for a
constant. Every persisted record embeds the fully resolved configuration,
so a run can be replayed bit-for-bit from its own output.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from polystep import assignment, baselines, maxsat, objectives, rlenv
from polystep import optimizer as opt
from polystep.assignment import SolverOptions
from polystep.baselines import BASELINE_KINDS, BaselineConfig
from polystep.optimizer import OptimizerConfig, environment_fingerprint
from polystep.schedule import Schedule

__all__ = [
    "SCHEMA_VERSION",
    "DEFAULT_SEEDS",
    "TASKS",
    "ConfigError",
    "ExperimentConfig",
    "ResultRecord",
    "TaskBundle",
    "build_task",
    "run_single",
    "run_experiment",
    "aggregate",
    "save_records",
    "load_records",
    "parse_config_text",
    "config_from_mapping",
    "config_to_text",
    "parse_schedule_spec",
    "schedule_spec",
    "ablate_update_rule",
    "ablate_rank",
    "ablate_kl_lambda",
    "ablate_schedule_shape",
]

SCHEMA_VERSION = 1
DEFAULT_SEEDS = (42, 123, 456, 789, 1337)
TASKS = ("quadratic", "blobs", "maxsat", "cartpole")
METHODS = ("polystep",) + BASELINE_KINDS

# decorrelation constants so task data, initial points, and optimizer
# rotations never share a generator stream
_DATA_STREAM = 17
_INIT_STREAM = 101
_EVAL_STREAM = 211


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "quadratic"
    method: str = "polystep"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    seeds: tuple = DEFAULT_SEEDS
    budget: int = 10_000
    max_steps: int | None = None
    task_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")

    def to_dict(self):
        return {
            "task": self.task,
            "method": self.method,
            "optimizer": self.optimizer.to_dict(),
            "baseline": self.baseline.to_dict(),
            "seeds": list(self.seeds),
            "budget": self.budget,
            "max_steps": self.max_steps,
            "task_options": dict(self.task_options),
        }


@dataclass
class ResultRecord:
    task: str
    method: str
    seed: int
    loss_trace: list
    eval_trace: list
    best_loss: float
    metric: float | None
    metric_name: str | None
    wall_seconds: float
    aux_evals: int
    config: dict
    environment: dict
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_json_dict(self):
        return {
            "schema_version": self.schema_version,
            "task": self.task,
            "method": self.method,
            "seed": self.seed,
            "loss_trace": self.loss_trace,
            "eval_trace": self.eval_trace,
            "best_loss": self.best_loss,
            "metric": self.metric,
            "metric_name": self.metric_name,
            "wall_seconds": self.wall_seconds,
            "aux_evals": self.aux_evals,
            "config": self.config,
            "environment": self.environment,
            "error": self.error,
        }


@dataclass
class TaskBundle:
    objective: objectives.Objective
    initial_params: np.ndarray
    metric_fn: object = None
    metric_name: str = None
    metric_params: str = "best"  # score best-loss checkpoint or final iterate
    extras: dict = field(default_factory=dict)


def _options(config, **defaults):
    merged = dict(defaults)
    for key, value in config.task_options.items():
        if key not in defaults:
            raise ConfigError(
                f"unknown option {key!r} for task {config.task!r}"
            )
        merged[key] = type(defaults[key])(value) if defaults[key] is not None else value
    return merged


def build_task(config, seed):
    """Materialize the seeded objective, start point, and metric closure."""
    if config.task == "quadratic":
        o = _options(config, dim=16, init_scale=3.0)
        objective = objectives.quadratic(o["dim"])
        init_rng = np.random.default_rng([seed, _INIT_STREAM])
        theta0 = o["init_scale"] * init_rng.standard_normal(o["dim"])
        return TaskBundle(objective, theta0)

    if config.task == "blobs":
        o = _options(
            config,
            classes=3,
            per_class=20,
            spread=0.6,
            features=2,
            width=16,
            activation="sign",
            data_seed=7,
            init_scale=1.0,
            metric_params="best",
        )
        data_rng = np.random.default_rng([o["data_seed"], _DATA_STREAM])
        data = objectives.make_blobs(
            o["classes"], o["per_class"], o["spread"], data_rng,
            n_features=o["features"],
        )
        model = objectives.TinyMLP(
            o["features"], o["width"], o["classes"], activation=o["activation"]
        )
        objective = objectives.mlp_loss(model, data)
        init_rng = np.random.default_rng([seed, _INIT_STREAM])
        theta0 = o["init_scale"] * init_rng.standard_normal(model.n_params)
        return TaskBundle(
            objective,
            theta0,
            metric_fn=lambda params: model.accuracy(params, data),
            metric_name="train_accuracy",
            metric_params=o["metric_params"],
            extras={"model": model, "data": data},
        )

    if config.task == "maxsat":
        o = _options(config, n_vars=1000, ratio=4.27, init_scale=1.0)
        inst_rng = np.random.default_rng([seed, _DATA_STREAM])
        instance = maxsat.generate_random_3sat(o["n_vars"], o["ratio"], inst_rng)
        index = maxsat.build_inverted_index(instance)
        objective = maxsat.sat_probe_adapter(instance, index)
        init_rng = np.random.default_rng([seed, _INIT_STREAM])
        theta0 = o["init_scale"] * init_rng.standard_normal(o["n_vars"])
        return TaskBundle(
            objective,
            theta0,
            metric_fn=lambda params: maxsat.summarize_assignment(
                instance, params
            )["fraction"],
            metric_name="satisfaction",
            extras={"instance": instance, "index": index},
        )

    o = _options(
        config,
        precision="float32",
        width=16,
        rollouts=8,
        eval_episodes=20,
        init_scale=0.5,
    )
    env = rlenv.CartPoleEnv()
    policy = rlenv.Policy(precision=o["precision"], width=o["width"])
    crn_base = 100_000 * (seed + 1)
    objective = rlenv.rl_objective(env, policy, o["rollouts"], crn_base)
    init_rng = np.random.default_rng([seed, _INIT_STREAM])
    theta0 = o["init_scale"] * init_rng.standard_normal(policy.n_params)
    # zero-initialized readout: random argmax policies act as constant
    # controllers whose returns are insensitive to probe-sized moves, so
    # the hidden layer gets random features and the readout starts blank
    theta0[5 * o["width"]:] = 0.0

    def eval_return(params):
        est = rlenv.batched_cost(
            env, policy, params[None, :], o["eval_episodes"],
            _EVAL_STREAM * 1_000_000,
        )
        return float(-est.costs[0])

    return TaskBundle(
        objective,
        theta0,
        metric_fn=eval_return,
        metric_name="eval_return",
        extras={"env": env, "policy": policy, "crn_base": crn_base},
    )


def run_single(config, seed):
    """One seeded run; failures become error records instead of raising."""
    started = time.perf_counter()
    try:
        bundle = build_task(config, seed)
        if config.method == "polystep":
            result = opt.run(
                replace(config.optimizer, seed=seed),
                bundle.objective,
                initial_params=bundle.initial_params,
                max_steps=config.max_steps,
                max_evals=config.budget,
            )
        else:
            result = baselines.run_baseline(
                replace(config.baseline, kind=config.method, seed=seed),
                bundle.objective,
                initial_params=bundle.initial_params,
                max_steps=config.max_steps,
                max_evals=config.budget,
            )
        scored = (
            result.final_params
            if bundle.metric_params == "final"
            else result.best_params
        )
        metric = (
            float(bundle.metric_fn(scored))
            if bundle.metric_fn is not None
            else None
        )
        return ResultRecord(
            task=config.task,
            method=config.method,
            seed=seed,
            loss_trace=[float(v) for v in result.loss_trace],
            eval_trace=[int(v) for v in result.eval_trace],
            best_loss=float(result.best_loss),
            metric=metric,
            metric_name=bundle.metric_name,
            wall_seconds=result.wall_seconds,
            aux_evals=result.aux_evals,
            config=config.to_dict(),
            environment=result.environment,
        )
    except Exception as exc:  # partial seed failure: record and continue
        return ResultRecord(
            task=config.task,
            method=config.method,
            seed=seed,
            loss_trace=[],
            eval_trace=[],
            best_loss=float("nan"),
            metric=None,
            metric_name=None,
            wall_seconds=time.perf_counter() - started,
            aux_evals=0,
            config=config.to_dict(),
            environment=environment_fingerprint(),
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(config, parallel=False):
    """One record per seed, in seed order."""
    if parallel:
        with ThreadPoolExecutor(max_workers=len(config.seeds)) as pool:
            return list(pool.map(lambda s: run_single(config, s), config.seeds))
    return [run_single(config, seed) for seed in config.seeds]


def _mean_std(values):
    if not values:
        return float("nan"), float("nan")
    if len(values) == 1:
        return float(values[0]), 0.0
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1))


def aggregate(records):
    """Per (task, method) mean and sample standard deviation."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.task, rec.method), []).append(rec)
    budgets = {rec.config["budget"] for rec in records}
    rows = []
    for (task, method), group in sorted(groups.items()):
        clean = [r for r in group if r.error is None]
        loss_mean, loss_std = _mean_std([r.best_loss for r in clean])
        metrics = [r.metric for r in clean if r.metric is not None]
        metric_mean, metric_std = _mean_std(metrics)
        rows.append(
            {
                "task": task,
                "method": method,
                "n_seeds": len(group),
                "failed_seeds": [r.seed for r in group if r.error is not None],
                "best_loss_mean": loss_mean,
                "best_loss_std": loss_std,
                "metric_name": clean[0].metric_name if clean else None,
                "metric_mean": metric_mean if metrics else None,
                "metric_std": metric_std if metrics else None,
                "budget": clean[0].config["budget"] if clean else None,
            }
        )
    return {"methods": rows, "equal_budget": len(budgets) <= 1}


def save_records(records, path):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "records": [rec.to_json_dict() for rec in records],
        "summary": aggregate(records),
    }
    Path(path).write_text(json.dumps(payload, indent=2))
    return payload


def load_records(path):
    payload = json.loads(Path(path).read_text())
    records = [
        ResultRecord(
            task=row["task"],
            method=row["method"],
            seed=row["seed"],
            loss_trace=row["loss_trace"],
            eval_trace=row["eval_trace"],
            best_loss=row["best_loss"],
            metric=row["metric"],
            metric_name=row["metric_name"],
            wall_seconds=row["wall_seconds"],
            aux_evals=row["aux_evals"],
            config=row["config"],
            environment=row["environment"],
            error=row["error"],
            schema_version=row["schema_version"],
        )
        for row in payload["records"]
    ]
    return records


# -- flat config files -------------------------------------------------------

_SCHEDULE_FIELDS = {"epsilon", "r_s", "r_p", "momentum"}


def parse_schedule_spec(spec):
    """'0.1' -> flat; 'cosine:10:0.1:200' -> cosine from 10 to 0.1 over 200."""
    text = str(spec).strip()
    if ":" not in text:
        try:
            return Schedule("flat", start=float(text))
        except ValueError:
            raise ConfigError(f"bad schedule spec {spec!r}")
    kind, _, rest = text.partition(":")
    args = rest.split(":")
    try:
        if kind == "flat" and len(args) == 1:
            return Schedule("flat", start=float(args[0]))
        if kind == "inverse_sqrt" and len(args) == 1:
            return Schedule("inverse_sqrt", start=float(args[0]))
        if kind in ("cosine", "linear") and len(args) == 3:
            return Schedule(
                kind, start=float(args[0]), target=float(args[1]),
                horizon=int(args[2]),
            )
    except ValueError:
        pass
    raise ConfigError(f"bad schedule spec {spec!r}")


def schedule_spec(sched):
    if sched.kind == "flat":
        return f"flat:{sched.start!r}"
    if sched.kind == "inverse_sqrt":
        return f"inverse_sqrt:{sched.start!r}"
    return f"{sched.kind}:{sched.start!r}:{sched.target!r}:{sched.horizon}"


def _coerce_like(default, raw, key):
    try:
        if isinstance(default, bool):
            lowered = str(raw).strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for {key}")


def _dataclass_kwargs(cls, entries, prefix):
    defaults = cls()
    known = {f.name: getattr(defaults, f.name) for f in fields(cls)}
    kwargs = {}
    for name, raw in entries.items():
        if name not in known:
            raise ConfigError(f"unknown config key {prefix}{name}")
        if name in _SCHEDULE_FIELDS and cls is OptimizerConfig:
            kwargs[name] = parse_schedule_spec(raw)
        elif name == "solver_options":
            raise ConfigError("solver_options fields need dotted keys")
        else:
            kwargs[name] = _coerce_like(known[name], raw, prefix + name)
    return kwargs


def parse_config_text(text):
    """Flat ``key = value`` lines; '#' comments; later keys win."""
    mapping = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def config_from_mapping(mapping):
    top = {}
    optimizer_entries = {}
    solver_entries = {}
    baseline_entries = {}
    task_options = {}
    for key, raw in mapping.items():
        if key.startswith("optimizer.solver_options."):
            solver_entries[key.rsplit(".", 1)[1]] = raw
        elif key.startswith("optimizer."):
            optimizer_entries[key.split(".", 1)[1]] = raw
        elif key.startswith("baseline."):
            baseline_entries[key.split(".", 1)[1]] = raw
        elif key.startswith("task."):
            task_options[key.split(".", 1)[1]] = raw
        elif key in ("task", "method"):
            top[key] = str(raw).strip()
        elif key == "seeds":
            try:
                top["seeds"] = tuple(
                    int(tok) for tok in str(raw).replace(",", " ").split()
                )
            except ValueError:
                raise ConfigError(f"cannot parse seeds {raw!r}")
        elif key == "budget":
            top["budget"] = _coerce_like(0, raw, key)
        elif key == "max_steps":
            top["max_steps"] = (
                None if str(raw).strip().lower() == "none"
                else _coerce_like(0, raw, key)
            )
        else:
            raise ConfigError(f"unknown config key {key!r}")
    solver_kwargs = _dataclass_kwargs(
        SolverOptions, solver_entries, "optimizer.solver_options."
    )
    optimizer_kwargs = _dataclass_kwargs(
        OptimizerConfig, optimizer_entries, "optimizer."
    )
    if solver_kwargs:
        optimizer_kwargs["solver_options"] = SolverOptions(**solver_kwargs)
    baseline_kwargs = _dataclass_kwargs(
        BaselineConfig, baseline_entries, "baseline."
    )
    try:
        return ExperimentConfig(
            optimizer=OptimizerConfig(**optimizer_kwargs),
            baseline=BaselineConfig(**baseline_kwargs),
            task_options=task_options,
            **top,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, str)):
        return str(value)
    return repr(value)  # repr round-trips float precision


def config_to_text(config):
    """Serialize the fully resolved config; parsing it back round-trips."""
    lines = [
        f"task = {config.task}",
        f"method = {config.method}",
        "seeds = " + ", ".join(str(s) for s in config.seeds),
        f"budget = {config.budget}",
    ]
    if config.max_steps is not None:
        lines.append(f"max_steps = {config.max_steps}")
    for key, value in sorted(config.task_options.items()):
        lines.append(f"task.{key} = {_fmt(value)}")
    for f in fields(OptimizerConfig):
        value = getattr(config.optimizer, f.name)
        if f.name in _SCHEDULE_FIELDS:
            lines.append(f"optimizer.{f.name} = {schedule_spec(value)}")
        elif f.name == "solver_options":
            for sf in fields(SolverOptions):
                lines.append(
                    f"optimizer.solver_options.{sf.name} = "
                    f"{_fmt(getattr(value, sf.name))}"
                )
        else:
            lines.append(f"optimizer.{f.name} = {_fmt(value)}")
    for f in fields(BaselineConfig):
        lines.append(
            f"baseline.{f.name} = {_fmt(getattr(config.baseline, f.name))}"
        )
    return "\n".join(lines) + "\n"


# -- ablation sweeps ---------------------------------------------------------


def _sweep(config_variants, parallel=False):
    rows = []
    for label, config in config_variants:
        records = run_experiment(config, parallel=parallel)
        summary = aggregate(records)["methods"][0]
        summary["variant"] = label
        rows.append({"summary": summary, "records": records})
    return rows


def ablate_update_rule(base, rules=("softmax", "sinkhorn", "greedy",
                                    "top_k_mean"), parallel=False):
    """Same task and budget, only the assignment solver changes."""
    variants = [
        (rule, replace(base, optimizer=replace(base.optimizer, solver=rule)))
        for rule in rules
    ]
    return _sweep(variants, parallel)


def ablate_rank(base, ranks=(2, 4, 8, 16), parallel=False):
    variants = [
        (
            f"rank={rank}",
            replace(
                base,
                optimizer=replace(
                    base.optimizer,
                    subspace_mode="hybrid",
                    subspace_rank=rank,
                ),
            ),
        )
        for rank in ranks
    ]
    return _sweep(variants, parallel)


def ablate_schedule_shape(base, flat_value, cosine_start, cosine_target,
                          horizon, parallel=False):
    """Flat vs cosine temperature at equal budget."""
    flat_cfg = replace(
        base, optimizer=replace(base.optimizer, epsilon=Schedule("flat", flat_value))
    )
    cosine_cfg = replace(
        base,
        optimizer=replace(
            base.optimizer,
            epsilon=Schedule(
                "cosine", start=cosine_start, target=cosine_target,
                horizon=horizon,
            ),
        ),
    )
    return _sweep([("flat", flat_cfg), ("cosine", cosine_cfg)], parallel)


def ablate_kl_lambda(lambdas=(1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3), seeds=DEFAULT_SEEDS,
                     shape=(12, 6), epsilon=0.1):
    """Column-marginal violation of the KL-softmax plan per lambda.

    Pure solver sweep on random cost matrices; no training involved.
    """
    rows = []
    for lam in lambdas:
        violations = []
        for seed in seeds:
            rng = np.random.default_rng([seed, _DATA_STREAM])
            cost = rng.uniform(0.0, 1.0, shape)
            a = np.full(shape[0], 1.0 / shape[0])
            b = np.full(shape[1], 1.0 / shape[1])
            plan, _ = assignment.kl_softmax_plan(cost, epsilon, lam, a, b)
            violations.append(
                float(np.abs(plan.weights.sum(axis=0) - b).sum())
            )
        mean, std = _mean_std(violations)
        rows.append({"lambda": lam, "violation_mean": mean, "violation_std": std})
    return rows
