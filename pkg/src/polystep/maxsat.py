"""Random 3-SAT instances, DIMACS parsing, and a thresholded clause
satisfaction objective with exact incremental (delta) evaluation.

Variables are real parameters; the boolean assignment is theta >= 0, which
is the sigmoid-threshold rule sigma(theta) >= 0.5 without the needless
transcendental. Loss is the unsatisfied clause fraction, a piecewise
constant landscape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from polystep.objectives import PIECEWISE_CONSTANT, Objective

__all__ = [
    "CnfInstance",
    "InvertedIndex",
    "SatState",
    "DimacsError",
    "generate_random_3sat",
    "parse_dimacs",
    "full_state",
    "build_inverted_index",
    "delta_eval",
    "sat_objective",
    "sat_probe_adapter",
    "summarize_assignment",
]

FULL_EVAL_FLIP_FRACTION = 0.5


@dataclass(frozen=True)
class CnfInstance:
    """CNF with at most 3 literals per clause, 1-based signed literals.

    Rows of ``clauses`` hold literals padded with 0 on the right when a
    parsed clause normalized to fewer than three distinct literals.
    ``always_sat`` marks tautological clauses (x or not-x present), which
    count as satisfied under every assignment.
    """

    n_vars: int
    clauses: np.ndarray
    always_sat: np.ndarray

    def __post_init__(self):
        self.clauses.setflags(write=False)
        self.always_sat.setflags(write=False)

    @property
    def clause_count(self):
        return self.clauses.shape[0]


@dataclass(frozen=True)
class InvertedIndex:
    """CSR occurrence lists: variable -> clause ids (sorted) + polarities.

    Tautological clauses are excluded; their satisfaction never changes.
    """

    offsets: np.ndarray
    clause_ids: np.ndarray
    polarities: np.ndarray  # True where the literal is positive

    def occurrences(self, var):
        lo, hi = self.offsets[var], self.offsets[var + 1]
        return self.clause_ids[lo:hi], self.polarities[lo:hi]


@dataclass
class SatState:
    assignment: np.ndarray
    counts: np.ndarray
    satisfied_total: int
    n_always: int

    def copy(self):
        return SatState(
            assignment=self.assignment.copy(),
            counts=self.counts.copy(),
            satisfied_total=self.satisfied_total,
            n_always=self.n_always,
        )


class DimacsError(ValueError):
    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


def generate_random_3sat(n_vars, ratio, rng):
    """round(ratio * n_vars) clauses of 3 distinct uniform variables,
    each literal negated with probability 1/2."""
    if n_vars < 3:
        raise ValueError(f"need at least 3 variables, got {n_vars}")
    n_clauses = int(np.rint(ratio * n_vars))
    variables = rng.integers(0, n_vars, size=(n_clauses, 3))
    while True:
        dup = (
            (variables[:, 0] == variables[:, 1])
            | (variables[:, 0] == variables[:, 2])
            | (variables[:, 1] == variables[:, 2])
        )
        if not dup.any():
            break
        variables[dup] = rng.integers(0, n_vars, size=(int(dup.sum()), 3))
    signs = rng.integers(0, 2, size=(n_clauses, 3)) * 2 - 1
    clauses = ((variables + 1) * signs).astype(np.int64)
    return CnfInstance(
        n_vars=n_vars,
        clauses=clauses,
        always_sat=np.zeros(n_clauses, dtype=bool),
    )


def _normalize_clause(literals, line):
    """Drop duplicate literals; detect complementary pairs (tautologies)."""
    seen = []
    for lit in literals:
        if lit in seen:
            warnings.warn(
                f"line {line}: duplicate literal {lit} dropped", stacklevel=3
            )
            continue
        seen.append(lit)
    variables = [abs(lit) for lit in seen]
    tautology = len(set(variables)) < len(variables)
    if tautology:
        warnings.warn(
            f"line {line}: tautological clause marked always satisfied",
            stacklevel=3,
        )
    if len(seen) > 3:
        raise DimacsError(
            f"clause has {len(seen)} distinct literals, at most 3 supported",
            line,
        )
    return seen, tautology


def parse_dimacs(text):
    """Parse DIMACS CNF: comments, a "p cnf" header, 0-terminated clauses."""
    n_vars = None
    declared_clauses = None
    header_line = 0
    rows = []
    always = []
    pending = []
    pending_line = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("c"):
            continue
        if stripped.startswith("p"):
            parts = stripped.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"malformed header {stripped!r}", line_no)
            n_vars, declared_clauses = int(parts[2]), int(parts[3])
            header_line = line_no
            continue
        if n_vars is None:
            raise DimacsError("clause before the p cnf header", line_no)
        try:
            tokens = [int(tok) for tok in stripped.split()]
        except ValueError:
            raise DimacsError(f"non-integer token in {stripped!r}", line_no)
        for tok in tokens:
            if tok == 0:
                literals, tautology = _normalize_clause(pending, pending_line)
                rows.append(literals)
                always.append(tautology)
                pending = []
            else:
                if not pending:
                    pending_line = line_no
                if abs(tok) > n_vars:
                    raise DimacsError(
                        f"literal {tok} exceeds declared {n_vars} variables",
                        line_no,
                    )
                pending.append(tok)
    if pending:
        raise DimacsError("unterminated clause at end of input", pending_line)
    if n_vars is None:
        raise DimacsError("missing p cnf header", 1)
    if len(rows) != declared_clauses:
        raise DimacsError(
            f"header declares {declared_clauses} clauses, found {len(rows)}",
            header_line,
        )
    clauses = np.zeros((len(rows), 3), dtype=np.int64)
    for i, literals in enumerate(rows):
        clauses[i, : len(literals)] = literals
    return CnfInstance(
        n_vars=n_vars,
        clauses=clauses,
        always_sat=np.array(always, dtype=bool),
    )


def full_state(instance, assignment):
    """Count satisfied literals per clause from scratch."""
    assignment = np.asarray(assignment, dtype=bool)
    lits = instance.clauses
    live = lits != 0
    variables = np.abs(lits) - 1
    positive = lits > 0
    sat = live & (assignment[np.clip(variables, 0, None)] == positive)
    counts = sat.sum(axis=1).astype(np.int32)
    satisfied = int((instance.always_sat | (counts >= 1)).sum())
    return SatState(
        assignment=assignment.copy(),
        counts=counts,
        satisfied_total=satisfied,
        n_always=int(instance.always_sat.sum()),
    )


def build_inverted_index(instance):
    """CSR over variables; clause ids ascending under each variable."""
    lits = instance.clauses
    live = (lits != 0) & ~instance.always_sat[:, None]
    clause_of = np.broadcast_to(
        np.arange(lits.shape[0])[:, None], lits.shape
    )[live]
    variables = (np.abs(lits) - 1)[live]
    polarity = (lits > 0)[live]
    order = np.argsort(variables, kind="stable")
    counts = np.bincount(variables, minlength=instance.n_vars)
    offsets = np.zeros(instance.n_vars + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return InvertedIndex(
        offsets=offsets,
        clause_ids=clause_of[order].astype(np.int64),
        polarities=polarity[order],
    )


def delta_eval(state, index, flipped_vars):
    """Flip variables in place, updating counts via the occurrence lists.

    Processes flips sequentially (a variable listed twice nets out), touches
    only the clauses containing flipped variables, and maintains
    satisfied_total incrementally. Integer arithmetic: the result equals a
    full recomputation exactly. Returns the mutated state.
    """
    for var in np.atleast_1d(np.asarray(flipped_vars, dtype=np.int64)):
        ids, pols = index.occurrences(var)
        new_value = not state.assignment[var]
        state.assignment[var] = new_value
        if ids.size == 0:
            continue
        step = np.where(pols == new_value, 1, -1).astype(np.int32)
        before = state.counts[ids]
        after = before + step
        state.counts[ids] = after
        state.satisfied_total += int(((before == 0) & (after > 0)).sum())
        state.satisfied_total -= int(((before > 0) & (after == 0)).sum())
    return state


def sat_objective(instance):
    """loss(theta) = 1 - satisfied fraction under assignment theta >= 0."""
    m = instance.clause_count

    def eval_fn(theta):
        state = full_state(instance, np.asarray(theta) >= 0.0)
        return 1.0 - state.satisfied_total / m

    def eval_many(thetas):
        return np.array([eval_fn(row) for row in np.asarray(thetas)])

    return Objective(
        name="maxsat",
        dim=instance.n_vars,
        eval_fn=eval_fn,
        smoothness=PIECEWISE_CONSTANT,
        eval_many=eval_many,
    )


@dataclass
class SatProbeStats:
    """Clause-touch accounting for the incremental probe evaluator."""

    clause_evals: int = 0
    delta_probes: int = 0
    full_probes: int = 0

    def reset(self):
        self.clause_evals = 0
        self.delta_probes = 0
        self.full_probes = 0


def sat_probe_adapter(instance, index=None):
    """Objective whose probe evaluations are deltas from the current center.

    Each evaluation diffs the probe's thresholded assignment against the
    center's; sparse differences are applied with delta_eval, read, and
    reverted. When more than half the variables cross sign, a fresh full
    evaluation runs instead. ``on_center_update`` re-centers after each
    optimizer step. The returned objective carries a ``stats`` attribute
    counting clause touches (a full pass counts one touch per live
    literal-clause pair).
    """
    if index is None:
        index = build_inverted_index(instance)
    m = instance.clause_count
    full_cost = int(index.offsets[-1])
    stats = SatProbeStats()
    center = {"bits": np.zeros(instance.n_vars, dtype=bool)}
    center["state"] = full_state(instance, center["bits"])

    def touched(flips):
        return int(
            (index.offsets[flips + 1] - index.offsets[flips]).sum()
        )

    def eval_fn(theta):
        bits = np.asarray(theta) >= 0.0
        flips = np.flatnonzero(bits != center["bits"])
        if flips.size > FULL_EVAL_FLIP_FRACTION * instance.n_vars:
            stats.full_probes += 1
            stats.clause_evals += full_cost
            state = full_state(instance, bits)
            return 1.0 - state.satisfied_total / m
        stats.delta_probes += 1
        # apply + revert evaluates each touched clause once under the
        # probe's assignment; the revert restores cached knowledge
        stats.clause_evals += touched(flips)
        state = center["state"]
        delta_eval(state, index, flips)
        value = 1.0 - state.satisfied_total / m
        delta_eval(state, index, flips)
        return value

    def eval_many(thetas):
        return np.array([eval_fn(row) for row in np.asarray(thetas)])

    def on_center_update(theta):
        bits = np.asarray(theta) >= 0.0
        flips = np.flatnonzero(bits != center["bits"])
        if flips.size > FULL_EVAL_FLIP_FRACTION * instance.n_vars:
            stats.clause_evals += full_cost
            center["state"] = full_state(instance, bits)
        elif flips.size:
            stats.clause_evals += touched(flips)
            delta_eval(center["state"], index, flips)
        center["bits"] = bits.copy()

    obj = Objective(
        name="maxsat-delta",
        dim=instance.n_vars,
        eval_fn=eval_fn,
        smoothness=PIECEWISE_CONSTANT,
        eval_many=eval_many,
        on_center_update=on_center_update,
    )
    obj.stats = stats
    return obj


def summarize_assignment(instance, theta):
    state = full_state(instance, np.asarray(theta) >= 0.0)
    return {
        "n_vars": instance.n_vars,
        "clauses": instance.clause_count,
        "satisfied": state.satisfied_total,
        "fraction": state.satisfied_total / instance.clause_count,
    }
