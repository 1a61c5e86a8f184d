"""Gradient-free NOx minimization over forest surrogates.

Forests are piecewise constant, so the search is derivative free: uniform
random seeding followed by a coordinate pattern search on an exact-penalty
score. Feasibility of the returned point is re-checked without tolerance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, GridTooLargeError, SchemaError
from .forest import ForestModel
from .rng import new_state, uniform_units

PENALTY_RHO = 1e6
START_STEP = 0.25
MIN_STEP = 1e-3
MAX_GRID_POINTS = 10**7

# Constraint defaults for CO2 and O2, in percent.
DEFAULT_CONSTRAINT_BOUNDS = {"co2": (0.0, 10.0), "o2": (0.0, 20.0)}


@dataclass(frozen=True)
class Constraint:
    model: ForestModel
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not self.lower <= self.upper:
            raise ValueError(f"constraint on {self.model.target_name}: lower > upper")

    @property
    def name(self) -> str:
        return self.model.target_name


def lag0_state_names(model: ForestModel) -> tuple[str, ...]:
    names = [n for n in model.feature_names if n.endswith("_lag0")]
    return tuple(n[: -len("_lag0")] for n in names)


@dataclass(frozen=True)
class ConstrainedProblem:
    """Minimize ``objective_model`` over ``decision_bounds`` subject to ``constraints``.

    ``history`` fills the lagged feature columns: ``None`` copies the
    candidate into every lag (steady state); otherwise row ``k - 1`` holds
    the physical states used for lag ``k``.
    """

    objective_model: ForestModel
    constraints: tuple[Constraint, ...]
    decision_bounds: tuple[tuple[float, float], ...]
    state_names: tuple[str, ...] = ()
    history: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "decision_bounds", tuple(tuple(map(float, b)) for b in self.decision_bounds))
        names = self.state_names or lag0_state_names(self.objective_model)
        object.__setattr__(self, "state_names", tuple(names))
        if len(self.decision_bounds) != len(self.state_names):
            raise DimensionError("one (lower, upper) pair per machine state is required")
        for lo, hi in self.decision_bounds:
            if not lo <= hi:
                raise ValueError(f"decision bound lower {lo} > upper {hi}")
        for m in self.models:
            if lag0_state_names(m) and lag0_state_names(m) != self.state_names:
                raise SchemaError(f"model for {m.target_name} uses states {lag0_state_names(m)}")
            if m.n_features != len(self.state_names) * (m.lag + 1):
                raise SchemaError(f"model for {m.target_name} has {m.n_features} features")
        if self.history is not None:
            h = np.asarray(self.history, dtype=np.float64)
            if h.ndim != 2 or h.shape[1] != len(self.state_names):
                raise DimensionError("history must be (lag, n_states)")
            if h.shape[0] < max(m.lag for m in self.models):
                raise DimensionError("history shorter than the deepest model lag")
            object.__setattr__(self, "history", h)

    @property
    def models(self) -> list[ForestModel]:
        return [self.objective_model] + [c.model for c in self.constraints]

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.decision_bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.decision_bounds])

    def expand(self, states: np.ndarray, lag: int) -> np.ndarray:
        """Full raw feature rows for candidate states, shape ``(n, n_states * (lag + 1))``."""
        states = np.atleast_2d(states)
        if self.history is None:
            return np.tile(states, (1, lag + 1))
        past = self.history[:lag].reshape(1, -1)
        return np.hstack([states, np.repeat(past, len(states), axis=0)])

    def check_domain(self, states: np.ndarray) -> None:
        if states.shape[-1] != self.n_states:
            raise DimensionError(f"state vector must have {self.n_states} entries")
        if np.any(states < self.lower) or np.any(states > self.upper) or not np.isfinite(states).all():
            raise DomainError("state outside decision bounds")


def build_problem(
    objective_model: ForestModel,
    constraint_models: dict[str, ForestModel],
    decision_bounds: Sequence[tuple[float, float]],
    bounds: dict[str, tuple[float, float]] | None = None,
    history=None,
) -> ConstrainedProblem:
    """Problem with CO2/O2 defaults; ``bounds`` overrides per target name."""
    bounds = {**DEFAULT_CONSTRAINT_BOUNDS, **(bounds or {})}
    cons = []
    for name, model in constraint_models.items():
        if name not in bounds:
            raise SchemaError(f"no bounds given for constraint target {name!r}")
        lo, hi = bounds[name]
        cons.append(Constraint(model, lo, hi))
    return ConstrainedProblem(objective_model, tuple(cons), tuple(decision_bounds), history=history)


def _predict(model: ForestModel, problem: ConstrainedProblem, states: np.ndarray) -> np.ndarray:
    raw = problem.expand(states, model.lag)
    if model.norm_stats is not None:
        raw = model.norm_stats.apply(raw)
    return model.predict_many(raw)


def evaluate_many(problem: ConstrainedProblem, states) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Objective, constraint predictions ``(n, n_constraints)`` and feasibility flags."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    problem.check_domain(states)
    obj = _predict(problem.objective_model, problem, states)
    cons = np.empty((len(states), len(problem.constraints)))
    feasible = np.ones(len(states), dtype=bool)
    for j, c in enumerate(problem.constraints):
        cons[:, j] = _predict(c.model, problem, states)
        feasible &= (cons[:, j] >= c.lower) & (cons[:, j] <= c.upper)
    return obj, cons, feasible


def evaluate(problem: ConstrainedProblem, state) -> tuple[float, np.ndarray, bool]:
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise DimensionError("evaluate takes one state vector")
    obj, cons, feas = evaluate_many(problem, state[None, :])
    return float(obj[0]), cons[0], bool(feas[0])


def violation(problem: ConstrainedProblem, cons: np.ndarray) -> np.ndarray:
    cons = np.atleast_2d(cons)
    lo = np.array([c.lower for c in problem.constraints])
    hi = np.array([c.upper for c in problem.constraints])
    return (np.maximum(0.0, lo - cons) + np.maximum(0.0, cons - hi)).sum(axis=1)


@dataclass(frozen=True)
class Iterate:
    state: np.ndarray
    objective: float
    constraints: np.ndarray
    feasible: bool
    phase: str  # "seed" or "pattern"
    penalty: float
    accepted: bool = False
    run: int = 0  # pattern-search start number, 0 for seeds


@dataclass
class OptimizationTrace:
    problem: ConstrainedProblem = field(repr=False)
    iterates: list[Iterate]
    best: Iterate | None
    least_violating: Iterate
    budget: int
    seed: int

    @property
    def feasible(self) -> bool:
        return self.best is not None

    @property
    def result(self) -> Iterate:
        return self.best if self.best is not None else self.least_violating

    def summary(self) -> dict:
        r = self.result
        return {
            "feasible": self.feasible,
            "state": dict(zip(self.problem.state_names, map(float, r.state))),
            "objective": {self.problem.objective_model.target_name: r.objective},
            "constraints": {
                c.name: {"value": float(v), "lower": c.lower, "upper": c.upper}
                for c, v in zip(self.problem.constraints, r.constraints)
            },
            "violation": float(violation(self.problem, r.constraints)[0]),
            "evaluations": len(self.iterates),
            "budget": self.budget,
            "seed": self.seed,
        }

    def write_csv(self, path) -> None:
        p = self.problem
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["phase", "run", "accepted", *p.state_names, p.objective_model.target_name,
                 *[c.name for c in p.constraints], "feasible", "penalty"]
            )
            for it in self.iterates:
                w.writerow(
                    [it.phase, it.run, int(it.accepted), *map(repr, it.state.tolist()), repr(it.objective),
                     *map(repr, it.constraints.tolist()), int(it.feasible), repr(it.penalty)]
                )

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def minimize(problem: ConstrainedProblem, budget: int, seed: int) -> OptimizationTrace:
    """Random seeding (``budget // 2`` points) then coordinate pattern search.

    Pattern search starts from the best seed by penalty score. When it
    converges (step below ``MIN_STEP``) with budget left, it restarts from the
    next-best seed. Every evaluation counts against ``budget`` and is recorded
    in the trace.
    If no feasible point is found the trace carries the least-violating one
    and ``trace.feasible`` is False.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lo, hi = problem.lower, problem.upper
    span = hi - lo
    n_seed = max(1, budget // 2)
    st = new_state(seed)
    u = uniform_units(st, n_seed * problem.n_states).reshape(n_seed, problem.n_states)
    seeds = lo + u * span

    iterates: list[Iterate] = []
    obj, cons, feas = evaluate_many(problem, seeds)
    pen = obj + PENALTY_RHO * violation(problem, cons)
    for i in range(n_seed):
        iterates.append(Iterate(seeds[i].copy(), float(obj[i]), cons[i].copy(), bool(feas[i]), "seed", float(pen[i])))

    # multi-start: seeds in penalty order, one pattern search each while budget remains
    starts = sorted(range(n_seed), key=lambda i: (float(pen[i]), i))
    evals = n_seed
    for run, k in enumerate(starts, start=1):
        if evals >= budget:
            break
        x, x_pen = seeds[k].copy(), float(pen[k])
        step = START_STEP
        while step >= MIN_STEP and evals < budget:
            improved = False
            for i in range(problem.n_states):
                for sign in (1.0, -1.0):
                    if evals >= budget:
                        break
                    cand = x.copy()
                    cand[i] = min(hi[i], max(lo[i], x[i] + sign * step * span[i]))
                    if cand[i] == x[i]:
                        continue
                    o, c, f = evaluate(problem, cand)
                    p = o + PENALTY_RHO * float(violation(problem, c)[0])
                    evals += 1
                    accept = p < x_pen
                    iterates.append(Iterate(cand, o, c, f, "pattern", p, accept, run))
                    if accept:
                        x, x_pen = cand, p
                        improved = True
                        break
            if not improved:
                step *= 0.5

    best = None
    for it in iterates:
        if it.feasible and (best is None or it.objective < best.objective):
            best = it
    viol = [float(violation(problem, it.constraints)[0]) for it in iterates]
    j = min(range(len(iterates)), key=lambda i: (viol[i], iterates[i].penalty, i))
    if best is not None:
        o, c, f = evaluate(problem, best.state)
        assert f and o == best.objective, "re-evaluation disagrees with the trace"
    return OptimizationTrace(problem, iterates, best, iterates[j], budget, seed)


def brute_force_reference(problem: ConstrainedProblem, resolution: int, *, chunk: int = 200_000):
    """Feasible minimum over a regular grid with ``resolution`` points per axis.

    Returns ``(state, objective)``; ``(None, inf)`` when no grid point is
    feasible. Ties go to the first point in lexicographic grid order.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    total = resolution**problem.n_states
    if total > MAX_GRID_POINTS:
        raise GridTooLargeError(f"{total} grid points exceed the cap of {MAX_GRID_POINTS}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in problem.decision_bounds]
    shape = (resolution,) * problem.n_states
    best_state, best_obj = None, math.inf
    for a in range(0, total, chunk):
        coords = np.unravel_index(np.arange(a, min(total, a + chunk)), shape)
        block = np.column_stack([axes[d][coords[d]] for d in range(problem.n_states)])
        obj, _, feas = evaluate_many(problem, block)
        if feas.any():
            cand = np.where(feas, obj, np.inf)
            k = int(np.argmin(cand))
            if cand[k] < best_obj:
                best_obj, best_state = float(cand[k]), block[k].copy()
    return best_state, best_obj
