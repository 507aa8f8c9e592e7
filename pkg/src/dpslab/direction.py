"""Most likely direction: maximize the decay rate over the open simplex.

The problem is

    minimize  -sum gamma_i log delta_i(gamma)
    subject to  gamma_i > 0,  sum gamma_i = 1,  delta2_i(gamma) < 1,

solved with a logarithmic barrier in reduced coordinates
``x = (gamma_1, ..., gamma_{I-1})``.  Each centering step is a damped Newton
iteration on ``t f(x) - sum log s_k(x)``, where derivatives of the objective
and of the constraint slacks ``s_k`` come from central differences and the
barrier terms are chained analytically.  The objective is not convex for
unequal weights, so the scheme is started from several feasible points and
the best end point is kept.

The ``paper-literal`` mode adds the slacks ``gamma_i g_i delta2_i - sum
gamma_l g_l > 0``.  These reduce to ``theta2_i rho_i > 1`` and hence to
``delta2_i > 1``, so that mode never has an interior point.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .asymptotics import DEGENERATE_TOL, _c_sum, _theta_exponents
from .errors import InfeasibleRegion, NoConvergence, NonpositiveDelta, Infeasible, ValidationError
from .model import Direction, DpsModel

REL_OBJECTIVE_TOL = 1e-10
ACTIVE_TOL = 1e-6


class Mode(str, enum.Enum):
    STANDARD = "standard"
    PAPER_LITERAL = "paper-literal"


def _mode(mode) -> Mode:
    try:
        return mode if isinstance(mode, Mode) else Mode(str(mode).lower().replace("_", "-"))
    except ValueError:
        raise ValidationError(f"unknown constraint mode {mode!r}") from None


def _deltas(model: DpsModel, gam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = model.g
    scale = math.fsum(gam * g) / (gam * g) * model.rho
    return scale * np.exp(_theta_exponents(gam, g, 1)), scale * np.exp(_theta_exponents(gam, g, 2))


def _raw_objective(model: DpsModel, gam: np.ndarray) -> float:
    """Objective without the feasibility gate; ``inf`` where undefined."""
    d1, d2 = _deltas(model, gam)
    if np.max(np.abs(d1 - d2)) < DEGENERATE_TOL:
        delta = d1
    else:
        den = _c_sum(model, gam, d2)
        if den == 0.0:
            return math.inf
        c = _c_sum(model, gam, d1) / den
        if abs(1.0 - c) < 1e-12:
            return math.inf
        delta = (d1 - c * d2) / (1.0 - c)
    if np.any(delta <= 0.0):
        return math.inf
    return -math.fsum(gam * np.log(delta))


def _slacks(model: DpsModel, gam: np.ndarray, mode: Mode) -> np.ndarray:
    _, d2 = _deltas(model, gam)
    parts = [gam, 1.0 - d2]
    if mode is Mode.PAPER_LITERAL:
        wg = gam * model.g
        parts.append(wg * d2 - math.fsum(wg))
    return np.concatenate(parts)


def _slack_names(I: int, mode: Mode) -> list[str]:
    names = [f"gamma[{i + 1}] > 0" for i in range(I)] + [f"delta2[{i + 1}] < 1" for i in range(I)]
    if mode is Mode.PAPER_LITERAL:
        names += [f"gamma[{i + 1}] g[{i + 1}] delta2[{i + 1}] > sum gamma g" for i in range(I)]
    return names


def objective(model: DpsModel, gamma: Direction) -> float:
    """``-sum gamma_i log delta_i`` at a feasible direction.

    Raises
    ------
    Infeasible
        If some backward limit ratio is not below one.
    NonpositiveDelta
        If a mixed limit ratio is not positive.
    """
    from .asymptotics import mixed_ratio

    mixed = mixed_ratio(model, gamma, warn=False)
    if np.any(mixed.delta <= 0.0):
        raise NonpositiveDelta(f"mixed limit ratio not positive: {mixed.delta.tolist()}")
    return -math.fsum(gamma.array * np.log(mixed.delta))


@dataclass(frozen=True)
class DirectionSolution:
    gamma_opt: Direction
    objective: float
    active_constraints: tuple[str, ...]
    solver_iterations: int
    constraint_mode: Mode
    starts: int = 1
    margins: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "gamma_opt": list(self.gamma_opt.gammas),
            "objective": self.objective,
            "active_constraints": list(self.active_constraints),
            "solver_iterations": self.solver_iterations,
            "constraint_mode": self.constraint_mode.value,
            "starts": self.starts,
            "margins": list(self.margins),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _full(x: np.ndarray) -> np.ndarray:
    return np.append(x, 1.0 - x.sum())


class _Problem:
    def __init__(self, model: DpsModel, mode: Mode):
        self.model = model
        self.mode = mode
        self.dim = model.class_count - 1

    def f(self, x: np.ndarray) -> float:
        gam = _full(x)
        if np.any(gam <= 0.0):
            return math.inf
        return _raw_objective(self.model, gam)

    def s(self, x: np.ndarray) -> np.ndarray:
        gam = _full(x)
        if np.any(gam <= 0.0):
            return np.full(len(_slack_names(len(gam), self.mode)), -1.0)
        return _slacks(self.model, gam, self.mode)

    def feasible(self, x: np.ndarray) -> bool:
        return bool(np.all(self.s(x) > 0.0)) and math.isfinite(self.f(x))

    def _step(self, x: np.ndarray) -> float:
        return min(1e-5, 1e-3 * float(_full(x).min()))

    def derivatives(self, x: np.ndarray, fn):
        """Central-difference value, gradient and Hessian of a (vector) function."""
        d = self.dim
        h = self._step(x)
        f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
        grad = np.zeros((d,) + f0.shape)
        hess = np.zeros((d, d) + f0.shape)
        e = np.eye(d) * h
        plus = [np.atleast_1d(fn(x + e[a])) for a in range(d)]
        minus = [np.atleast_1d(fn(x - e[a])) for a in range(d)]
        for a in range(d):
            grad[a] = (plus[a] - minus[a]) / (2 * h)
            hess[a, a] = (plus[a] - 2 * f0 + minus[a]) / (h * h)
            for b in range(a + 1, d):
                pp = np.atleast_1d(fn(x + e[a] + e[b]))
                pm = np.atleast_1d(fn(x + e[a] - e[b]))
                mp = np.atleast_1d(fn(x - e[a] + e[b]))
                mm = np.atleast_1d(fn(x - e[a] - e[b]))
                hess[a, b] = hess[b, a] = (pp - pm - mp + mm) / (4 * h * h)
        return f0, grad, hess

    def barrier(self, x: np.ndarray, t: float) -> float:
        s = self.s(x)
        if np.any(s <= 0.0):
            return math.inf
        fx = self.f(x)
        if not math.isfinite(fx):
            return math.inf
        return t * fx - math.fsum(np.log(s))


def _center(problem: _Problem, x: np.ndarray, t: float, max_newton: int = 100) -> tuple[np.ndarray, int]:
    phi = problem.barrier(x, t)
    for it in range(1, max_newton + 1):
        f0, fg, fh = problem.derivatives(x, problem.f)
        s, sg, sh = problem.derivatives(x, problem.s)
        fg, fh = fg[:, 0], fh[:, :, 0]
        grad = t * fg - (sg / s).sum(axis=1)
        hess = t * fh - (sh / s).sum(axis=2) + np.einsum("ak,bk->ab", sg / s, sg / s)
        w, V = np.linalg.eigh(hess)
        floor = 1e-10 * max(1.0, float(np.abs(w).max()))
        w = np.where(w > floor, w, np.abs(w) + floor)
        step = -(V @ ((V.T @ grad) / w))
        decrement = float(-grad @ step)
        # barrier values carry rounding of order eps * |phi| at large t
        noise = 1e-12 * max(1.0, abs(phi))
        if decrement / 2.0 <= 1e-14 + noise:
            cand = x + step
            val = problem.barrier(cand, t)
            return (cand, it) if val <= phi + noise else (x, it)
        a = 1.0
        while a > 1e-16:
            cand = x + a * step
            val = problem.barrier(cand, t)
            if val <= phi - 0.25 * a * decrement + noise:
                break
            a *= 0.5
        else:
            return x, it
        x, phi = cand, val
    return x, max_newton


def _barrier_solve(problem: _Problem, x0: np.ndarray, tol: float) -> tuple[np.ndarray, float, int]:
    m = len(problem.s(x0))
    t = 1.0 / max(1.0, abs(problem.f(x0)))
    x = x0
    prev = problem.f(x)
    iters = 0
    for _ in range(40):
        x, k = _center(problem, x, t)
        iters += k
        cur = problem.f(x)
        gap = m / t
        if abs(cur - prev) <= tol * max(1.0, abs(cur)) and gap <= tol * max(1.0, abs(cur)):
            return x, cur, iters
        prev = cur
        t *= 10.0
    raise NoConvergence("barrier iterations did not reach the requested objective tolerance")


def _repair(problem: _Problem, x: np.ndarray, anchor: np.ndarray) -> np.ndarray | None:
    """Move ``x`` toward ``anchor`` until it is strictly feasible."""
    if problem.feasible(x):
        return x
    if not problem.feasible(anchor):
        return None
    for k in range(1, 61):
        cand = anchor + (x - anchor) * 0.5**k
        if problem.feasible(cand):
            return cand
    return None


def _lattice_starts(problem: _Problem, resolution: int, keep: int) -> list[np.ndarray]:
    I = problem.dim + 1
    pts = []
    for c in itertools.product(range(1, resolution), repeat=I - 1):
        if sum(c) < resolution:
            x = np.array(c, dtype=float) / resolution
            if problem.feasible(x):
                pts.append((problem.f(x), x))
    pts.sort(key=lambda p: p[0])
    return [x for _, x in pts[:keep]]


def most_likely_direction(
    model: DpsModel,
    mode="standard",
    *,
    tol: float = REL_OBJECTIVE_TOL,
    initial: Direction | None = None,
    lattice_resolution: int | None = None,
    max_starts: int = 6,
) -> DirectionSolution:
    """Minimize the negative decay rate over feasible directions.

    Parameters
    ----------
    model : DpsModel
        Weights should be in ascending order.
    mode : {"standard", "paper-literal"}
    tol : float
        Relative objective change (and barrier gap) at termination.
    initial : Direction, optional
        Extra starting point; repaired toward ``rho / sum(rho)`` if infeasible.
    lattice_resolution : int, optional
        Simplex lattice spacing ``1/resolution`` used to seed additional
        starts; defaults to 40 for two classes and fewer for more.
    max_starts : int
        Number of lattice starts kept (best objective first).

    Raises
    ------
    InfeasibleRegion
        If no strictly feasible point is found.
    """
    mode = _mode(mode)
    I = model.class_count
    if I == 1:
        gam = np.array([1.0])
        s = _slacks(model, gam, mode)
        if not np.all(s > 0.0):
            raise InfeasibleRegion(f"the only direction violates the {mode.value} constraints")
        return DirectionSolution(Direction((1.0,)), _raw_objective(model, gam), (), 0, mode, 1,
                                 tuple(float(v) for v in s))
    problem = _Problem(model, mode)
    anchor = (model.rho / model.total_load)[:-1]
    starts = []
    if initial is not None:
        if len(initial) != I:
            raise ValidationError(f"initial direction has {len(initial)} components, model {I}")
        x = _repair(problem, initial.array[:-1], anchor)
        if x is not None:
            starts.append(x)
    if problem.feasible(anchor):
        starts.append(anchor)
    if lattice_resolution is None:
        lattice_resolution = {2: 40, 3: 24, 4: 12}.get(I, 6)
    starts += _lattice_starts(problem, lattice_resolution, max_starts)
    if not starts:
        reason = ""
        if mode is Mode.PAPER_LITERAL:
            reason = "; the extra family is equivalent to delta2_i > 1 and contradicts delta2_i < 1"
        raise InfeasibleRegion(f"no direction satisfies the {mode.value} constraints{reason}")

    best = None
    total_iters = 0
    for x0 in starts:
        x, fx, k = _barrier_solve(problem, x0, tol)
        total_iters += k
        if best is None or fx < best[1]:
            best = (x, fx)
    x, fx = best
    gam = _full(x)
    slack = problem.s(x)
    names = _slack_names(I, mode)
    active = tuple(n for n, v in zip(names, slack) if v < ACTIVE_TOL)
    return DirectionSolution(
        Direction(tuple(gam)), float(fx), active, total_iters, mode, len(starts),
        tuple(float(v) for v in slack),
    )


@dataclass(frozen=True)
class GridResult:
    gamma1: float
    objective: float
    feasible_range: tuple[float, float] | None


def grid_search_two_class(model: DpsModel, resolution: float = 1e-4, mode="standard") -> GridResult:
    """Exhaustive search over ``gamma_1 = k * resolution`` for two classes."""
    if model.class_count != 2:
        raise ValidationError("grid search is defined for two classes")
    mode = _mode(mode)
    steps = int(round(1.0 / resolution))
    best = (math.inf, None)
    lo = hi = None
    for k in range(1, steps):
        g1 = k / steps
        gam = np.array([g1, 1.0 - g1])
        if not np.all(_slacks(model, gam, mode) > 0.0):
            continue
        val = _raw_objective(model, gam)
        if not math.isfinite(val):
            continue
        lo = g1 if lo is None else lo
        hi = g1
        if val < best[0]:
            best = (val, g1)
    if best[1] is None:
        raise InfeasibleRegion("no grid point is feasible")
    return GridResult(best[1], best[0], (lo, hi))


TABLE1_RATES = {"lambda": (0.2, 0.3), "mu": (1.0, 1.0), "g1": 2.0}
TABLE1_PUBLISHED = (
    (2.0, 0.401, 0.599),
    (2.5, 0.435, 0.565),
    (3.0, 0.474, 0.526),
    (3.5, 0.633, 0.367),
    (4.0, 0.622, 0.378),
)
TABLE1_TOL = 0.01


def table1_model(g2: float) -> DpsModel:
    return DpsModel(TABLE1_RATES["lambda"], TABLE1_RATES["mu"], (TABLE1_RATES["g1"], g2))


@dataclass(frozen=True)
class Table1Row:
    g2: float
    gamma1: float
    gamma2: float
    objective: float
    mode: Mode
    published: tuple[float, float]
    deviation: float
    grid_gamma1: float | None
    active_constraints: tuple[str, ...]

    @property
    def flagged(self) -> bool:
        return self.deviation > TABLE1_TOL


def reproduce_table1(mode="standard", *, grid: bool = True, grid_resolution: float = 1e-4) -> list[Table1Row]:
    """Optimize every published weight setting and compare with the printed digits."""
    mode = _mode(mode)
    rows = []
    for g2, p1, p2 in TABLE1_PUBLISHED:
        model = table1_model(g2)
        sol = most_likely_direction(model, mode)
        gam = sol.gamma_opt.gammas
        dev = max(abs(gam[0] - p1), abs(gam[1] - p2))
        grid_g1 = grid_search_two_class(model, grid_resolution, mode).gamma1 if grid else None
        rows.append(Table1Row(g2, gam[0], gam[1], sol.objective, mode, (p1, p2), dev, grid_g1,
                              sol.active_constraints))
    return rows
