"""Stationary solver for the DPS chain on the truncated simplex ``|n| <= N_max``.

States are kept in graded lexicographic order: by total ``|n|`` first, then
lexicographically ascending within a level, so for two classes and
``N_max = 1`` the order is ``(0,0), (0,1), (1,0)``.

Arrivals that would leave the truncation are dropped (a reflecting
boundary), so the truncated generator is a proper CTMC.  Every state with
``|n| < N_max`` keeps all of its transitions, hence the balance equations
at those interior states are the untruncated ones and their residuals
measure solver error only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular, splu

from .errors import (
    BoundaryState,
    CapacityExceeded,
    LengthMismatch,
    NoConvergence,
    OutOfTruncation,
    ValidationError,
    ZeroMass,
)
from .model import Direction, DpsModel, StateVector, lattice_point

DEFAULT_STATE_LIMIT = 5_000_000
DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 10**6
DIRECT_SOLVE_LIMIT = 250_000


def state_count(I: int, N_max: int) -> int:
    return math.comb(N_max + I, I)


@lru_cache(maxsize=None)
def _level_states(k: int, I: int) -> np.ndarray:
    # compositions of k into I parts, lexicographically ascending
    if I == 1:
        return np.array([[k]], dtype=np.int64)
    blocks = []
    for first in range(k + 1):
        rest = _level_states(k - first, I - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def state_array(I: int, N_max: int, limit: int = DEFAULT_STATE_LIMIT) -> np.ndarray:
    """All states with ``|n| <= N_max`` as an ``(M, I)`` integer array."""
    if I < 1:
        raise ValidationError(f"class count must be positive, got {I}")
    if N_max < 0:
        raise ValidationError(f"N_max must be nonnegative, got {N_max}")
    count = state_count(I, N_max)
    if count > limit:
        raise CapacityExceeded(
            f"{count} states for I={I}, N_max={N_max} exceed the limit of {limit}"
        )
    out = np.vstack([_level_states(k, I) for k in range(N_max + 1)])
    _level_states.cache_clear()
    out.setflags(write=False)
    return out


def enumerate_states(I: int, N_max: int, limit: int = DEFAULT_STATE_LIMIT) -> list[StateVector]:
    """Ordered list of every state with ``|n| <= N_max`` (graded lexicographic)."""
    return [StateVector(row) for row in state_array(I, N_max, limit).tolist()]


def _binomial_table(n_max: int, k_max: int) -> np.ndarray:
    table = np.zeros((n_max + 1, k_max + 1), dtype=np.int64)
    for a in range(n_max + 1):
        for b in range(min(a, k_max) + 1):
            table[a, b] = math.comb(a, b)
    return table


def state_rank(states: np.ndarray, N_max: int) -> np.ndarray:
    """Position of each row of ``states`` in the graded lexicographic order.

    Rows with ``|n| > N_max`` get rank ``-1``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    I = states.shape[1]
    level = states.sum(axis=1)
    binom = _binomial_table(N_max + I + 1, I)
    k = np.minimum(level, N_max)
    rank = np.where(k > 0, binom[np.maximum(k - 1 + I, 0), I], 0)
    remaining = k.copy()
    for j in range(I - 1):
        d = I - j - 2
        nj = np.minimum(states[:, j], remaining)
        rank += binom[remaining + d + 1, d + 1] - binom[remaining - nj + d + 1, d + 1]
        remaining = remaining - nj
    return np.where(level <= N_max, rank, -1)


def j_operator(i: int, n: Sequence[int], X: float, Y: float, model: DpsModel) -> float:
    """``mu_i g_i n_i / <n, g> * X - lambda_i * Y`` with the empty-state fraction set to 0."""
    model.check_index(i)
    if len(n) != model.class_count:
        raise LengthMismatch(f"state has {len(n)} classes, model has {model.class_count}")
    w = math.fsum(c * gw for c, gw in zip(n, model.weights))
    frac = 0.0 if w == 0.0 else model.service_rates[i] * model.weights[i] * n[i] / w
    return frac * X - model.arrival_rates[i] * Y


def generator(model: DpsModel, N_max: int, states: np.ndarray | None = None) -> sp.csr_matrix:
    """Sparse infinitesimal generator of the truncated chain."""
    if states is None:
        states = state_array(model.class_count, N_max)
    M, I = states.shape
    lam, mu, g = model.lam, model.mu, model.g
    level = states.sum(axis=1)
    w = states @ g
    rows, cols, vals = [], [], []
    src = np.arange(M)
    for i in range(I):
        up = level < N_max
        tgt = states[up].copy()
        tgt[:, i] += 1
        rows.append(src[up])
        cols.append(state_rank(tgt, N_max))
        vals.append(np.full(up.sum(), lam[i]))

        down = states[:, i] > 0
        tgt = states[down].copy()
        tgt[:, i] -= 1
        rows.append(src[down])
        cols.append(state_rank(tgt, N_max))
        vals.append(mu[i] * g[i] * states[down, i] / w[down])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    Q = sp.csr_matrix((v, (r, c)), shape=(M, M))
    out = np.asarray(Q.sum(axis=1)).ravel()
    return (Q - sp.diags(out)).tocsr()


@dataclass(frozen=True)
class TruncatedDistribution:
    """Probability mass over every state with ``|n| <= level``.

    ``states`` rows follow the graded lexicographic order and ``probs`` is
    aligned with them.  ``residual_norm`` is the largest absolute balance
    residual over interior states; ``truncation_mass_bound`` is the mass on
    the outermost shell ``|n| = level``.
    """

    level: int
    states: np.ndarray
    probs: np.ndarray
    residual_norm: float = float("nan")
    truncation_mass_bound: float = float("nan")
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for arr in (self.states, self.probs):
            arr.setflags(write=False)

    @property
    def class_count(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return len(self.probs)

    def index(self, n: Sequence[int]) -> int:
        if len(n) != self.class_count:
            raise LengthMismatch(f"state has {len(n)} classes, distribution {self.class_count}")
        if any(c < 0 for c in n):
            raise OutOfTruncation(f"state {tuple(n)} has a negative component")
        r = int(state_rank(np.array([n]), self.level)[0])
        if r < 0:
            raise OutOfTruncation(f"state {tuple(n)} lies outside |n| <= {self.level}")
        return r

    def mass(self, n: Sequence[int]) -> float:
        """``P_n``; states with a negative component have mass 0."""
        if any(c < 0 for c in n):
            return 0.0
        return float(self.probs[self.index(n)])

    __getitem__ = mass

    def __contains__(self, n: Sequence[int]) -> bool:
        return len(n) == self.class_count and min(n) >= 0 and sum(n) <= self.level

    @property
    def masses(self) -> dict[tuple[int, ...], float]:
        return {tuple(s): float(p) for s, p in zip(self.states.tolist(), self.probs)}

    def interior(self) -> np.ndarray:
        return self.states.sum(axis=1) < self.level

    def to_csv(self, path: str | Path) -> None:
        write_distribution_csv(path, self.states, self.probs)

    def to_json(self, path: str | Path, **extra) -> None:
        write_distribution_json(path, self.level, self.states, self.probs, **extra)


def write_distribution_csv(path: str | Path, states: np.ndarray, probs: np.ndarray) -> None:
    I = states.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"n{k + 1}" for k in range(I)] + ["probability"])
        for s, p in zip(states.tolist(), probs.tolist()):
            w.writerow(s + [repr(float(p))])


def write_distribution_json(
    path: str | Path, level: int, states: np.ndarray, probs: np.ndarray, **extra
) -> None:
    doc = {"level": int(level)}
    doc.update(extra)
    doc["masses"] = [{"n": s, "p": float(p)} for s, p in zip(states.tolist(), probs.tolist())]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_distribution_csv(path: str | Path) -> TruncatedDistribution:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "probability":
        raise ValidationError(f"{path}: last column must be 'probability'")
    states = np.array([[int(x) for x in r[:-1]] for r in body], dtype=np.int64)
    probs = np.array([float(r[-1]) for r in body])
    level = int(states.sum(axis=1).max()) if len(states) else 0
    return TruncatedDistribution(level, states, probs)


def interior_residuals(P: TruncatedDistribution, model: DpsModel, Q: sp.spmatrix | None = None) -> np.ndarray:
    """Balance-equation left-hand sides at all interior states (in state order)."""
    if Q is None:
        Q = generator(model, P.level, P.states)
    r = Q.T @ P.probs
    return r[P.interior()]


def balance_residual(P: TruncatedDistribution, n: Sequence[int], model: DpsModel) -> float:
    """Left-hand side of the stationary balance equation at the interior state ``n``."""
    if len(n) != model.class_count:
        raise LengthMismatch(f"state has {len(n)} classes, model has {model.class_count}")
    if sum(n) >= P.level:
        raise BoundaryState(
            f"state {tuple(n)} is on the truncation boundary |n| = {P.level}; residual undefined"
        )
    n = StateVector(n)
    terms = []
    for i in range(model.class_count):
        up = n.plus(i)
        terms.append(j_operator(i, up, P.mass(up), P.mass(n), model))
        down = n.minus(i)
        terms.append(-j_operator(i, n, P.mass(n), 0.0 if down is None else P.mass(down), model))
    return math.fsum(terms)


def _finish(
    model: DpsModel, N_max: int, states: np.ndarray, probs: np.ndarray, Q: sp.spmatrix, **meta
) -> TruncatedDistribution:
    probs = np.where(probs > 0.0, probs, 0.0)
    probs = probs / math.fsum(probs)
    P = TruncatedDistribution(N_max, states, probs)
    res = interior_residuals(P, model, Q)
    resid = float(np.max(np.abs(res))) if res.size else 0.0
    shell = float(probs[states.sum(axis=1) == N_max].sum())
    return TruncatedDistribution(N_max, states, probs, resid, shell, meta)


def _solve_direct(Q: sp.csr_matrix) -> np.ndarray:
    # Pin the empty state's mass to 1 and drop its equation.  The reduced
    # matrix is a nonsingular M-matrix, which keeps small masses accurate in
    # relative terms; an all-ones normalization row would not.
    if Q.shape[0] == 1:
        return np.ones(1)
    A = Q.T.tocsc()
    rhs = -A[1:, [0]].toarray().ravel()
    rest = splu(A[1:, 1:].tocsc()).solve(rhs)
    return np.concatenate([[1.0], rest])


def _solve_gauss_seidel(
    Q: sp.csr_matrix, interior: np.ndarray, tol: float, max_sweeps: int, check_every: int = 10
) -> tuple[np.ndarray, int]:
    A = Q.T.tocsr()
    lower = sp.tril(A, k=0, format="csr")
    upper = sp.triu(A, k=1, format="csr")
    x = np.full(A.shape[0], 1.0 / A.shape[0])
    for sweep in range(1, max_sweeps + 1):
        x = spsolve_triangular(lower, -(upper @ x), lower=True)
        x = np.abs(x)
        x /= x.sum()
        if sweep % check_every == 0 and np.max(np.abs((A @ x)[interior])) <= tol:
            return x, sweep
    raise NoConvergence(f"Gauss-Seidel did not reach residual {tol:g} in {max_sweeps} sweeps")


def solve_stationary(
    model: DpsModel,
    N_max: int,
    tol: float = DEFAULT_TOL,
    *,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    method: str = "auto",
    limit: int = DEFAULT_STATE_LIMIT,
) -> TruncatedDistribution:
    """Stationary distribution of the truncated chain.

    Parameters
    ----------
    model : DpsModel
    N_max : int
        Truncation level, ``|n| <= N_max``; at least 1.
    tol : float
        Bound on the absolute balance residual at every interior state.
    max_sweeps : int
        Iteration cap for the Gauss-Seidel method.
    method : {"auto", "direct", "gauss-seidel"}
        ``auto`` uses a sparse LU factorization up to 250 000 states and
        Gauss-Seidel sweeps beyond.
    limit : int
        Largest admissible state count.

    Raises
    ------
    NoConvergence
        If the residual bound is not met.
    CapacityExceeded
        If the state space is larger than ``limit``.
    """
    if N_max < 1:
        raise ValidationError(f"N_max must be at least 1, got {N_max}")
    states = state_array(model.class_count, N_max, limit)
    Q = generator(model, N_max, states)
    if method == "auto":
        method = "direct" if len(states) <= DIRECT_SOLVE_LIMIT else "gauss-seidel"
    if method == "direct":
        x = _solve_direct(Q)
        sweeps = 0
    elif method == "gauss-seidel":
        x, sweeps = _solve_gauss_seidel(Q, states.sum(axis=1) < N_max, tol, max_sweeps)
    else:
        raise ValidationError(f"unknown solver method {method!r}")
    P = _finish(model, N_max, states, x, Q, method=method, sweeps=sweeps, tol=tol)
    if not P.residual_norm <= tol:
        raise NoConvergence(
            f"interior balance residual {P.residual_norm:.3g} exceeds tol {tol:g} ({method})"
        )
    return P


def ratio_along_direction(P: TruncatedDistribution, gamma: Direction, N: int, i: int) -> float:
    """``P_{floor(N gamma) + 1_i} / P_{floor(N gamma)}`` read from a solved distribution."""
    n = lattice_point(gamma, N)
    up = n.plus(i)
    if up not in P:
        raise OutOfTruncation(f"{tuple(up)} is outside the truncation |n| <= {P.level}")
    num, den = P.mass(up), P.mass(n)
    if num <= 0.0 or den <= 0.0:
        raise ZeroMass(f"zero mass at {tuple(n)} or {tuple(up)}")
    return num / den
