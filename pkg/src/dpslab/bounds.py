"""Bound measures built from forward and backward partial sums of the weights.

For a state ``n`` the weight multiset ``{g_1 x n_1, ..., g_I x n_I}`` is laid
out either class 1 first (forward) or class I first (backward) and its
running sums ``S_1 < ... < S_|n|`` are formed.  The two auxiliary laws are

    P^(k)_n  proportional to  prod_l S_l / prod_i n_i! * prod_i (rho_i / g_i)^{n_i}

with forward sums for ``k = 1`` and backward sums for ``k = 2``.  Products are
evaluated in the log domain since they grow like ``|n|!``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .ctmc import TruncatedDistribution, state_array, write_distribution_csv, write_distribution_json
from .errors import (
    LengthMismatch,
    NotSeparatedFromZero,
    ValidationError,
    WeightsNotStrictlyIncreasing,
)
from .model import Direction, DpsModel, StateVector

ZERO_SIGN_TOL = 1e-12


class Order(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class Kind(str, enum.Enum):
    P1 = "P1"
    P2 = "P2"

    @property
    def order(self) -> Order:
        return Order.FORWARD if self is Kind.P1 else Order.BACKWARD


def _kind(kind) -> Kind:
    if isinstance(kind, Kind):
        return kind
    if kind in (1, "1", "P1", "p1"):
        return Kind.P1
    if kind in (2, "2", "P2", "p2"):
        return Kind.P2
    raise ValidationError(f"unknown bound measure kind {kind!r}")


def _order(order) -> Order:
    try:
        return Order(order) if not isinstance(order, Order) else order
    except ValueError:
        raise ValidationError(f"unknown order {order!r}") from None


@dataclass(frozen=True)
class PartialSums:
    order: Order
    sums: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.sums)

    def log_product(self) -> float:
        return math.fsum(math.log(s) for s in self.sums)


def _layout(n: Sequence[int], model: DpsModel, order: Order) -> list[float]:
    if len(n) != model.class_count:
        raise LengthMismatch(f"state has {len(n)} classes, model has {model.class_count}")
    classes = range(model.class_count)
    if order is Order.BACKWARD:
        classes = reversed(classes)
    return [model.weights[i] for i in classes for _ in range(n[i])]


def partial_sums(n: Sequence[int], model: DpsModel, order="forward") -> PartialSums:
    """Running sums of the weight multiset in forward or backward layout."""
    order = _order(order)
    n = StateVector(n)
    return PartialSums(order, tuple(accumulate(_layout(n, model, order))))


def log_partial_product(states: np.ndarray, model: DpsModel, order="forward") -> np.ndarray:
    """``log prod_l S_l`` for every row of ``states`` at once.

    Within class ``i``'s block the running sums are ``A_i + m g_i`` for
    ``m = 1..n_i``, where ``A_i`` is the weighted count of the classes laid
    out before it, so the block contributes a ratio of gamma functions.
    """
    order = _order(order)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    g = model.g
    weighted = states * g
    if order is Order.FORWARD:
        before = np.cumsum(weighted, axis=1) - weighted
    else:
        before = np.cumsum(weighted[:, ::-1], axis=1)[:, ::-1] - weighted
    offset = before / g
    return (states * np.log(g) + gammaln(offset + states + 1.0) - gammaln(offset + 1.0)).sum(axis=1)


def log_unnormalized_masses(states: np.ndarray, model: DpsModel, kind) -> np.ndarray:
    kind = _kind(kind)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return (
        log_partial_product(states, model, kind.order)
        - gammaln(states + 1.0).sum(axis=1)
        + states @ np.log(model.rho / model.g)
    )


def log_unnormalized_mass(n: Sequence[int], model: DpsModel, kind) -> float:
    """Scalar log-domain evaluation, summing logs of the explicit partial sums."""
    kind = _kind(kind)
    n = StateVector(n)
    terms = [partial_sums(n, model, kind.order).log_product()]
    for c, r, g in zip(n, model.loads, model.weights):
        terms.append(c * math.log(r / g) - math.lgamma(c + 1))
    return math.fsum(terms)


def unnormalized_mass(n: Sequence[int], model: DpsModel, kind) -> float:
    """``prod S / prod n_i! * prod (rho_i / g_i)^{n_i}`` without the normalizer."""
    return math.exp(log_unnormalized_mass(n, model, kind))


@dataclass(frozen=True)
class BoundMeasure(TruncatedDistribution):
    """A bound measure normalized on ``|n| <= level``.

    ``normalizer`` is the constant multiplying the unnormalized masses, the
    reciprocal of their truncated total.  ``converged`` is always true for
    ``P1``; for ``P2`` it records whether every requested direction has all
    backward limit ratios below one.
    """

    kind: Kind = Kind.P1
    normalizer: float = float("nan")
    log_normalizer: float = float("nan")
    converged: bool = True
    directions: tuple = field(default=(), compare=False)

    def to_csv(self, path) -> None:
        write_distribution_csv(path, self.states, self.probs)

    def to_json(self, path, **extra) -> None:
        write_distribution_json(
            path, self.level, self.states, self.probs,
            kind=self.kind.value, converged=bool(self.converged), **extra,
        )


def normalize_on_truncation(
    model: DpsModel, N_max: int, kind, directions: Iterable[Direction] | None = None
) -> BoundMeasure:
    """Normalize ``P1`` or ``P2`` over every state with ``|n| <= N_max``.

    For ``P2`` the ``converged`` flag checks the backward limit ratios along
    ``directions``; the load direction ``rho / sum(rho)`` is used when none is
    given.
    """
    from .asymptotics import delta_bounds

    kind = _kind(kind)
    states = state_array(model.class_count, N_max)
    logm = log_unnormalized_masses(states, model, kind)
    top = logm.max()
    w = np.exp(logm - top)
    total = math.fsum(w)
    log_norm = -(top + math.log(total))
    probs = w / total
    if directions is None:
        directions = (Direction(tuple(r / model.total_load for r in model.loads)),)
    directions = tuple(directions)
    converged = True
    if kind is Kind.P2:
        converged = all(bool(np.all(delta_bounds(model, d, warn=False)[1] < 1.0)) for d in directions)
    shell = float(probs[states.sum(axis=1) == N_max].sum())
    return BoundMeasure(
        N_max, states, probs, float("nan"), shell, {"method": "bound-measure"},
        kind=kind, normalizer=math.exp(log_norm), log_normalizer=log_norm,
        converged=converged, directions=directions,
    )


@dataclass(frozen=True)
class SignEntry:
    kind: Kind
    class_index: int
    value: float
    relative: float
    sign: int


@dataclass(frozen=True)
class SignReport:
    """Signs of ``J_{i,n}(P_n, P_{n - 1_i})`` for both bound measures.

    ``relative`` is the value divided by ``lambda_i P_{n - 1_i}``; a sign of 0
    means its magnitude is within the zero threshold.
    """

    state: StateVector
    entries: tuple[SignEntry, ...]

    def sign(self, kind, i: int) -> int:
        kind = _kind(kind)
        for e in self.entries:
            if e.kind is kind and e.class_index == i:
                return e.sign
        raise KeyError((kind, i))

    def expected(self, kind, i: int, class_count: int) -> int:
        kind = _kind(kind)
        if kind is Kind.P1:
            return 0 if i == class_count - 1 else -1
        return 0 if i == 0 else 1

    def matches_pattern(self) -> bool:
        I = len(self.state)
        return all(e.sign == self.expected(e.kind, e.class_index, I) for e in self.entries)


def _log_step_ratio(n: StateVector, i: int, model: DpsModel, kind: Kind) -> float:
    """``log(prod S_{n + 1_i} / prod S_n)`` from the sums that actually differ."""
    a = partial_sums(n.plus(i), model, kind.order).sums
    b = partial_sums(n, model, kind.order).sums
    k = 0
    while k < len(b) and a[k] == b[k]:
        k += 1
    return math.fsum([math.log(x) for x in a[k:]] + [-math.log(x) for x in b[k:]])


def lemma1_signs(n: Sequence[int], model: DpsModel, zero_tol: float = ZERO_SIGN_TOL) -> SignReport:
    """Evaluate the J-operator relations of both bound measures at ``n``.

    Expected pattern for strictly increasing weights: ``P1`` vanishes for the
    last class and is negative for the others; ``P2`` vanishes for the first
    class and is positive for the others.
    """
    n = StateVector(n)
    if len(n) != model.class_count:
        raise LengthMismatch(f"state has {len(n)} classes, model has {model.class_count}")
    if not n.separated_from_zero():
        raise NotSeparatedFromZero(f"state {tuple(n)} has a zero component")
    if not model.strictly_increasing_weights():
        raise WeightsNotStrictlyIncreasing(f"weights {model.weights} are not strictly increasing")
    w = n.weighted_total(model.weights)
    entries = []
    for kind in (Kind.P1, Kind.P2):
        for i in range(model.class_count):
            down = n.minus(i)
            log_down = log_unnormalized_mass(down, model, kind)
            lam, mu, g = model.arrival_rates[i], model.service_rates[i], model.weights[i]
            ratio = mu * g * n[i] / (w * lam)
            step = _log_step_ratio(down, i, model, kind) + math.log(lam / mu / g) - math.log(n[i])
            rel = ratio * math.exp(step) - 1.0
            value = lam * math.exp(log_down) * rel
            sign = 0 if abs(rel) <= zero_tol else (1 if rel > 0 else -1)
            entries.append(SignEntry(kind, i, value, rel, sign))
    return SignReport(n, tuple(entries))
