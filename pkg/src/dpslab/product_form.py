"""Closed product geometric form: the factor recurrence, the Egalitarian law and
the constructive test of when a rate-independent product form exists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .ctmc import DEFAULT_TOL, TruncatedDistribution, solve_stationary, state_array
from .errors import ModelMismatch, UnequalWeights, ValidationError
from .model import DpsModel, StateVector

WEIGHT_RTOL = 1e-12


@dataclass(frozen=True)
class FactorValue:
    """``F(n, g)`` at one state; ``F(0, g)`` is the free initial constant."""

    state: StateVector
    value: float

    def __post_init__(self) -> None:
        if not self.value > 0.0:
            raise ValidationError(f"factor value must be positive, got {self.value!r}")
        object.__setattr__(self, "state", StateVector(self.state))


def _require_equal_weights(model: DpsModel, rtol: float) -> None:
    if not model.equal_weights(rtol):
        raise UnequalWeights(
            f"weights {model.weights} are not all equal; no closed multinomial law"
        )


def egalitarian_log_pmf(states: np.ndarray, model: DpsModel, rtol: float = WEIGHT_RTOL) -> np.ndarray:
    """Vectorized log of the multinomial stationary law for equal weights."""
    _require_equal_weights(model, rtol)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    log_rho = np.log(model.rho)
    return (
        math.log1p(-model.total_load)
        + gammaln(states.sum(axis=1) + 1.0)
        - gammaln(states + 1.0).sum(axis=1)
        + states @ log_rho
    )


def egalitarian_pmf(n: Sequence[int], model: DpsModel, rtol: float = WEIGHT_RTOL) -> float:
    """``(1 - rho) |n|! / (n_1! ... n_I!) prod rho_i^{n_i}`` for equal weights."""
    n = StateVector(n)
    if len(n) != model.class_count:
        raise ValidationError(f"state has {len(n)} classes, model has {model.class_count}")
    _require_equal_weights(model, rtol)
    logp = math.log1p(-model.total_load) + math.lgamma(n.total + 1)
    for c, r in zip(n, model.loads):
        logp += c * math.log(r) - math.lgamma(c + 1)
    return math.exp(logp)


def egalitarian_distribution(model: DpsModel, N_max: int) -> TruncatedDistribution:
    """Closed-form Egalitarian masses on ``|n| <= N_max``, renormalized to sum 1.

    The multinomial law is reversible, so its restriction to the simplex is
    exactly the stationary law of the reflected truncated chain.
    """
    states = state_array(model.class_count, N_max)
    logp = egalitarian_log_pmf(states, model)
    probs = np.exp(logp - logp.max())
    probs /= math.fsum(probs)
    shell = float(probs[states.sum(axis=1) == N_max].sum())
    return TruncatedDistribution(N_max, states, probs, 0.0, shell, {"method": "closed-form"})


def f_recurrence_step(F_n: FactorValue, i: int, model: DpsModel) -> FactorValue:
    """``F(n + 1_i) = <n + 1_i, g> / ((n_i + 1) g_i) * F(n)``."""
    model.check_index(i)
    up = F_n.state.plus(i)
    w = up.weighted_total(model.weights)
    return FactorValue(up, w / (up[i] * model.weights[i]) * F_n.value)


def f_along_path(path: Sequence[int], model: DpsModel, initial: float = 1.0) -> FactorValue:
    """Apply the recurrence from the empty state along a sequence of class indices."""
    F = FactorValue(StateVector.zero(model.class_count), initial)
    for i in path:
        F = f_recurrence_step(F, i, model)
    return F


@dataclass(frozen=True)
class Witness:
    """Two unit-step orders reaching ``1_i + 1_l`` with different factor values."""

    i: int
    l: int
    path_values: tuple[float, float]

    def to_dict(self, one_based: bool = True) -> dict:
        shift = 1 if one_based else 0
        return {"i": self.i + shift, "l": self.l + shift, "path_values": list(self.path_values)}


@dataclass(frozen=True)
class Verdict:
    product_form: bool
    witness: Witness | None = None

    def to_dict(self) -> dict:
        return {
            "product_form": self.product_form,
            "witness": None if self.witness is None else self.witness.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def characterization_check(
    model: DpsModel, rtol: float = WEIGHT_RTOL, initial: float = 1.0
) -> Verdict:
    """Decide whether a rate-independent product form exists.

    It does exactly when all weights coincide.  Otherwise the first pair of
    classes ``i < l`` with different weights is returned together with the
    factor values at ``1_i + 1_l`` reached by stepping ``i`` then ``l`` and
    ``l`` then ``i``, which disagree.
    """
    if model.equal_weights(rtol):
        return Verdict(True)
    g = model.weights
    for i in range(model.class_count):
        for l in range(i + 1, model.class_count):
            if abs(g[i] - g[l]) > rtol * max(g[i], g[l]):
                first = f_along_path([i, l], model, initial).value
                second = f_along_path([l, i], model, initial).value
                return Verdict(False, Witness(i, l, (first, second)))
    raise AssertionError("unequal weights without an unequal pair")  # pragma: no cover


def _normalized_ratio(P: TruncatedDistribution, model: DpsModel) -> np.ndarray:
    log_geo = math.log1p(-model.total_load) + P.states @ np.log(model.rho)
    with np.errstate(divide="ignore"):
        return np.log(P.probs) - log_geo


def product_form_deviation(
    P: TruncatedDistribution,
    model: DpsModel,
    probe: DpsModel,
    *,
    tol: float = DEFAULT_TOL,
    rtol: float = 1e-12,
    probe_solution: TruncatedDistribution | None = None,
) -> float:
    """Largest relative gap in ``P_n / ((1 - rho) prod rho_i^{n_i})`` between two models.

    ``probe`` must share the weights and every load of ``model``; it is solved
    on the same truncation unless ``probe_solution`` is supplied.  The
    comparison runs over interior states with positive mass in both
    solutions.  Zero means the normalized masses depend on the loads only.
    """
    if probe.class_count != model.class_count:
        raise ModelMismatch("models have different class counts")
    for name, a, b in (("weights", model.weights, probe.weights), ("loads", model.loads, probe.loads)):
        if any(abs(x - y) > rtol * max(abs(x), abs(y)) for x, y in zip(a, b)):
            raise ModelMismatch(f"{name} differ: {a} vs {b}")
    if probe == model and probe_solution is None:
        return 0.0
    Q = probe_solution if probe_solution is not None else solve_stationary(probe, P.level, tol)
    if Q.level != P.level or Q.class_count != P.class_count:
        raise ModelMismatch("distributions live on different truncations")
    a = _normalized_ratio(P, model)
    b = _normalized_ratio(Q, probe)
    mask = P.interior() & (P.probs > 0.0) & (Q.probs > 0.0)
    if not mask.any():
        return 0.0
    diff = np.abs(np.expm1(a[mask] - b[mask]))
    return float(diff.max())
