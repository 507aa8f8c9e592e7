"""Asymptotic constants of the stationary law along a direction.

Everything here is a closed-form evaluation: the ``theta`` exponents, the
limit ratios ``delta1`` / ``delta2`` of the two bound measures, their
first-order corrections ``alpha1`` / ``alpha2``, the mixing constant ``c``,
the mixed limit ratio of the true stationary law and its decay rate.
The expressions are evaluated literally as written out below,
including the index pattern inside the ``alpha1`` correction terms.

The theory assumes strictly increasing weights; with other orderings the
formulas are still evaluated but a warning is issued.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateDenominator, Infeasible, NonpositiveDelta, ValidationError
from .model import Direction, DpsModel, lattice_point

DEGENERATE_TOL = 1e-10
DENOMINATOR_TOL = 1e-12


class WeightOrderWarning(UserWarning):
    pass


def _check(model: DpsModel, gamma: Direction, warn: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if len(gamma) != model.class_count:
        raise ValidationError(
            f"direction has {len(gamma)} components, model has {model.class_count} classes"
        )
    if warn and model.class_count > 1 and not model.strictly_increasing_weights():
        warnings.warn(
            f"weights {model.weights} are not strictly increasing; asymptotic constants "
            "are evaluated but their limit interpretation does not apply",
            WeightOrderWarning,
            stacklevel=3,
        )
    return gamma.array, model.g


def _kind(kind) -> int:
    if kind in (1, "1", "P1"):
        return 1
    if kind in (2, "2", "P2"):
        return 2
    raise ValidationError(f"kind must be 1 or 2, got {kind!r}")


def _theta_exponents(gam: np.ndarray, g: np.ndarray, kind: int) -> np.ndarray:
    I = len(g)
    wg = gam * g
    out = np.zeros(I)
    for i in range(I):
        terms = []
        if kind == 1:
            for m in range(i + 1, I):
                terms.append((g[i] / g[m] - 1.0) * math.log1p(wg[m] / math.fsum(wg[:m])))
        else:
            for j in range(i):
                terms.append((g[i] / g[j] - 1.0) * math.log1p(wg[j] / math.fsum(wg[j + 1:])))
        out[i] = math.fsum(terms)
    return out


def theta(model: DpsModel, gamma: Direction, kind=1, *, warn: bool = True) -> np.ndarray:
    """``theta^(1)`` (forward) or ``theta^(2)`` (backward) exponent factors.

    ``theta^(1)`` of the last class and ``theta^(2)`` of the first class are
    exactly 1 since their sums are empty.
    """
    gam, g = _check(model, gamma, warn)
    return np.exp(_theta_exponents(gam, g, _kind(kind)))


def delta_bounds(model: DpsModel, gamma: Direction, *, warn: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Limit one-step ratios of the forward and backward bound measures."""
    gam, g = _check(model, gamma, warn)
    scale = math.fsum(gam * g) / (gam * g) * model.rho
    return (
        scale * np.exp(_theta_exponents(gam, g, 1)),
        scale * np.exp(_theta_exponents(gam, g, 2)),
    )


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    margins: tuple[float, ...]


def feasibility(model: DpsModel, gamma: Direction, *, warn: bool = True) -> Feasibility:
    """All backward limit ratios below one; margins are ``1 - delta2``."""
    _, d2 = delta_bounds(model, gamma, warn=warn)
    margins = 1.0 - d2
    return Feasibility(bool(np.all(margins > 0.0)), tuple(float(x) for x in margins))


def alpha(model: DpsModel, gamma: Direction, kind=1, *, warn: bool = True) -> np.ndarray:
    """First-order correction constants of the bound-measure ratios.

    Each entry starts from ``(G - gamma_i g_i) / (gamma_i G)`` with
    ``G = sum gamma_j g_j``.  For kind 1 classes ``i < I`` add, over later
    classes ``m``, ``(g_i/g_m - 1)^2 L_m^2 / (2 gamma_m) * exp((g_i/g_m - 1) K_m)``
    with ``L_m = log(1 + gamma_m g_m / sum_{k<=m} gamma_k g_k)`` and ``K_m``
    the same logarithm with ``gamma_{i+1} g_{i+1}`` in the numerator.  For
    kind 2 classes ``i > 1`` add, over earlier classes ``j``, the analogous
    term with ``L_j = log(1 + gamma_j g_j / sum_{k>j} gamma_k g_k)`` used in
    both places.
    """
    gam, g = _check(model, gamma, warn)
    kind = _kind(kind)
    I = len(g)
    wg = gam * g
    total = math.fsum(wg)
    out = np.empty(I)
    for i in range(I):
        terms = [(total - wg[i]) / (gam[i] * total)]
        if kind == 1:
            for m in range(i + 1, I):
                upto = math.fsum(wg[: m + 1])
                log_sq = math.log1p(wg[m] / upto) ** 2
                tilt = (g[i] / g[m] - 1.0) * math.log1p(wg[i + 1] / upto)
                terms.append((g[i] / g[m] - 1.0) ** 2 * log_sq * math.exp(tilt) / (2.0 * gam[m]))
        else:
            for j in range(i):
                L = math.log1p(wg[j] / math.fsum(wg[j + 1:]))
                e = g[i] / g[j] - 1.0
                terms.append(e * e * L * L * math.exp(e * L) / (2.0 * gam[j]))
        out[i] = math.fsum(terms)
    return out


def _c_sum(model: DpsModel, gam: np.ndarray, delta: np.ndarray) -> float:
    g, lam, mu = model.g, model.lam, model.mu
    share = gam * g / math.fsum(gam * g)
    return math.fsum(mu * share * (delta - 1.0) - lam * (1.0 - 1.0 / delta))


@dataclass(frozen=True)
class MixedRatio:
    c: float
    delta: np.ndarray
    degenerate: bool


def mixed_ratio(model: DpsModel, gamma: Direction, *, warn: bool = True) -> MixedRatio:
    """Mixing constant ``c`` and limit ratios ``(delta1 - c delta2) / (1 - c)``.

    When the two bounds coincide (equal weights) numerator and denominator of
    ``c`` are the same sum (which in fact vanishes), so the common bound is
    returned with ``degenerate`` set and ``c`` is reported as the formal
    value 1.

    Raises
    ------
    Infeasible
        If some backward ratio is not below one.
    DegenerateDenominator
        If ``|1 - c| < 1e-12`` while the bounds differ.
    """
    gam, _ = _check(model, gamma, warn)
    d1, d2 = delta_bounds(model, gamma, warn=False)
    if not np.all(d2 < 1.0):
        bad = [k + 1 for k in np.flatnonzero(d2 >= 1.0)]
        raise Infeasible(f"backward limit ratio not below 1 for classes {bad}: {d2.tolist()}")
    if np.max(np.abs(d1 - d2)) < DEGENERATE_TOL:
        return MixedRatio(1.0, d1.copy(), True)
    den = _c_sum(model, gam, d2)
    if den == 0.0:
        raise DegenerateDenominator("denominator of c vanishes")
    c = _c_sum(model, gam, d1) / den
    if abs(1.0 - c) < DENOMINATOR_TOL:
        raise DegenerateDenominator(f"1 - c = {1.0 - c:.3g} is numerically zero")
    return MixedRatio(c, (d1 - c * d2) / (1.0 - c), False)


def decay_rate(model: DpsModel, gamma: Direction, *, warn: bool = True) -> float:
    """``sum gamma_i log delta_i`` with the mixed limit ratios."""
    mixed = mixed_ratio(model, gamma, warn=warn)
    if np.any(mixed.delta <= 0.0):
        raise NonpositiveDelta(f"mixed limit ratio not positive: {mixed.delta.tolist()}")
    return math.fsum(gamma.array * np.log(mixed.delta))


def bound_log_asymptote(
    model: DpsModel, gamma: Direction, N: int, kind=1, measure=None, *, warn: bool = True
) -> float:
    """Log of the leading-order expansion of a bound measure at ``floor(N gamma)``.

    ``log C - (I-1)/2 log(2 pi N) - 1/2 sum log gamma_i
    + sum (1 - gamma_i - alpha_i gamma_i) + sum floor(N gamma_i) log delta_i``.

    ``C`` is taken from ``measure.log_normalizer`` when a truncated
    normalization is supplied and is 1 otherwise, so the value is comparable
    with :func:`dpslab.bounds.log_unnormalized_mass` in that case.
    """
    kind = _kind(kind)
    if N < 1:
        raise ValidationError(f"N must be positive, got {N}")
    gam, _ = _check(model, gamma, warn)
    d1, d2 = delta_bounds(model, gamma, warn=False)
    if kind == 2 and not np.all(d2 < 1.0):
        raise Infeasible(f"backward limit ratios {d2.tolist()} are not all below 1")
    delta = d1 if kind == 1 else d2
    a = alpha(model, gamma, kind, warn=False)
    n = np.array(lattice_point(gamma, N), dtype=float)
    I = model.class_count
    log_c = 0.0 if measure is None else float(measure.log_normalizer)
    return math.fsum(
        [log_c, -0.5 * (I - 1) * math.log(2.0 * math.pi * N), -0.5 * math.fsum(np.log(gam))]
        + list(1.0 - gam - a * gam)
        + list(n * np.log(delta))
    )


def conjectural_prefactor(
    P, model: DpsModel, gamma: Direction, N_values: Sequence[int], *, warn: bool = True
) -> list[dict]:
    """Diagnostic only: ``log P_{floor(N gamma)} - log(N^{-(I-1)/2} prod delta_i^{floor(N gamma_i)})``.

    A stable value across ``N`` would be consistent with a prefactor of the
    conjectured shape; nothing here is asserted.
    """
    mixed = mixed_ratio(model, gamma, warn=warn)
    rows = []
    I = model.class_count
    for N in N_values:
        n = lattice_point(gamma, N)
        p = P.mass(n)
        predicted = -0.5 * (I - 1) * math.log(N) + math.fsum(
            c * math.log(d) for c, d in zip(n, mixed.delta)
        )
        rows.append({"N": int(N), "n": list(n), "log_mass": math.log(p), "log_gap": math.log(p) - predicted})
    return rows


@dataclass(frozen=True)
class AsymptoticReport:
    """All constants along one direction.

    ``c``, ``delta_mixed`` and ``decay_rate`` are ``None`` when they cannot be
    evaluated (infeasible direction, degenerate denominator or a
    nonpositive mixed ratio); ``error`` then names the reason.
    """

    direction: Direction
    theta1: tuple[float, ...]
    theta2: tuple[float, ...]
    delta1: tuple[float, ...]
    delta2: tuple[float, ...]
    alpha1: tuple[float, ...]
    alpha2: tuple[float, ...]
    c: float | None
    delta_mixed: tuple[float, ...] | None
    decay_rate: float | None
    feasible: bool
    degenerate: bool
    margins: tuple[float, ...]
    error: str | None = None
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = list(self.direction.gammas)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _tuple(x) -> tuple[float, ...]:
    return tuple(float(v) for v in x)


def asymptotic_report(model: DpsModel, gamma: Direction) -> AsymptoticReport:
    """Evaluate every constant; failures are recorded in the report, not raised."""
    notes = []
    if model.class_count > 1 and not model.strictly_increasing_weights():
        notes.append("weights are not strictly increasing")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeightOrderWarning)
        d1, d2 = delta_bounds(model, gamma)
        feas = feasibility(model, gamma)
        degenerate = bool(np.max(np.abs(d1 - d2)) < DEGENERATE_TOL)
        c = mixed = rate = None
        error = None
        try:
            m = mixed_ratio(model, gamma)
            c, mixed = m.c, _tuple(m.delta)
            rate = decay_rate(model, gamma)
        except Infeasible as exc:
            error = f"{type(exc).__name__}: {exc}"
        return AsymptoticReport(
            direction=gamma,
            theta1=_tuple(theta(model, gamma, 1)),
            theta2=_tuple(theta(model, gamma, 2)),
            delta1=_tuple(d1),
            delta2=_tuple(d2),
            alpha1=_tuple(alpha(model, gamma, 1)),
            alpha2=_tuple(alpha(model, gamma, 2)),
            c=c,
            delta_mixed=mixed,
            decay_rate=rate,
            feasible=feas.feasible,
            degenerate=degenerate,
            margins=feas.margins,
            error=error,
            notes=tuple(notes),
        )
