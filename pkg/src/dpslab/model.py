"""System definition: the DPS model, occupancy vectors and directions.

Class indices are 0-based throughout the Python API; the command line and
the documentation number classes from 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    IndexOutOfRange,
    InvalidDirection,
    LengthMismatch,
    NonPositiveParameter,
    UnstableSystem,
    ValidationError,
)

SIMPLEX_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


@dataclass(frozen=True)
class DpsModel:
    """Markovian discriminatory processor sharing queue with ``I`` classes.

    Class ``i`` flows arrive as a Poisson stream of rate ``arrival_rates[i]``,
    carry exponential work of rate ``service_rates[i]`` and receive the
    fraction ``g_i / <n, g>`` of the server.  Construction validates the
    parameters; loads are derived on every access.
    """

    arrival_rates: tuple[float, ...]
    service_rates: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        lam = tuple(float(x) for x in self.arrival_rates)
        mu = tuple(float(x) for x in self.service_rates)
        g = tuple(float(x) for x in self.weights)
        if not (len(lam) == len(mu) == len(g)):
            raise LengthMismatch(
                f"lambda, mu and g lengths differ: {len(lam)}, {len(mu)}, {len(g)}"
            )
        if len(lam) == 0:
            raise LengthMismatch("model needs at least one class")
        for name, vec in (("lambda", lam), ("mu", mu), ("g", g)):
            for k, x in enumerate(vec):
                if not math.isfinite(x) or x <= 0.0:
                    raise NonPositiveParameter(
                        f"{name}[{k + 1}] = {x!r} must be a positive finite number"
                    )
        rho = sum(a / b for a, b in zip(lam, mu))
        if rho >= 1.0:
            raise UnstableSystem(f"total load rho = {rho:.6g} >= 1; system is unstable")
        object.__setattr__(self, "arrival_rates", lam)
        object.__setattr__(self, "service_rates", mu)
        object.__setattr__(self, "weights", g)

    @property
    def class_count(self) -> int:
        return len(self.arrival_rates)

    @property
    def lam(self) -> np.ndarray:
        return np.array(self.arrival_rates)

    @property
    def mu(self) -> np.ndarray:
        return np.array(self.service_rates)

    @property
    def g(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def loads(self) -> tuple[float, ...]:
        return tuple(a / b for a, b in zip(self.arrival_rates, self.service_rates))

    @property
    def rho(self) -> np.ndarray:
        return self.lam / self.mu

    @property
    def total_load(self) -> float:
        return sum(self.loads)

    def equal_weights(self, rtol: float = 1e-12) -> bool:
        g = self.weights
        return max(g) - min(g) <= rtol * max(g)

    def strictly_increasing_weights(self) -> bool:
        g = self.weights
        return all(a < b for a, b in zip(g, g[1:]))

    def with_weights(self, weights: Sequence[float]) -> "DpsModel":
        return DpsModel(self.arrival_rates, self.service_rates, tuple(weights))

    def permuted(self, order: Sequence[int]) -> "DpsModel":
        """Model with classes reordered so that new class k is old ``order[k]``."""
        return DpsModel(
            tuple(self.arrival_rates[k] for k in order),
            tuple(self.service_rates[k] for k in order),
            tuple(self.weights[k] for k in order),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "classes": self.class_count,
            "lambda": list(self.arrival_rates),
            "mu": list(self.service_rates),
            "g": list(self.weights),
        }

    def check_index(self, i: int) -> int:
        if not 0 <= i < self.class_count:
            raise IndexOutOfRange(f"class index {i} outside 0..{self.class_count - 1}")
        return i


def validate_model(raw: Mapping[str, Any] | DpsModel) -> DpsModel:
    """Build a validated model from a config mapping.

    ``raw`` uses the JSON field names ``classes``, ``lambda``, ``mu`` and
    ``g``; ``classes`` is optional but must agree with the vector lengths
    when present.  Passing an existing model returns an equal model.
    """
    if isinstance(raw, DpsModel):
        return DpsModel(raw.arrival_rates, raw.service_rates, raw.weights)
    try:
        lam, mu, g = raw["lambda"], raw["mu"], raw["g"]
    except KeyError as exc:
        raise ValidationError(f"model config is missing field {exc.args[0]!r}") from None
    if any(not isinstance(v, (list, tuple)) for v in (lam, mu, g)):
        raise ValidationError("lambda, mu and g must be arrays")
    if "classes" in raw:
        count = raw["classes"]
        if not isinstance(count, int) or isinstance(count, bool) or count < 1:
            raise ValidationError(f"classes must be a positive integer, got {count!r}")
        if any(len(v) != count for v in (lam, mu, g)):
            raise LengthMismatch(
                f"classes = {count} but vector lengths are {len(lam)}, {len(mu)}, {len(g)}"
            )
    try:
        return DpsModel(tuple(lam), tuple(mu), tuple(g))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"non-numeric model parameter: {exc}") from None


def load_model(path: str | Path) -> DpsModel:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: model config must be a JSON object")
    return validate_model(raw)


class StateVector(tuple):
    """Occupancy vector ``n``: number of flows of each class in the system.

    A ``tuple`` subclass, so it hashes and compares like the plain tuple of
    its counts and can key dictionaries interchangeably with one.
    """

    def __new__(cls, counts: Sequence[int]) -> "StateVector":
        vals = []
        for c in counts:
            ci = int(c)
            if ci != c or ci < 0:
                raise ValidationError(f"state components must be nonnegative integers, got {c!r}")
            vals.append(ci)
        return super().__new__(cls, vals)

    @classmethod
    def zero(cls, class_count: int) -> "StateVector":
        return cls([0] * class_count)

    @classmethod
    def unit(cls, class_count: int, i: int) -> "StateVector":
        v = [0] * class_count
        v[i] = 1
        return cls(v)

    @property
    def total(self) -> int:
        return sum(self)

    def partial(self, i: int) -> int:
        """``n_1 + ... + n_i`` in 1-based terms, i.e. the first ``i`` counts."""
        return sum(self[:i])

    def weighted_total(self, weights: Sequence[float]) -> float:
        if len(weights) != len(self):
            raise LengthMismatch(f"state has {len(self)} classes, weights {len(weights)}")
        return math.fsum(c * w for c, w in zip(self, weights))

    def plus(self, i: int) -> "StateVector":
        v = list(self)
        v[i] += 1
        return StateVector(v)

    def minus(self, i: int) -> "StateVector | None":
        """``n - 1_i``, or ``None`` when that vector has a negative component."""
        if self[i] == 0:
            return None
        v = list(self)
        v[i] -= 1
        return StateVector(v)

    def separated_from_zero(self) -> bool:
        return all(c > 0 for c in self)

    def __repr__(self) -> str:
        return f"StateVector({list(self)})"


@dataclass(frozen=True)
class Direction:
    """Normalized direction on the open simplex.

    Inputs whose sum is within ``1e-9`` of one are rescaled so the stored
    components sum to one within ``1e-12``; anything further off is rejected.
    """

    gammas: tuple[float, ...]

    def __post_init__(self) -> None:
        gam = tuple(float(x) for x in self.gammas)
        if not gam:
            raise InvalidDirection("direction needs at least one component")
        if any(not math.isfinite(x) or x <= 0.0 for x in gam):
            raise InvalidDirection(f"direction components must be positive, got {gam}")
        total = math.fsum(gam)
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise InvalidDirection(f"direction sums to {total!r}, not 1")
        if abs(total - 1.0) > 0.0:
            gam = tuple(x / total for x in gam)
        if abs(math.fsum(gam) - 1.0) > SIMPLEX_TOL:
            raise InvalidDirection(f"direction {gam} cannot be normalized to 1e-12")
        object.__setattr__(self, "gammas", gam)

    @classmethod
    def parse(cls, text: str) -> "Direction":
        """Parse a comma separated list such as ``"0.4,0.6"``."""
        try:
            vals = [float(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise InvalidDirection(f"cannot parse direction {text!r}") from None
        return cls(tuple(vals))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.gammas)

    def __len__(self) -> int:
        return len(self.gammas)

    def __iter__(self):
        return iter(self.gammas)

    def __getitem__(self, i: int) -> float:
        return self.gammas[i]


def _counts(n: Sequence[int], model: DpsModel) -> Sequence[int]:
    if len(n) != model.class_count:
        raise LengthMismatch(f"state has {len(n)} classes, model has {model.class_count}")
    return n


def weighted_total(n: Sequence[int], model: DpsModel) -> float:
    """Return ``<n, g>``."""
    n = _counts(n, model)
    return math.fsum(c * w for c, w in zip(n, model.weights))


def lattice_point(gamma: Direction, N: int) -> StateVector:
    """Componentwise floor of ``N * gamma``."""
    if N < 0:
        raise ValidationError(f"N must be nonnegative, got {N}")
    return StateVector([math.floor(N * x) for x in gamma.gammas])


def service_rate(n: Sequence[int], i: int, model: DpsModel) -> float:
    """Departure rate of class ``i`` in state ``n``: ``mu_i g_i n_i / <n, g>``.

    The empty state has rate 0 for every class.
    """
    model.check_index(i)
    w = weighted_total(n, model)
    if n[i] == 0 or w == 0.0:
        return 0.0
    return model.service_rates[i] * model.weights[i] * n[i] / w
