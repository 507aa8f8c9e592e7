"""Event-by-event simulation of the DPS Markov chain.

Random numbers come from numpy's ``PCG64`` bit generator seeded with the
configured 64-bit seed, so a run is reproducible from ``(model, config)``.
State occupancy is accumulated by holding time after the warmup, which
estimates the continuous-time stationary law directly.  The post-warmup
window is split into equal-length batches for batch-means error bars.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ctmc import TruncatedDistribution, write_distribution_csv, write_distribution_json
from .errors import PopulationGuardTripped, ValidationError
from .model import DpsModel

RNG_ALGORITHM = "numpy.random.PCG64"
_BLOCK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    seed: int
    warmup: float | None = None
    max_population_guard: int = 100_000
    batches: int = 20

    def __post_init__(self) -> None:
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.1 * self.horizon)
        if not (math.isfinite(self.horizon) and self.horizon > self.warmup >= 0.0):
            raise ValidationError(
                f"need horizon > warmup >= 0, got horizon={self.horizon}, warmup={self.warmup}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.batches < 2:
            raise ValidationError("at least two batches are needed for error bars")
        if self.max_population_guard < 1:
            raise ValidationError("population guard must be positive")

    @property
    def window(self) -> float:
        return self.horizon - self.warmup


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Time-weighted occupancy fractions from one or more runs.

    ``batch_*`` arrays hold per-batch statistics (equal-length windows):
    mean population, fraction of time empty and per-class departure rate.
    """

    masses: Mapping[tuple[int, ...], float]
    total_time: float
    transitions: int
    class_count: int
    batch_population: np.ndarray
    batch_empty: np.ndarray
    batch_throughput: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    def mass(self, n: Sequence[int]) -> float:
        return self.masses.get(tuple(n), 0.0)

    __getitem__ = mass

    @staticmethod
    def _mean_se(x: np.ndarray) -> tuple[float, float]:
        return float(np.mean(x, axis=0)), float(np.std(x, axis=0, ddof=1) / math.sqrt(len(x)))

    def mean_population(self) -> tuple[float, float]:
        """Batch-means estimate and standard error of ``E|n|``."""
        return self._mean_se(self.batch_population)

    def empty_fraction(self) -> tuple[float, float]:
        return self._mean_se(self.batch_empty)

    def throughput(self, i: int) -> tuple[float, float]:
        return self._mean_se(self.batch_throughput[:, i])

    def _rows(self) -> tuple[np.ndarray, np.ndarray]:
        keys = sorted(self.masses, key=lambda s: (sum(s), s))
        states = np.array(keys, dtype=np.int64).reshape(len(keys), self.class_count)
        return states, np.array([self.masses[k] for k in keys])

    def to_csv(self, path: str | Path) -> None:
        write_distribution_csv(path, *self._rows())

    def to_json(self, path: str | Path) -> None:
        states, probs = self._rows()
        level = int(states.sum(axis=1).max()) if len(states) else 0
        write_distribution_json(path, level, states, probs)

    def run_metadata(self) -> dict:
        meta = dict(self.metadata)
        meta["transitions"] = self.transitions
        return meta


def simulate(model: DpsModel, cfg: SimConfig) -> EmpiricalDistribution:
    """Simulate one replication and return time-weighted occupancy.

    In state ``n`` arrivals of class ``i`` occur at rate ``lambda_i`` and
    departures at ``mu_i g_i n_i / <n, g>``; holding times are exponential
    with the total rate.  Transitions are counted over the whole run.
    """
    rng = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    I = model.class_count
    lam = list(model.arrival_rates)
    mug = [m * g for m, g in zip(model.service_rates, model.weights)]
    g = list(model.weights)
    total_arrival = math.fsum(lam)
    guard = cfg.max_population_guard

    B = cfg.batches
    width = cfg.window / B
    bounds = [cfg.warmup + k * width for k in range(B)] + [cfg.horizon]
    seg = -1 if cfg.warmup > 0.0 else 0
    next_bound = bounds[seg + 1]

    occupancy: dict[tuple[int, ...], float] = {}
    pop_time = [0.0] * B
    empty_time = [0.0] * B
    departures = [[0] * I for _ in range(B)]

    n = [0] * I
    size = 0
    weighted = 0.0
    t = 0.0
    transitions = 0
    exp_block = rng.standard_exponential(_BLOCK)
    uni_block = rng.random(_BLOCK)
    k = 0

    while True:
        if weighted > 0.0:
            dep = [mug[i] * n[i] / weighted for i in range(I)]
            rate = total_arrival + math.fsum(dep)
        else:
            dep = None
            rate = total_arrival
        if k == _BLOCK:
            exp_block = rng.standard_exponential(_BLOCK)
            uni_block = rng.random(_BLOCK)
            k = 0
        t_next = t + exp_block[k] / rate
        u = uni_block[k] * rate
        k += 1

        end = min(t_next, cfg.horizon)
        key = tuple(n)
        while end > next_bound:
            if seg >= 0:
                dt = next_bound - t
                occupancy[key] = occupancy.get(key, 0.0) + dt
                pop_time[seg] += dt * size
                if size == 0:
                    empty_time[seg] += dt
            t = next_bound
            seg += 1
            next_bound = bounds[seg + 1] if seg < B else math.inf
        if seg >= 0 and seg < B:
            dt = end - t
            occupancy[key] = occupancy.get(key, 0.0) + dt
            pop_time[seg] += dt * size
            if size == 0:
                empty_time[seg] += dt
        if t_next >= cfg.horizon:
            break
        t = t_next
        transitions += 1

        acc = 0.0
        chosen = -1
        for i in range(I):
            acc += lam[i]
            if u < acc:
                chosen = i
                break
        if chosen >= 0:
            n[chosen] += 1
            size += 1
            weighted += g[chosen]
            if size > guard:
                raise PopulationGuardTripped(
                    f"population {size} exceeded guard {guard} at t={t:.6g}"
                )
            continue
        for i in range(I):
            acc += dep[i]
            if u < acc:
                chosen = i
                break
        if chosen < 0:
            # rounding left u past the last cumulative rate
            chosen = max(i for i in range(I) if n[i] > 0)
        n[chosen] -= 1
        size -= 1
        weighted = math.fsum(c * w for c, w in zip(n, g)) if size else 0.0
        if seg >= 0:
            departures[seg][chosen] += 1

    total = math.fsum(occupancy.values())
    masses = {s: v / total for s, v in occupancy.items()}
    return EmpiricalDistribution(
        masses=masses,
        total_time=cfg.window,
        transitions=transitions,
        class_count=I,
        batch_population=np.array(pop_time) / width,
        batch_empty=np.array(empty_time) / width,
        batch_throughput=np.array(departures, dtype=float) / width,
        metadata={
            "seed": int(cfg.seed),
            "horizon": cfg.horizon,
            "warmup": cfg.warmup,
            "batches": B,
            "rng": RNG_ALGORITHM,
        },
    )


def merge(runs: Iterable[EmpiricalDistribution]) -> EmpiricalDistribution:
    """Pool replications by adding their occupancy times."""
    runs = list(runs)
    if not runs:
        raise ValidationError("nothing to merge")
    I = runs[0].class_count
    if any(r.class_count != I for r in runs):
        raise ValidationError("replications have different class counts")
    time = {}
    for r in runs:
        for s, p in r.masses.items():
            time[s] = time.get(s, 0.0) + p * r.total_time
    total = math.fsum(time.values())
    return EmpiricalDistribution(
        masses={s: v / total for s, v in time.items()},
        total_time=math.fsum(r.total_time for r in runs),
        transitions=sum(r.transitions for r in runs),
        class_count=I,
        batch_population=np.concatenate([r.batch_population for r in runs]),
        batch_empty=np.concatenate([r.batch_empty for r in runs]),
        batch_throughput=np.concatenate([r.batch_throughput for r in runs]),
        metadata={"runs": [r.metadata for r in runs]},
    )


def _as_masses(d) -> Mapping[tuple[int, ...], float]:
    if isinstance(d, Mapping):
        return d
    if isinstance(d, (TruncatedDistribution, EmpiricalDistribution)):
        return d.masses
    raise ValidationError(f"cannot compare object of type {type(d).__name__}")


def total_variation(a, b) -> float:
    """``1/2 sum |a(n) - b(n)|`` over the union of supports."""
    ma, mb = _as_masses(a), _as_masses(b)
    keys = set(ma) | set(mb)
    return 0.5 * math.fsum(abs(ma.get(k, 0.0) - mb.get(k, 0.0)) for k in keys)


def write_run_metadata(path: str | Path, run: EmpiricalDistribution) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(run.run_metadata(), fh, indent=2)
        fh.write("\n")
