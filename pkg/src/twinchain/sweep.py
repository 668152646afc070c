"""Parameter sweeps: repeated runs per value with node-level samples pooled per value."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .metrics import DelaySamples, QuantileSummary, delay_samples, summarize_or_none
from .scenario import FIELD_TYPES, InvalidValue, Scenario, UnknownKey, coerce_value
from .simulation import RunResult, run_simulation

log = logging.getLogger(__name__)

SWEEP_METRICS = ("agreement", "propagation", "update", "total", "agreement_plus_propagation",
                 "normal_interval", "switch_interval")
SWEEP_COLUMNS = ("value", "metric", "count", "min", "q1", "median", "q3", "max", "mean")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    repetitions: int = 5
    base: Scenario = field(default_factory=Scenario)

    def __post_init__(self):
        if self.parameter not in FIELD_TYPES or self.parameter == "seed":
            raise UnknownKey(f"cannot sweep {self.parameter!r}")
        if not self.values:
            raise InvalidValue("sweep needs at least one value")
        if self.repetitions < 1:
            raise InvalidValue("repetitions must be at least 1")
        vals = tuple(coerce_value(self.parameter, v) for v in self.values)
        for v in vals:
            self.scenario_for(v)  # validates
        object.__setattr__(self, "values", vals)

    def scenario_for(self, value, seed: int | None = None) -> Scenario:
        s = self.base.replace(**{self.parameter: value})
        return s if seed is None else s.replace(seed=seed)


@dataclass
class PooledMetrics:
    delays: DelaySamples = field(default_factory=DelaySamples)
    normal_interval: list[float] = field(default_factory=list)
    switch_interval: list[float] = field(default_factory=list)

    def add(self, result: RunResult, rank_by: str = "activation") -> None:
        s = result.scenario
        samples, _ = delay_samples(result.delay_records, s.primary_nodes, s.duration_s, rank_by)
        self.delays.extend(samples)
        for r in result.intervals:
            (self.switch_interval if r.is_switch else self.normal_interval).append(r.interval)

    def samples(self, metric: str) -> list[float]:
        if metric in ("normal_interval", "switch_interval"):
            return getattr(self, metric)
        return getattr(self.delays, metric)

    def summary(self, metric: str) -> QuantileSummary | None:
        return summarize_or_none(self.samples(metric))


@dataclass
class SweepResult:
    spec: SweepSpec
    seeds: tuple[int, ...]
    pooled: dict = field(default_factory=dict)
    failures: list[tuple[object, int, str]] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        out = []
        for v in self.spec.values:
            for m in SWEEP_METRICS:
                q = self.pooled[v].summary(m)
                if q is None:
                    out.append((v, m, 0) + (None,) * 6)
                else:
                    out.append((v, m, q.count, q.min, q.q1, q.median, q.q3, q.max, q.mean))
        return out


def run_sweep(spec: SweepSpec, seeds: Sequence[int], *, rank_by: str = "activation",
              on_run: Callable[[object, RunResult], None] | None = None,
              runner: Callable[[Scenario], RunResult] = run_simulation) -> SweepResult:
    """Run every (value, seed) pair in value-then-seed order."""
    seeds = tuple(int(x) for x in seeds)
    if not seeds:
        raise InvalidValue("sweep needs at least one seed")
    res = SweepResult(spec, seeds)
    for v in spec.values:
        pool = res.pooled[v] = PooledMetrics()
        for sd in seeds:
            r = runner(spec.scenario_for(v, sd))
            log.info("%s=%s seed %d: %d CBs", spec.parameter, v, sd, r.committed_cbs)
            if not r.verification.ok:
                res.failures.append((v, sd, "; ".join(map(str, r.verification.violations[:3]))))
            pool.add(r, rank_by)
            if on_run is not None:
                on_run(v, r)
    return res


def default_seeds(n: int) -> tuple[int, ...]:
    return tuple(range(n))


def sweep_dir(out: str | Path, parameter: str, value, seed: int) -> Path:
    return Path(out) / f"{parameter}={value}" / f"seed={seed}"
