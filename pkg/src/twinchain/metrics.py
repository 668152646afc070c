"""Management-delay decomposition and reconfiguration-overhead measurement."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .chain import TransactionBlock
from .consensus import quorum_size

CENSOR_WINDOW_S = 60.0


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class NodeDelay:
    node_id: int
    first_arrival: float
    activation: float


@dataclass(frozen=True)
class DelayRecord:
    cb_height: int
    trigger_time: float
    commit_time: float
    nodes: tuple[NodeDelay, ...] = ()
    complete: bool = True

    @property
    def agreement_delay(self) -> float:
        return self.commit_time - self.trigger_time

    def propagation_delay(self, nd: NodeDelay) -> float:
        return nd.first_arrival - self.commit_time

    def update_delay(self, nd: NodeDelay) -> float:
        return nd.activation - nd.first_arrival

    def total_delay(self, nd: NodeDelay) -> float:
        return nd.activation - self.trigger_time


@dataclass(frozen=True)
class IntervalRecord:
    height: int
    interval: float
    is_switch: bool


@dataclass(frozen=True)
class QuantileSummary:
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def as_dict(self) -> dict:
        return {"count": self.count, "min": self.min, "q1": self.q1, "median": self.median,
                "q3": self.q3, "max": self.max, "mean": self.mean}


def fastest_quorum(record: DelayRecord, n_primary: int, rank_by: str = "activation") -> DelayRecord:
    """Keep the ``quorum_size(n_primary)`` nodes that finished first (ties by node id).

    Nodes that never activated the block are not eligible; if fewer than a
    quorum are, the record is returned flagged incomplete.
    """
    q = quorum_size(n_primary)
    key = (lambda nd: (nd.activation, nd.node_id)) if rank_by == "activation" else \
        (lambda nd: (nd.first_arrival, nd.node_id))
    eligible = [nd for nd in record.nodes if np.isfinite(nd.activation)]
    ranked = sorted(eligible, key=key)[:q]
    return replace(record, nodes=tuple(ranked), complete=len(ranked) == q)


def classify_intervals(primary_chain: Sequence[TransactionBlock]) -> list[IntervalRecord]:
    """Inter-block interval of every block after genesis, tagged as switch or normal."""
    return [IntervalRecord(b.height, b.commit_time - a.commit_time, b.config_ref != a.config_ref)
            for a, b in zip(primary_chain, primary_chain[1:])]


def summarize(values: Iterable[float]) -> QuantileSummary:
    arr = np.sort(np.asarray(list(values), dtype=np.float64))
    if arr.size == 0:
        raise EmptyInput("no values to summarize")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    return QuantileSummary(int(arr.size), float(arr[0]), float(q1), float(med), float(q3),
                           float(arr[-1]), float(arr.mean()))


def overhead(switch_summary: QuantileSummary, normal_summary: QuantileSummary) -> tuple[float, float]:
    """(mean, median) switch-minus-normal interval difference."""
    return (switch_summary.mean - normal_summary.mean, switch_summary.median - normal_summary.median)


def build_delay_records(cbs, triggers: dict[int, float], nodes, horizon: float) -> list[DelayRecord]:
    """One record per committed configuration block, covering every primary node."""
    out = []
    acts = [dict(nd.activations) for nd in nodes]
    for cb in cbs:
        if cb.height == 0:
            continue
        per = []
        for nd, act_map in zip(nodes, acts):
            arr = nd.first_arrival.get(cb.height, np.inf)
            act = act_map.get(cb.height, np.inf)
            if act > horizon:
                act = np.inf
            if arr > horizon:
                arr = np.inf
            per.append(NodeDelay(nd.id, float(arr), float(act)))
        out.append(DelayRecord(cb.height, triggers[cb.height], cb.commit_time, tuple(per)))
    return out


@dataclass
class DelaySamples:
    agreement: list[float] = field(default_factory=list)
    propagation: list[float] = field(default_factory=list)
    update: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    agreement_plus_propagation: list[float] = field(default_factory=list)

    def extend(self, other: "DelaySamples") -> None:
        for k in vars(self):
            getattr(self, k).extend(getattr(other, k))


def delay_samples(records: Iterable[DelayRecord], n_primary: int, horizon: float,
                  rank_by: str = "activation", censor: float = CENSOR_WINDOW_S) -> tuple[DelaySamples, list[DelayRecord]]:
    """Pool node-level samples over the fastest quorum of every usable block.

    Blocks committed within ``censor`` seconds of the horizon, and blocks a
    quorum of nodes had not activated by then, are excluded.
    """
    s = DelaySamples()
    kept = []
    for rec in records:
        if rec.commit_time > horizon - censor:
            continue
        fq = fastest_quorum(rec, n_primary, rank_by)
        if not fq.complete:
            continue
        kept.append(fq)
        s.agreement.append(fq.agreement_delay)
        for nd in fq.nodes:
            p = fq.propagation_delay(nd)
            s.propagation.append(p)
            s.update.append(fq.update_delay(nd))
            s.total.append(fq.total_delay(nd))
            s.agreement_plus_propagation.append(fq.agreement_delay + p)
    return s, kept


def summarize_or_none(values) -> QuantileSummary | None:
    try:
        return summarize(values)
    except EmptyInput:
        return None
