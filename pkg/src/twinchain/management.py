"""Management chain: CBI-driven agreement on configuration blocks.

Each CBI trigger opens up to ``|MN|`` proposal cycles.  Cycle ``r`` is led by
validator ``(h_l + r) mod |MN|`` where ``h_l`` is the hash of the latest
configuration block; it ends either with a committed block or with the
cycle timeout, after which the next cycle starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .chain import ChainError, ChainPair, ConfigurationBlock, Configuration
from .consensus import RoundState, TimingModel, quorum_size, run_round, select_proposer
from .engine import EventKind, RandomStream, SimEvent, Simulator, sample_normal

CBI_FLOOR_S = 1.0


class AgreementFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemSnapshot:
    """Read-only view handed to twins when they propose."""

    clock: float
    latest: ConfigurationBlock
    recent_commit_times: tuple[float, ...] = ()

    @property
    def active_config(self) -> Configuration:
        return self.latest.config


class TwinPolicy(Protocol):
    def propose(self, snapshot: SystemSnapshot) -> Configuration: ...

    def validate(self, config: Configuration) -> bool: ...


class ConstantTwin:
    """Always proposes the same configuration and accepts only that configuration."""

    def __init__(self, config: Configuration):
        self.config = config

    def propose(self, snapshot: SystemSnapshot) -> Configuration:
        return self.config

    def validate(self, config: Configuration) -> bool:
        return config == self.config


class ChangingTwin:
    """Proposes the base configuration tagged with a new ``revision`` every time.

    Every committed block therefore carries a configuration different from
    its predecessor while leaving all operational parameters unchanged.
    """

    def __init__(self, base: Configuration):
        self.base = base

    def propose(self, snapshot: SystemSnapshot) -> Configuration:
        return self.base.with_updates(revision=snapshot.latest.height + 1)

    def validate(self, config: Configuration) -> bool:
        stripped = {k: v for k, v in config.items() if k != "revision"}
        base = {k: v for k, v in self.base.items() if k != "revision"}
        return stripped == base


class RejectingTwin:
    """Byzantine twin that proposes normally but votes against everything."""

    def __init__(self, inner: TwinPolicy):
        self.inner = inner

    def propose(self, snapshot: SystemSnapshot) -> Configuration:
        return self.inner.propose(snapshot)

    def validate(self, config: Configuration) -> bool:
        return False


@dataclass
class ManagementNode:
    id: int
    twin: TwinPolicy
    online: bool = True


@dataclass
class CbiSchedule:
    mean: float = 30.0
    std: float = 5.0
    next_trigger: float = 0.0


def schedule_cbi(last_commit: float, sched: CbiSchedule, stream: RandomStream,
                 sim: Simulator | None = None) -> float:
    gap = sample_normal(stream, sched.mean, sched.std, CBI_FLOOR_S)
    sched.next_trigger = last_commit + gap
    if sim is not None:
        sim.schedule(SimEvent(sched.next_trigger, EventKind.CBI_TRIGGER, payload=gap))
    return sched.next_trigger


def validate_proposal(node: ManagementNode, cb: ConfigurationBlock, cycle: int, current_cycle: int,
                      chain: ChainPair) -> bool:
    """Vote of ``node`` on ``cb`` proposed for ``cycle`` while the node is in ``current_cycle``."""
    if not node.online or cycle != current_cycle:
        return False
    try:
        chain.check_config_block(cb, require_proof=False)
    except ChainError:
        return False
    return bool(node.twin.validate(cb.config))


@dataclass
class CycleRecord:
    cycle: int
    start: float
    proposer: int
    proposer_online: bool
    committed: bool = False


@dataclass
class AgreementRecord:
    trigger_time: float
    cbi_sample: float
    reference_time: float
    cycles: list[CycleRecord] = field(default_factory=list)
    commit_time: float | None = None
    cb_height: int | None = None
    failed: bool = False

    @property
    def done(self) -> bool:
        return self.failed or self.commit_time is not None


class ManagementLayer:
    """Event-driven management nodes running the agreement protocol.

    ``on_commit(cb)`` is called at the commit time of every configuration
    block (the moment the proposer holds a quorum of commit votes).
    """

    def __init__(self, sim: Simulator, chain: ChainPair, nodes: Sequence[ManagementNode],
                 timing: TimingModel, *, cbi: CbiSchedule, cbi_stream: RandomStream,
                 cycle_timeout: float = 5.0, config_block_size: float = 0.25,
                 on_commit: Callable[[ConfigurationBlock], None] | None = None,
                 repeat: bool = True):
        self.sim = sim
        self.chain = chain
        self.nodes = sorted(nodes, key=lambda n: n.id)
        self.ids = [n.id for n in self.nodes]
        self.timing = timing
        self.cbi = cbi
        self.cbi_stream = cbi_stream
        self.cycle_timeout = cycle_timeout
        self.config_block_size = config_block_size
        self.on_commit = on_commit
        self.repeat = repeat
        self.fc = 0
        self.agreements: list[AgreementRecord] = []
        self.rounds: list[RoundState] = []
        self._timeout_id: int | None = None
        self._latency = timing.topology.latency_matrix(self.ids)
        self._online = np.array([n.online for n in self.nodes])
        sim.on(EventKind.CBI_TRIGGER, self._on_trigger)
        sim.on(EventKind.CYCLE_TIMEOUT, self._on_timeout)
        sim.on(EventKind.CB_COMMIT, self._on_commit)

    @property
    def current(self) -> AgreementRecord | None:
        return self.agreements[-1] if self.agreements else None

    def start(self, last_commit: float = 0.0) -> float:
        return schedule_cbi(last_commit, self.cbi, self.cbi_stream, self.sim)

    def trigger_now(self) -> None:
        self.sim.schedule(SimEvent(self.sim.clock, EventKind.CBI_TRIGGER, payload=0.0))

    def _on_trigger(self, ev: SimEvent) -> None:
        ref = self.sim.clock - (ev.payload or 0.0)
        self.agreements.append(AgreementRecord(self.sim.clock, ev.payload or 0.0, ref))
        self.fc = 0
        self._start_cycle()

    def _snapshot(self) -> SystemSnapshot:
        recent = tuple(cb.commit_time for cb in self.chain.management_chain[-8:])
        return SystemSnapshot(self.sim.clock, self.chain.latest_config(), recent)

    def _start_cycle(self) -> None:
        start = self.sim.clock
        r = self.fc
        deadline = start + self.cycle_timeout
        tip = self.chain.latest_config()
        idx = select_proposer(tip.hash, r, len(self.nodes))
        proposer = self.nodes[idx]
        rec = CycleRecord(r, start, proposer.id, proposer.online)
        self.current.cycles.append(rec)
        self._timeout_id = self.sim.schedule(SimEvent(deadline, EventKind.CYCLE_TIMEOUT, payload=r))
        self.sim.trace(f"cycle|{start!r}|{r}|{proposer.id}|{int(proposer.online)}")
        if not proposer.online:
            return
        cb = ConfigurationBlock.create(tip, proposer.id, proposer.twin.propose(self._snapshot()))
        state = RoundState("management", proposer.id, self.ids, cb.hash, cycle=r)

        def accept(i: int, t: float) -> bool:
            current_cycle = r if t < deadline else r + 1
            return validate_proposal(self.nodes[i], cb, r, current_cycle, self.chain)

        outcome = run_round(state, start, self.config_block_size, self.timing, accept,
                            online=self._online, deadline=deadline, latency=self._latency)
        self.rounds.append(state)
        if outcome.committed:
            signed = cb.signed(outcome.proof, outcome.proposer_commit_time)
            self.sim.schedule(SimEvent(outcome.proposer_commit_time, EventKind.CB_COMMIT, proposer.id, (r, signed)))

    def _on_commit(self, ev: SimEvent) -> None:
        r, cb = ev.payload
        if r != self.fc or self.current is None or self.current.done:
            return
        self.sim.cancel(self._timeout_id)
        self.chain.append_config_block(cb)
        rec = self.current
        rec.cycles[-1].committed = True
        rec.commit_time = cb.commit_time
        rec.cb_height = cb.height
        self.fc = 0
        self.sim.trace(f"cb|{cb.height}|{cb.hash.hex()}|{cb.commit_time!r}")
        if self.on_commit is not None:
            self.on_commit(cb)
        if self.repeat:
            schedule_cbi(self.sim.clock, self.cbi, self.cbi_stream, self.sim)

    def on_cycle_timeout(self, cycle: int) -> None:
        if self.current is None or self.current.done or cycle != self.fc:
            return
        self.fc += 1
        if self.fc < len(self.nodes):
            self._start_cycle()
            return
        self.current.failed = True
        self.fc = 0
        self.sim.trace(f"agreement-failed|{self.sim.clock!r}")
        if self.repeat:
            schedule_cbi(self.sim.clock, self.cbi, self.cbi_stream, self.sim)

    def _on_timeout(self, ev: SimEvent) -> None:
        self.on_cycle_timeout(ev.payload)


def run_agreement(trigger: float, nodes: Sequence[ManagementNode], chain: ChainPair, timing: TimingModel,
                  *, cycle_timeout: float = 5.0, config_block_size: float = 0.25) -> tuple[ConfigurationBlock, AgreementRecord]:
    """Run a single agreement starting at ``trigger`` to completion.

    Returns the committed block and its record, or raises
    :class:`AgreementFailed` once every cycle has failed.
    """
    sim = Simulator(start_time=trigger)
    layer = ManagementLayer(sim, chain, nodes, timing, cbi=CbiSchedule(), cbi_stream=RandomStream(0, "unused"),
                            cycle_timeout=cycle_timeout, config_block_size=config_block_size, repeat=False)
    layer.trigger_now()
    horizon = trigger + cycle_timeout * (len(nodes) + 1)
    sim.run_until(horizon)
    rec = layer.agreements[0]
    if rec.failed or rec.commit_time is None:
        raise AgreementFailed(f"no quorum after {len(rec.cycles)} cycles")
    return chain.latest_config(), rec
