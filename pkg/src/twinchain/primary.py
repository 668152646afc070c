"""Primary-chain nodes: observers of the management chain and transaction-block producers.

The module has two halves.  :class:`ObserverLayer` relays configuration
blocks over the peer-to-peer overlay, fetches missing blocks and records, per
node, when each configuration block first arrived and when it was appended
to the node's gap-free local copy.  :class:`PrimaryLayer` then drives the
primary chain's consensus rounds; a node picks up newly appended
configuration blocks only between rounds.  Rounds run back to back: a node
enters its next round the moment it leaves the previous one, so waiting for
the next proposal counts as part of that round.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import (HEADER_SIZE_MB, ChainPair, ConfigurationBlock, TransactionBlock, TxBatch,
                    proof_is_valid)
from .consensus import RoundState, TimingModel, quorum_size, run_round, select_proposer
from .engine import EventKind, RandomStream, SimEvent, Simulator
from .net import NetMessage, Network


class UnknownRange(LookupError):
    pass


@dataclass
class PrimaryNodeState:
    id: int
    local_mgmt_chain: list[ConfigurationBlock]
    append_times: list[float] = field(default_factory=lambda: [0.0])
    first_arrival: dict[int, float] = field(default_factory=dict)
    pending_blocks: dict[int, ConfigurationBlock] = field(default_factory=dict)
    active_config_height: int = 0
    in_round: bool = False
    round_enter: float = 0.0
    last_exit: float = 0.0
    activations: list[tuple[int, float]] = field(default_factory=list)
    # Replay cursor: how many local blocks are visible at the node's current time.
    visible: int = 1

    @classmethod
    def fresh(cls, node_id: int, genesis: ConfigurationBlock) -> "PrimaryNodeState":
        return cls(node_id, [genesis])

    @property
    def tip_height(self) -> int:
        return self.local_mgmt_chain[-1].height

    @property
    def active_block(self) -> ConfigurationBlock:
        return self.local_mgmt_chain[self.active_config_height]

    def append(self, cb: ConfigurationBlock, now: float) -> None:
        if cb.height != self.tip_height + 1 or cb.prev_hash != self.local_mgmt_chain[-1].hash:
            raise ValueError(f"node {self.id}: CB {cb.height} does not extend local tip {self.tip_height}")
        self.local_mgmt_chain.append(cb)
        self.append_times.append(now)


def on_receive_config_block(node: PrimaryNodeState, cb: ConfigurationBlock, sender: int | None, now: float,
                            peers: Sequence[int], validators: frozenset, *, block_size: float,
                            request_size: float, forward: bool = True) -> list[NetMessage]:
    """Handle a configuration block; returns the messages the node sends in response."""
    if not proof_is_valid(cb, validators):
        return []
    h = cb.height
    if h <= node.tip_height or h in node.pending_blocks:
        return []
    node.first_arrival.setdefault(h, now)
    out: list[NetMessage] = []
    if forward:
        out.extend(NetMessage(node.id, p, block_size, ("cb", cb)) for p in peers if p != sender)
    if h == node.tip_height + 1:
        if cb.prev_hash != node.local_mgmt_chain[-1].hash:
            return out
        node.append(cb, now)
        while node.tip_height + 1 in node.pending_blocks:
            nxt = node.pending_blocks.pop(node.tip_height + 1)
            if nxt.prev_hash != node.local_mgmt_chain[-1].hash:
                break
            node.append(nxt, now)
    else:
        node.pending_blocks[h] = cb
        missing = missing_range(node)
        if missing is not None and sender is not None:
            out.append(NetMessage(node.id, sender, request_size, ("req", missing[0], missing[1])))
    return out


def missing_range(node: PrimaryNodeState) -> tuple[int, int] | None:
    if not node.pending_blocks:
        return None
    lo = node.tip_height + 1
    hi = min(node.pending_blocks) - 1
    return (lo, hi) if lo <= hi else None


def serve_block_request(node: PrimaryNodeState, lo: int, hi: int) -> list[ConfigurationBlock]:
    if hi < lo:
        return []
    if hi > node.tip_height or lo < 0:
        raise UnknownRange(f"node {node.id} holds heights 0..{node.tip_height}, asked {lo}..{hi}")
    return node.local_mgmt_chain[lo:hi + 1]


def response_size(blocks: Sequence[ConfigurationBlock], block_size: float) -> float:
    return len(blocks) * block_size


class ObserverLayer:
    """Event-driven relay of configuration blocks between primary nodes."""

    def __init__(self, net: Network, nodes: dict[int, PrimaryNodeState], validators: frozenset,
                 *, block_size: float, request_size: float, retry_stream: RandomStream):
        self.net = net
        self.sim = net.sim
        self.nodes = nodes
        self.validators = validators
        self.block_size = block_size
        self.request_size = request_size
        self.retry_stream = retry_stream
        self.requests = 0
        for nid in nodes:
            net.attach(nid, self._receiver(nid))

    def originate(self, node_id: int, cb: ConfigurationBlock) -> None:
        self._handle_cb(self.nodes[node_id], cb, None)

    def _send_all(self, msgs: list[NetMessage]) -> None:
        for m in msgs:
            self.net.send(m)
            if m.payload[0] == "req":
                self.requests += 1

    def _handle_cb(self, node: PrimaryNodeState, cb: ConfigurationBlock, sender: int | None,
                   forward: bool = True) -> None:
        msgs = on_receive_config_block(node, cb, sender, self.sim.clock, self.net.topology.peers(node.id),
                                       self.validators, block_size=self.block_size,
                                       request_size=self.request_size, forward=forward)
        self._send_all(msgs)

    def _receiver(self, nid: int):
        node = self.nodes[nid]

        def receive(msg: NetMessage) -> None:
            kind = msg.payload[0]
            if kind == "cb":
                self._handle_cb(node, msg.payload[1], msg.src)
            elif kind == "req":
                _, lo, hi = msg.payload
                try:
                    blocks = serve_block_request(node, lo, hi)
                except UnknownRange:
                    self.net.send(NetMessage(nid, msg.src, self.request_size, ("unknown", lo, hi)))
                    return
                if blocks:
                    self.net.send(NetMessage(nid, msg.src, response_size(blocks, self.block_size),
                                             ("resp", tuple(blocks))))
            elif kind == "resp":
                for cb in msg.payload[1]:
                    self._handle_cb(node, cb, msg.src, forward=False)
            elif kind == "unknown":
                missing = missing_range(node)
                if missing is None:
                    return
                peers = self.net.topology.peers(nid)
                target = peers[int(self.retry_stream.gen.integers(len(peers)))]
                self._send_all([NetMessage(nid, target, self.request_size, ("req", missing[0], missing[1]))])
        return receive


# --- between-round activation -------------------------------------------------

def apply_pending_configs(node: PrimaryNodeState, now: float) -> list[tuple[int, float]]:
    """Activate the latest locally appended configuration block, if newer.

    Every block skipped over is recorded as activated at ``now`` too.
    """
    if node.in_round:
        raise RuntimeError(f"node {node.id}: reconfiguration attempted inside a round")
    node.visible = max(node.visible, bisect.bisect_right(node.append_times, now))
    latest = node.visible - 1
    if latest <= node.active_config_height:
        return []
    records = [(h, now) for h in range(node.active_config_height + 1, latest + 1)]
    node.active_config_height = latest
    node.activations.extend(records)
    return records


def enter_round(node: PrimaryNodeState, t: float) -> None:
    node.in_round = True
    node.round_enter = t


def exit_round(node: PrimaryNodeState, t: float) -> None:
    node.in_round = False
    node.last_exit = t
    apply_pending_configs(node, t)


def validate_tx_block(node: PrimaryNodeState, b: TransactionBlock) -> bool:
    active = node.active_block
    return b.config_ref == active.hash and b.size <= active.config.block_size_limit


# --- workload -------------------------------------------------------------------

@dataclass(frozen=True)
class Workload:
    arrival_rate: float = 500.0
    tx_size: float = 0.002

    def __post_init__(self):
        if self.arrival_rate < 0 or not self.tx_size > 0:
            raise ValueError("arrival_rate must be >= 0 and tx_size > 0")


class Mempool:
    """FIFO pool fed by a Poisson arrival process, generated lazily up to the requested time."""

    def __init__(self, workload: Workload, stream: RandomStream):
        self.workload = workload
        self.stream = stream
        self._chunks: deque[tuple[np.ndarray, np.ndarray]] = deque()
        self._size = 0
        self.next_id = 0
        self.generated_until = 0.0

    def __len__(self) -> int:
        return self._size

    def advance(self, t: float) -> None:
        if t <= self.generated_until:
            return
        span = t - self.generated_until
        k = int(self.stream.gen.poisson(self.workload.arrival_rate * span))
        if k:
            times = np.sort(self.stream.gen.uniform(self.generated_until, t, k))
            ids = np.arange(self.next_id, self.next_id + k, dtype=np.int64)
            self.next_id += k
            self._chunks.append((ids, times))
            self._size += k
        self.generated_until = t

    def add(self, ids: np.ndarray, arrivals: np.ndarray) -> None:
        self._chunks.append((np.asarray(ids, np.int64), np.asarray(arrivals, np.float64)))
        self._size += len(ids)

    def peek(self, count: int) -> TxBatch:
        ids, arr, need = [], [], min(count, self._size)
        for ci, ca in self._chunks:
            if need <= 0:
                break
            ids.append(ci[:need])
            arr.append(ca[:need])
            need -= len(ci[:need])
        if not ids:
            return TxBatch(np.empty(0, np.int64), np.empty(0), self.workload.tx_size)
        return TxBatch(np.concatenate(ids), np.concatenate(arr), self.workload.tx_size)

    def remove(self, count: int) -> None:
        count = min(count, self._size)
        self._size -= count
        while count:
            ci, ca = self._chunks[0]
            if len(ci) <= count:
                self._chunks.popleft()
                count -= len(ci)
            else:
                self._chunks[0] = (ci[count:], ca[count:])
                count = 0


def block_capacity(limit: float, tx_size: float, header: float = HEADER_SIZE_MB) -> int:
    """Largest transaction count whose block (header included) fits within ``limit``."""
    if limit < header:
        return 0
    n = int((limit - header) / tx_size)
    while header + (n + 1) * tx_size <= limit:
        n += 1
    while n > 0 and header + n * tx_size > limit:
        n -= 1
    return n


def produce_block(node: PrimaryNodeState, mempool: Mempool, tip: TransactionBlock,
                  header: float = HEADER_SIZE_MB, now: float = 0.0) -> TransactionBlock:
    """Greedy-fill a block from the mempool under the node's active configuration.

    Transactions stay in the pool until the caller removes them after commit.
    """
    active = node.active_block
    cap = block_capacity(active.config.block_size_limit, mempool.workload.tx_size, header)
    batch = mempool.peek(cap)
    return TransactionBlock.create(tip, active.hash, node.id, batch, header, now)


# --- primary consensus driver ---------------------------------------------------

@dataclass
class RoundLog:
    height: int
    attempt: int
    proposer: int
    start: float
    committed: bool
    commit_time: float
    config_height: int
    validators: tuple[int, ...]
    enters: np.ndarray
    exits: np.ndarray
    accepted: int


class PrimaryLayer:
    """Runs primary-chain rounds back to back on a simulator.

    Each round is timed in one step when its proposal is due; every node's
    round entry and exit are applied to its state in its own time order.
    """

    def __init__(self, sim: Simulator, chain: ChainPair, nodes: dict[int, PrimaryNodeState],
                 timing: TimingModel, mempool: Mempool, *, round_timeout: float = 1.0,
                 horizon: float = 3600.0, header: float = HEADER_SIZE_MB):
        self.sim = sim
        self.chain = chain
        self.nodes = nodes
        self.timing = timing
        self.mempool = mempool
        self.round_timeout = round_timeout
        self.horizon = horizon
        self.header = header
        self.rounds: list[RoundLog] = []
        self.commits: list[tuple[str, int, bytes]] = []
        sim.on(EventKind.BLOCK_PROPOSAL_DUE, self._on_due)

    def _config_of(self, b: TransactionBlock):
        return self.chain.config_block(b.config_ref).config

    def start(self) -> None:
        for nd in self.nodes.values():
            enter_round(nd, self.sim.clock)
        tip = self.chain.primary_chain[-1]
        t = tip.commit_time + self._config_of(tip).block_interval
        if t <= self.horizon:
            self.sim.schedule(SimEvent(t, EventKind.BLOCK_PROPOSAL_DUE, payload=0))

    def _proposer(self, tip: TransactionBlock, attempt: int) -> tuple[int, tuple[int, ...]]:
        validators = tuple(sorted(self._config_of(tip).validator_set))
        return validators[select_proposer(tip.hash, attempt, len(validators))], validators

    def _on_due(self, ev: SimEvent) -> None:
        attempt = ev.payload
        t0 = self.sim.clock
        tip = self.chain.primary_chain[-1]
        proposer, validators = self._proposer(tip, attempt)
        nodes = [self.nodes[v] for v in validators]
        pnode = self.nodes[proposer]
        self.mempool.advance(t0)
        block = produce_block(pnode, self.mempool, tip, self.header, t0)
        ready = [nd.last_exit for nd in nodes]

        def accept(i: int, t: float) -> bool:
            return validate_tx_block(nodes[i], block)

        state = RoundState("primary", proposer, list(validators), block.hash, cycle=attempt)
        latency = self.timing.topology.latency_matrix(list(validators))
        out = run_round(state, t0, block.size, self.timing, accept, ready_at=ready, latency=latency)
        enters = out.t_proc
        if out.committed:
            exits = out.exit_times()
            commit_time = out.proposer_commit_time
        else:
            exits = np.maximum(enters, t0 + self.round_timeout)
            commit_time = np.inf
        for nd, t in zip(nodes, exits):
            exit_round(nd, float(t))
            enter_round(nd, float(t))
        self.rounds.append(RoundLog(block.height, attempt, proposer, t0, out.committed, commit_time,
                                    pnode.active_config_height, validators, enters, exits,
                                    int(out.accepted.sum())))
        self.sim.trace(f"round|{block.height}|{attempt}|{proposer}|{int(out.committed)}|{commit_time!r}")
        if out.committed:
            if commit_time > self.horizon:
                return
            committed = block.committed(commit_time)
            self.chain.append_tx_block(committed)
            self.commits.append(("primary", committed.height, committed.hash))
            self.mempool.remove(len(block.transactions))
            tip, attempt = committed, 0
        else:
            attempt += 1
        nxt, _ = self._proposer(tip, attempt)
        nnode = self.nodes[nxt]
        interval = nnode.active_block.config.block_interval
        due = max(nnode.last_exit, tip.commit_time + interval, self.sim.clock)
        if due <= self.horizon:
            self.sim.schedule(SimEvent(due, EventKind.BLOCK_PROPOSAL_DUE, payload=attempt))
