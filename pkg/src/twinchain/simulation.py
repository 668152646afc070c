"""End-to-end run of a scenario.

A run has two phases on separate simulators.  The management phase runs
the agreement protocol and relays every committed configuration block over
the primary overlay, producing each node's arrival and append timeline.
The primary phase then runs transaction-block consensus rounds against
those timelines.  The management layer never reads primary-chain state, so
running it first gives the same timelines an interleaved run would.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

from . import kernels
from .chain import ChainPair, Configuration, VerificationReport, verify_chains
from .consensus import TimingModel
from .engine import RandomStream, Simulator
from .management import AgreementRecord, CbiSchedule, ChangingTwin, ConstantTwin, ManagementLayer, ManagementNode
from .metrics import DelayRecord, IntervalRecord, build_delay_records, classify_intervals
from .net import Network, Topology, build_topology
from .primary import Mempool, ObserverLayer, PrimaryLayer, PrimaryNodeState, RoundLog, Workload
from .scenario import InvalidValue, Scenario

log = logging.getLogger(__name__)

STREAM_LABELS = ("topology", "geography", "bandwidth", "cbi", "workload", "management",
                 "consensus:management", "consensus:primary", "retry")


@dataclass
class RunResult:
    scenario: Scenario
    chain: ChainPair
    topology: Topology
    management_ids: tuple[int, ...]
    offline_ids: tuple[int, ...]
    agreements: list[AgreementRecord]
    rounds: list[RoundLog]
    nodes: dict[int, PrimaryNodeState]
    delay_records: list[DelayRecord]
    intervals: list[IntervalRecord]
    verification: VerificationReport
    trace_digest: str
    event_count: int
    messages: int
    wall_time_s: float
    backend: str = field(default=kernels.BACKEND)

    @property
    def committed_cbs(self) -> int:
        return len(self.chain.management_chain) - 1


def initial_configuration(s: Scenario) -> Configuration:
    return Configuration(block_size_limit=s.tx_block_size_limit_mb, block_interval=s.block_interval_s,
                         validator_set=tuple(range(s.primary_nodes)))


def choose_management(s: Scenario, stream: RandomStream) -> tuple[tuple[int, ...], tuple[int, ...]]:
    ids = tuple(sorted(int(x) for x in stream.gen.choice(s.primary_nodes, s.mgmt_nodes, replace=False)))
    off = s.offline_mgmt_nodes
    if isinstance(off, int):
        offline = tuple(sorted(int(x) for x in stream.gen.choice(ids, off, replace=False))) if off else ()
    else:
        if any(x not in ids for x in off):
            raise InvalidValue(f"offline_mgmt_nodes {off} are not all management nodes {ids}")
        offline = tuple(sorted(off))
    return ids, offline


def run_simulation(s: Scenario, seed: int | None = None) -> RunResult:
    if seed is not None and seed != s.seed:
        s = s.replace(seed=seed)
    t_wall = time.perf_counter()
    streams = {label: RandomStream(s.seed, label) for label in STREAM_LABELS}
    topo = build_topology(s.primary_nodes, s.peers_per_node, streams["geography"], streams["topology"],
                          bandwidth_mean=s.bandwidth_mean_mbps, bandwidth_std=s.bandwidth_std_mbps,
                          base_latency=s.base_latency_s, signal_speed=s.signal_speed_km_s)
    mgmt_ids, offline = choose_management(s, streams["management"])
    config = initial_configuration(s)
    twin_cls = ChangingTwin if s.twin_policy == "changing" else ConstantTwin
    chain = ChainPair(config, mgmt_ids)
    genesis = chain.latest_config()
    nodes = {i: PrimaryNodeState.fresh(i, genesis) for i in topo.nodes}

    # management phase
    sim1 = Simulator()
    net = Network(sim1, topo, streams["bandwidth"])
    observers = ObserverLayer(net, nodes, chain.management_validators, block_size=s.config_block_size_mb,
                              request_size=s.vote_size_mb, retry_stream=streams["retry"])
    mgmt_nodes = [ManagementNode(i, twin_cls(config), i not in offline) for i in mgmt_ids]
    mgmt = ManagementLayer(sim1, chain, mgmt_nodes,
                           TimingModel(topo, streams["consensus:management"], s.vote_size_mb),
                           cbi=CbiSchedule(s.cbi_mean_s, s.cbi_std_s), cbi_stream=streams["cbi"],
                           cycle_timeout=s.cycle_timeout_s, config_block_size=s.config_block_size_mb,
                           on_commit=lambda cb: observers.originate(cb.proposer, cb))
    mgmt.start(0.0)
    n1 = sim1.run_until(s.duration_s)

    # primary phase
    sim2 = Simulator()
    mempool = Mempool(Workload(s.tx_rate_per_s, s.tx_size_mb), streams["workload"])
    primary = PrimaryLayer(sim2, chain, nodes, TimingModel(topo, streams["consensus:primary"], s.vote_size_mb),
                           mempool, round_timeout=s.primary_round_timeout_s, horizon=s.duration_s)
    primary.start()
    n2 = sim2.run_until(s.duration_s)

    triggers = {a.cb_height: a.trigger_time for a in mgmt.agreements if a.cb_height is not None}
    node_list = [nodes[i] for i in sorted(nodes)]
    records = build_delay_records(chain.management_chain, triggers, node_list, s.duration_s)
    intervals = classify_intervals(chain.primary_chain)
    report = verify_chains(chain)
    digest = hashlib.sha256(f"{sim1.trace_digest}|{sim2.trace_digest}".encode()).hexdigest()
    wall = time.perf_counter() - t_wall
    log.info("seed %d: %d CBs, %d TBs, %.1fs wall", s.seed, len(chain.management_chain) - 1,
             len(chain.primary_chain) - 1, wall)
    return RunResult(s, chain, topo, mgmt_ids, offline, mgmt.agreements, primary.rounds, nodes, records,
                     intervals, report, digest, n1 + n2, net.sent, wall)
