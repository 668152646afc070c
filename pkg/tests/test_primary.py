import dataclasses

import numpy as np
import pytest

from twinchain.chain import ChainPair, Configuration, ConfigurationBlock, TransactionBlock
from twinchain.engine import RandomStream, Simulator
from twinchain.net import Network, build_topology
from twinchain.primary import (Mempool, ObserverLayer, PrimaryNodeState, UnknownRange, Workload,
                               apply_pending_configs, block_capacity, enter_round, exit_round,
                               on_receive_config_block, produce_block, response_size, serve_block_request,
                               validate_tx_block)
from twinchain.scenario import Scenario

MGMT = frozenset(range(16))
CONFIG = Configuration(block_size_limit=1.0, block_interval=0.1, validator_set=list(range(32)))


def make_chain(height, attestors=tuple(range(11))):
    chain = ChainPair(CONFIG, MGMT)
    for h in range(1, height + 1):
        cb = ConfigurationBlock.create(chain.latest_config(), 0, CONFIG.with_updates(revision=h))
        chain.append_config_block(cb.signed(attestors, float(h)))
    return chain


def node_at(chain, tip):
    nd = PrimaryNodeState.fresh(7, chain.management_chain[0])
    for cb in chain.management_chain[1:tip + 1]:
        nd.append(cb, cb.commit_time)
    return nd


def receive(nd, cb, sender=3, now=100.0, peers=(1, 2, 3, 4)):
    return on_receive_config_block(nd, cb, sender, now, peers, MGMT, block_size=0.25, request_size=0.001)


def test_next_block_appended_and_forwarded_once():
    chain = make_chain(5)
    nd = node_at(chain, 4)
    out = receive(nd, chain.management_chain[5])
    assert nd.tip_height == 5 and nd.first_arrival[5] == 100.0
    assert sorted(m.dst for m in out) == [1, 2, 4]
    assert all(m.payload[0] == "cb" for m in out)
    assert receive(nd, chain.management_chain[5]) == []


def test_future_block_buffered_and_gap_requested():
    chain = make_chain(7)
    nd = node_at(chain, 4)
    out = receive(nd, chain.management_chain[7])
    reqs = [m for m in out if m.payload[0] == "req"]
    assert len(reqs) == 1 and reqs[0].dst == 3 and reqs[0].payload[1:] == (5, 6)
    assert nd.tip_height == 4 and 7 in nd.pending_blocks
    # the response fills the gap and drains the buffer
    for cb in chain.management_chain[5:7]:
        receive(nd, cb, now=101.0)
    assert nd.tip_height == 7 and not nd.pending_blocks
    assert nd.append_times[-3:] == [101.0, 101.0, 101.0]


def test_under_attested_block_dropped():
    chain = make_chain(5)
    nd = node_at(chain, 4)
    good = chain.management_chain[5]
    bad = dataclasses.replace(good, proof=good.proof[:10])
    assert receive(nd, bad) == []
    assert nd.tip_height == 4 and 5 not in nd.first_arrival


def test_tampered_block_dropped():
    chain = make_chain(5)
    nd = node_at(chain, 4)
    bad = dataclasses.replace(chain.management_chain[5], config=CONFIG)
    assert receive(nd, bad) == []


def test_serve_block_request_examples():
    chain = make_chain(8)
    nd = node_at(chain, 8)
    blocks = serve_block_request(nd, 5, 6)
    assert [b.height for b in blocks] == [5, 6]
    assert response_size(blocks, 0.25) == 0.5
    with pytest.raises(UnknownRange):
        serve_block_request(nd, 9, 9)
    assert serve_block_request(nd, 6, 5) == []


def test_apply_pending_single_block_at_round_end():
    chain = make_chain(1)
    nd = node_at(chain, 0)
    enter_round(nd, 0.0)
    nd.append(chain.management_chain[1], 2.0)
    nd.first_arrival[1] = 2.0
    with pytest.raises(RuntimeError):
        apply_pending_configs(nd, 2.0)
    exit_round(nd, 2.5)
    assert nd.activations == [(1, 2.5)]
    assert nd.active_config_height == 1
    assert nd.activations[0][1] - nd.first_arrival[1] == pytest.approx(0.5)


def test_apply_pending_jumps_to_latest():
    chain = make_chain(6)
    nd = node_at(chain, 4)
    nd.active_config_height = 4
    nd.visible = 5
    nd.append(chain.management_chain[5], 10.0)
    nd.append(chain.management_chain[6], 10.5)
    assert apply_pending_configs(nd, 11.0) == [(5, 11.0), (6, 11.0)]
    assert nd.active_config_height == 6
    assert apply_pending_configs(nd, 12.0) == []


def test_apply_ignores_blocks_appended_later():
    chain = make_chain(1)
    nd = node_at(chain, 0)
    nd.append(chain.management_chain[1], 5.0)
    assert apply_pending_configs(nd, 4.0) == []
    assert apply_pending_configs(nd, 5.0) == [(1, 5.0)]


def test_validate_tx_block_examples():
    chain = make_chain(1)
    nd = node_at(chain, 1)
    nd.active_config_height = 1
    ok = TransactionBlock.create(chain.primary_chain[-1], chain.management_chain[1].hash, 0)
    stale = TransactionBlock.create(chain.primary_chain[-1], chain.management_chain[0].hash, 0)
    assert validate_tx_block(nd, ok)
    assert not validate_tx_block(nd, stale)
    big = dataclasses.replace(ok, size=1.5)
    assert not validate_tx_block(nd, big)


def pool_with(n):
    m = Mempool(Workload(0.0, 0.002), RandomStream(0, "workload"))
    m.add(np.arange(n), np.zeros(n))
    return m


def test_produce_block_fill_rules():
    chain = make_chain(0)
    nd = node_at(chain, 0)
    tip = chain.primary_chain[-1]
    empty = produce_block(nd, pool_with(0), tip)
    assert empty.size == pytest.approx(0.001) and len(empty.transactions) == 0
    pool = pool_with(600)
    full = produce_block(nd, pool, tip)
    # greedy oracle: largest k with 0.001 + 0.002 k <= 1
    k = max(k for k in range(0, 1000) if 0.001 + 0.002 * k <= 1.0 + 1e-12)
    assert len(full.transactions) == k == 499
    assert full.size <= 1.0
    pool.remove(len(full.transactions))
    assert len(pool) == 101
    small = produce_block(nd, pool_with(30), tip)
    assert len(small.transactions) == 30 and small.config_ref == chain.management_chain[0].hash


def test_block_capacity_matches_oracle():
    for limit in (0.001, 0.0015, 0.5, 1.0, 2.0):
        for size in (0.001, 0.002, 0.003):
            k = block_capacity(limit, size)
            assert 0.001 + k * size <= limit + 1e-12
            assert 0.001 + (k + 1) * size > limit - 1e-12 or limit < 0.001


def test_mempool_poisson_rate_and_fifo():
    m = Mempool(Workload(500.0, 0.002), RandomStream(1, "workload"))
    m.advance(100.0)
    assert abs(len(m) - 50_000) < 5 * np.sqrt(50_000)
    b = m.peek(10)
    assert list(b.ids) == list(range(10))
    assert np.all(np.diff(b.arrivals) >= 0)
    m.remove(10)
    assert m.peek(1).ids[0] == 10


def test_workload_validated():
    with pytest.raises(ValueError):
        Workload(-1.0, 0.002)


def test_observer_gap_fill_over_network():
    s = Scenario()
    topo = build_topology(32, 16, RandomStream(0, "geography"), RandomStream(0, "topology"))
    chain = make_chain(2)
    nodes = {i: PrimaryNodeState.fresh(i, chain.management_chain[0]) for i in topo.nodes}
    sim = Simulator()
    obs = ObserverLayer(Network(sim, topo, RandomStream(0, "bandwidth")), nodes, MGMT,
                        block_size=s.config_block_size_mb, request_size=s.vote_size_mb,
                        retry_stream=RandomStream(0, "retry"))
    nodes[0].append(chain.management_chain[1], 0.0)  # only node 0 knows CB 1
    obs.originate(0, chain.management_chain[2])
    sim.run_until(60.0)
    assert obs.requests > 0
    for nd in nodes.values():
        assert nd.tip_height == 2
        assert [b.hash for b in nd.local_mgmt_chain] == [b.hash for b in chain.management_chain]
        assert nd.append_times == sorted(nd.append_times)


def test_simulated_nodes_follow_authoritative_chain(short_run):
    mc = [b.hash for b in short_run.chain.management_chain]
    for nd in short_run.nodes.values():
        local = [b.hash for b in nd.local_mgmt_chain]
        assert local == mc[:len(local)]
        assert nd.active_config_height <= nd.tip_height


def test_activations_only_at_round_exits(short_run):
    exits = {i: set() for i in short_run.nodes}
    for r in short_run.rounds:
        for v, t in zip(r.validators, r.exits.tolist()):
            exits[v].add(t)
    for nd in short_run.nodes.values():
        for _, t in nd.activations:
            assert t in exits[nd.id]


def test_update_delays_non_negative(short_run):
    for nd in short_run.nodes.values():
        for h, t in nd.activations:
            assert t >= nd.first_arrival[h]


def test_switch_blocks_follow_real_reconfiguration(short_run):
    pc = short_run.chain.primary_chain
    by_hash = {cb.hash: cb for cb in short_run.chain.management_chain}
    for a, b in zip(pc, pc[1:]):
        if a.config_ref != b.config_ref:
            ra, rb = by_hash[a.config_ref], by_hash[b.config_ref]
            assert rb.height > ra.height
            assert ra.commit_time <= rb.commit_time <= b.proposed_at
