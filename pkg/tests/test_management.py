import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinchain.chain import ChainPair, Configuration, ConfigurationBlock
from twinchain.consensus import TimingModel, select_proposer
from twinchain.engine import EventKind, RandomStream, Simulator
from twinchain.management import (AgreementFailed, CbiSchedule, ChangingTwin, ConstantTwin, ManagementLayer,
                                  ManagementNode, RejectingTwin, SystemSnapshot, run_agreement,
                                  schedule_cbi, validate_proposal)
from twinchain.net import build_topology

CONFIG = Configuration(block_size_limit=1.0, block_interval=0.1, validator_set=list(range(32)))
MGMT = tuple(range(0, 32, 2))


def setup(offline=(), twin=ConstantTwin, seed=0):
    topo = build_topology(32, 16, RandomStream(seed, "geography"), RandomStream(seed, "topology"))
    chain = ChainPair(CONFIG, MGMT)
    nodes = [ManagementNode(i, twin(CONFIG), i not in offline) for i in MGMT]
    return chain, nodes, TimingModel(topo, RandomStream(seed, "consensus:management"))


def test_schedule_cbi_zero_variance():
    sched = CbiSchedule(30.0, 0.0)
    assert schedule_cbi(100.0, sched, RandomStream(0, "cbi")) == 130.0
    assert sched.next_trigger == 130.0


def test_schedule_cbi_floor_and_mean():
    s = RandomStream(1, "cbi")
    gaps = [schedule_cbi(0.0, CbiSchedule(30.0, 5.0), s) for _ in range(1000)]
    assert abs(np.mean(gaps) - 30.0) < 0.5
    assert min(schedule_cbi(0.0, CbiSchedule(2.0, 50.0), s) for _ in range(500)) >= 1.0


def test_schedule_cbi_enqueues_trigger():
    sim = Simulator()
    seen = []
    sim.on(EventKind.CBI_TRIGGER, lambda ev: seen.append(sim.clock))
    schedule_cbi(0.0, CbiSchedule(30.0, 0.0), RandomStream(0, "cbi"), sim)
    sim.run_until(100.0)
    assert seen == [30.0]


def test_all_online_commits_in_cycle_zero():
    chain, nodes, timing = setup()
    h_l = chain.latest_config().hash
    cb, rec = run_agreement(10.0, nodes, chain, timing)
    assert len(rec.cycles) == 1
    assert cb.proposer == MGMT[select_proposer(h_l, 0, 16)]
    assert cb.height == 1 and chain.latest_config() is cb
    assert rec.commit_time > 10.0


def test_offline_proposer_rotates_to_next():
    chain, _, _ = setup()
    idx = select_proposer(chain.latest_config().hash, 0, 16)
    chain, nodes, timing = setup(offline={MGMT[idx]})
    cb, rec = run_agreement(0.0, nodes, chain, timing)
    assert len(rec.cycles) == 2 and not rec.cycles[0].proposer_online
    assert cb.proposer == MGMT[(idx + 1) % 16]
    assert rec.commit_time >= 5.0


def test_six_offline_agreement_fails_after_all_cycles():
    chain, nodes, timing = setup(offline=set(MGMT[10:]))
    with pytest.raises(AgreementFailed):
        run_agreement(0.0, nodes, chain, timing)
    assert len(chain.management_chain) == 1

    sim = Simulator()
    layer = ManagementLayer(sim, chain, nodes, timing, cbi=CbiSchedule(), cbi_stream=RandomStream(0, "cbi"),
                            repeat=False)
    layer.trigger_now()
    sim.run_until(1000.0)
    rec = layer.agreements[0]
    assert rec.failed and len(rec.cycles) == 16
    assert rec.cycles[-1].start + 5.0 - rec.trigger_time >= 16 * 5.0


def layer_for(chain, nodes, timing, repeat=False, **kw):
    sim = Simulator()
    layer = ManagementLayer(sim, chain, nodes, timing, cbi=CbiSchedule(**kw), cbi_stream=RandomStream(0, "cbi"),
                            repeat=repeat)
    return sim, layer


def test_timeout_increments_fc_and_commit_cancels_it():
    chain, _, _ = setup()
    idx = select_proposer(chain.latest_config().hash, 0, 16)
    chain, nodes, timing = setup(offline={MGMT[idx]})
    sim, layer = layer_for(chain, nodes, timing)
    layer.trigger_now()
    sim.run_until(4.9)
    assert layer.fc == 0
    sim.run_until(5.0)
    assert layer.fc == 1
    timeout_id = layer._timeout_id
    sim.run_until(9.0)
    assert layer.current.commit_time is not None
    assert not sim.is_pending(timeout_id)
    assert layer.fc == 0


def test_stale_timeout_is_ignored():
    chain, nodes, timing = setup()
    sim, layer = layer_for(chain, nodes, timing)
    layer.trigger_now()
    sim.run_until(1.0)
    layer.on_cycle_timeout(0)
    assert layer.fc == 0 and len(layer.current.cycles) == 1


def test_validate_proposal_examples():
    chain, nodes, _ = setup()
    tip = chain.latest_config()
    cb = ConfigurationBlock.create(tip, 0, CONFIG)
    assert validate_proposal(nodes[0], cb, 0, 0, chain)
    assert not validate_proposal(nodes[0], cb, 0, 1, chain)
    chain.append_config_block(cb.signed(MGMT[:11], 1.0))
    stale = ConfigurationBlock.create(tip, 0, CONFIG)
    assert not validate_proposal(nodes[0], stale, 0, 0, chain)
    other = CONFIG.with_updates(block_interval=0.2)
    assert not validate_proposal(nodes[0], ConfigurationBlock.create(chain.latest_config(), 0, other), 0, 0, chain)


def test_offline_node_never_votes():
    chain, nodes, _ = setup(offline={MGMT[0]})
    cb = ConfigurationBlock.create(chain.latest_config(), 0, CONFIG)
    assert not validate_proposal(nodes[0], cb, 0, 0, chain)


def test_twin_policies():
    snap = SystemSnapshot(0.0, ChainPair(CONFIG, MGMT).latest_config())
    assert ConstantTwin(CONFIG).propose(snap) == CONFIG
    changed = ChangingTwin(CONFIG).propose(snap)
    assert changed != CONFIG and changed["revision"] == 1
    assert ChangingTwin(CONFIG).validate(changed)
    assert not RejectingTwin(ConstantTwin(CONFIG)).validate(CONFIG)


def test_rejecting_twins_block_quorum():
    chain, nodes, timing = setup()
    for n in nodes[:6]:
        n.twin = RejectingTwin(n.twin)
    with pytest.raises(AgreementFailed):
        run_agreement(0.0, nodes, chain, timing)


@settings(max_examples=8)
@given(st.integers(0, 1000), st.integers(0, 5))
def test_cbi_minimum_interval_and_fc_reset(seed, n_off):
    chain, nodes, timing = setup(offline=set(MGMT[:n_off]), seed=seed)
    sim, layer = layer_for(chain, nodes, timing, repeat=True, mean=30.0, std=5.0)
    layer.start(0.0)
    sim.run_until(600.0)
    prev = 0.0
    commits = [a for a in layer.agreements if a.commit_time is not None]
    assert commits
    for a in commits:
        assert a.trigger_time - a.reference_time == pytest.approx(a.cbi_sample)
        assert a.commit_time - prev >= a.cbi_sample
        assert a.cycles[-1].committed and a.cycles[-1].proposer_online
        prev = a.commit_time
    heights = [cb.height for cb in chain.management_chain]
    assert heights == list(range(len(heights)))
