import pytest

from twinchain.scenario import (InvalidValue, ParseError, Scenario, UnknownKey, dump_scenario, load_scenario,
                                scenario_from_mapping)


def test_empty_file_is_baseline(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("")
    s = load_scenario(p)
    assert s == Scenario()
    assert (s.primary_nodes, s.peers_per_node, s.mgmt_nodes) == (32, 16, 16)
    assert (s.bandwidth_mean_mbps, s.bandwidth_std_mbps) == (10.0, 0.5)
    assert (s.tx_block_size_limit_mb, s.block_interval_s, s.config_block_size_mb) == (1.0, 0.1, 0.25)
    assert (s.cbi_mean_s, s.cbi_std_s, s.duration_s) == (30.0, 5.0, 3600.0)


def test_single_override(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("config_block_size_mb: 0.5\n")
    assert load_scenario(p) == Scenario(config_block_size_mb=0.5)


def test_unknown_key(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("bandwith_mean_mbps: 5\n")
    with pytest.raises(UnknownKey):
        load_scenario(p)


def test_parse_errors(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("a: [\n")
    with pytest.raises(ParseError):
        load_scenario(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ParseError):
        load_scenario(p)
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "missing.yaml")


@pytest.mark.parametrize("change", [dict(mgmt_nodes=40), dict(block_interval_s=0), dict(cbi_std_s=-1),
                                    dict(twin_policy="odd"), dict(offline_mgmt_nodes=17),
                                    dict(primary_nodes=2.5)])
def test_invalid_values(change):
    with pytest.raises(InvalidValue):
        Scenario(**change)


def test_offline_list_and_round_trip(tmp_path):
    s = scenario_from_mapping({"offline_mgmt_nodes": [3, 5], "seed": 9})
    assert s.offline_mgmt_nodes == (3, 5)
    p = tmp_path / "s.yaml"
    p.write_text(dump_scenario(s))
    assert load_scenario(p) == s


def test_digest_tracks_every_field():
    base = Scenario()
    assert base.digest() == Scenario().digest()
    changed = {f: getattr(base, f) for f in base.to_dict()}
    for name, v in changed.items():
        if name in ("twin_policy", "offline_mgmt_nodes"):
            other = base.replace(**{name: "changing" if name == "twin_policy" else 1})
        elif isinstance(v, float):
            other = base.replace(**{name: v + 1.0})
        else:
            other = base.replace(**{name: v + 1 if name != "mgmt_nodes" else v - 1})
        assert other.digest() != base.digest(), name
