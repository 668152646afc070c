import json

import pytest

from twinchain import artifacts
from twinchain.cli import main
from twinchain.scenario import InvalidValue
from twinchain.sweep import SweepSpec


@pytest.fixture(scope="module")
def short_scenario(tmp_path_factory):
    p = tmp_path_factory.mktemp("scn") / "short.yaml"
    p.write_text("duration_s: 200\n")
    return str(p)


@pytest.fixture(scope="module")
def run_dir(short_scenario, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "a"
    assert main(["run", "--scenario", short_scenario, "--seed", "42", "--out", str(out)]) == 0
    return out


def test_run_writes_all_artifacts(run_dir):
    for name in (artifacts.CHAIN_FILE, artifacts.CONFIG_FILE, artifacts.DELAYS_FILE, artifacts.INTERVALS_FILE,
                 artifacts.SUMMARY_FILE, artifacts.TOPOLOGY_FILE, artifacts.MANIFEST_FILE,
                 artifacts.SCENARIO_FILE):
        assert (run_dir / name).is_file()
    m = json.loads((run_dir / artifacts.MANIFEST_FILE).read_text())
    assert m["verification"]["ok"] and m["seed"] == 42 and m["cb_count"] >= 4
    assert m["rank_by"] == "activation"
    head = (run_dir / artifacts.DELAYS_FILE).read_text().splitlines()[0].split("\t")
    assert head == list(artifacts.DELAY_COLUMNS)


def test_rerun_is_byte_identical(run_dir, short_scenario, tmp_path):
    out = tmp_path / "b"
    assert main(["run", "--scenario", short_scenario, "--seed", "42", "--out", str(out)]) == 0
    for f in run_dir.iterdir():
        assert (out / f.name).read_bytes() == f.read_bytes(), f.name


def test_verify_untouched(run_dir, capsys):
    assert main(["verify", str(run_dir)]) == 0
    assert "ok:" in capsys.readouterr().out


def copy_run(src, dst):
    dst.mkdir()
    for f in src.iterdir():
        (dst / f.name).write_bytes(f.read_bytes())
    return dst


def flip_hash_digit(path, chain, height):
    lines = path.read_text().splitlines(keepends=True)
    for i, line in enumerate(lines):
        cols = line.split("\t")
        if cols[0] == chain and cols[1] == str(height):
            h = cols[2]
            cols[2] = ("0" if h[5] != "0" else "1").join([h[:5], h[6:]])
            lines[i] = "\t".join(cols)
    path.write_text("".join(lines))


@pytest.mark.parametrize("chain,height", [("primary", 3), ("management", 1), ("primary", 0)])
def test_verify_detects_edited_hash(run_dir, tmp_path, capsys, chain, height):
    d = copy_run(run_dir, tmp_path / "t")
    flip_hash_digit(d / artifacts.CHAIN_FILE, chain, height)
    assert main(["verify", str(d)]) == 1
    assert "violation" in capsys.readouterr().out


def test_verify_missing_chain_file(run_dir, tmp_path):
    d = copy_run(run_dir, tmp_path / "m")
    (d / artifacts.CHAIN_FILE).unlink()
    with pytest.raises(artifacts.MissingArtifacts):
        artifacts.verify_run_dir(d)
    assert main(["verify", str(d)]) == 2


def test_corrupt_export_is_a_verification_failure(run_dir, tmp_path):
    d = copy_run(run_dir, tmp_path / "c")
    p = d / artifacts.CHAIN_FILE
    p.write_text(p.read_text().replace("management\t1\t", "management\tx\t"))
    assert main(["verify", str(d)]) == 1


def test_loaded_chain_matches_export(run_dir):
    loaded = artifacts.load_chain(run_dir).chain
    assert artifacts.chain_table(loaded) == (run_dir / artifacts.CHAIN_FILE).read_text()


def test_zero_duration_run(tmp_path, capsys):
    scn = tmp_path / "z.yaml"
    scn.write_text("duration_s: 0\n")
    out = tmp_path / "z"
    assert main(["run", "--scenario", str(scn), "--out", str(out)]) == 0
    m = json.loads((out / artifacts.MANIFEST_FILE).read_text())
    assert m["cb_count"] == 0 and m["tb_count"] == 0 and m["verification"]["ok"]
    assert (out / artifacts.DELAYS_FILE).read_text().count("\n") == 1
    assert (out / artifacts.INTERVALS_FILE).read_text().count("\n") == 1


def test_summarize_run(run_dir, capsys):
    assert main(["summarize", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "agreement" in out and "normal_interval" in out


def test_sweep_table(short_scenario, tmp_path, capsys):
    out = tmp_path / "sw"
    rc = main(["sweep", "--scenario", short_scenario, "--param", "config_block_size_mb", "--values", "0.25,1",
               "--seeds", "0", "--out", str(out)])
    assert rc == 0
    rows = (out / "sweep.tsv").read_text().splitlines()
    assert rows[0].startswith("value\tmetric")
    assert len(rows) == 1 + 2 * 7
    assert (out / "config_block_size_mb=0.25" / "seed=0" / artifacts.MANIFEST_FILE).is_file()
    assert main(["summarize", str(out)]) == 0


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["run", "--out", str(tmp_path / "x"), "--seed", "notanint"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("bandwith_mean_mbps: 3\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "y")]) == 2
    assert main(["sweep", "--param", "mgmt_nodes", "--values", "", "--out", str(tmp_path / "s")]) == 2
    assert main(["sweep", "--param", "nonsense", "--values", "1", "--out", str(tmp_path / "s")]) == 2
    assert main(["summarize", str(tmp_path / "nothing")]) == 2


def test_sweep_spec_validates_values():
    with pytest.raises(InvalidValue):
        SweepSpec("mgmt_nodes", ())
    with pytest.raises(InvalidValue):
        SweepSpec("mgmt_nodes", (64,))
    assert SweepSpec("mgmt_nodes", ("4", "8")).values == (4, 8)
