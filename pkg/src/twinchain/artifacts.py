"""Run-directory exports and re-import for file-based verification.

All files are written with fixed ordering and ``repr`` float formatting so
the same (scenario, seed) always yields byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .chain import (ChainPair, Configuration, ConfigurationBlock, TransactionBlock, VerificationReport,
                    verify_chains)
from .metrics import CENSOR_WINDOW_S, delay_samples, overhead, summarize_or_none
from .scenario import Scenario, dump_scenario, load_scenario
from .simulation import RunResult

CHAIN_FILE = "chain.tsv"
CONFIG_FILE = "config_blocks.jsonl"
DELAYS_FILE = "delays.tsv"
INTERVALS_FILE = "intervals.tsv"
SUMMARY_FILE = "summary.json"
TOPOLOGY_FILE = "topology.tsv"
MANIFEST_FILE = "manifest.json"
SCENARIO_FILE = "scenario.yaml"

CHAIN_COLUMNS = ("chain", "height", "hash", "prev_hash", "config_ref", "proposer", "size_mb",
                 "commit_time_s", "proof_count", "tx_root", "proposed_at_s")
DELAY_COLUMNS = ("cb_height", "trigger_s", "commit_s", "agreement_s", "node_id", "propagation_s", "update_s")
INTERVAL_COLUMNS = ("height", "interval_s", "is_switch")
SUMMARY_METRICS = ("agreement", "propagation", "update", "total", "agreement_plus_propagation")


class MissingArtifacts(FileNotFoundError):
    pass


class CorruptArtifacts(ValueError):
    """An export exists but cannot be decoded into blocks."""


def _f(x: float) -> str:
    return repr(float(x))


def _tsv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def chain_table(chain: ChainPair) -> str:
    rows = []
    for cb in chain.management_chain:
        rows.append(("management", cb.height, cb.hash.hex(), cb.prev_hash.hex(), "", cb.proposer, "",
                     _f(cb.commit_time), len(cb.proof), "", ""))
    for b in chain.primary_chain:
        rows.append(("primary", b.height, b.hash.hex(), b.prev_hash.hex(), b.config_ref.hex(), b.proposer,
                     _f(b.size), _f(b.commit_time), 0, b.tx_root.hex(), _f(b.proposed_at)))
    return _tsv(CHAIN_COLUMNS, rows)


def config_lines(chain: ChainPair) -> str:
    return "".join(json.dumps({"height": cb.height, "config": cb.config.to_json(),
                               "proof": [[a, d.hex()] for a, d in cb.proof]}, sort_keys=True) + "\n"
                   for cb in chain.management_chain)


def delays_table(result: RunResult, rank_by: str = "activation") -> str:
    s = result.scenario
    _, kept = delay_samples(result.delay_records, s.primary_nodes, s.duration_s, rank_by)
    rows = []
    for rec in kept:
        for nd in rec.nodes:
            rows.append((rec.cb_height, _f(rec.trigger_time), _f(rec.commit_time), _f(rec.agreement_delay),
                         nd.node_id, _f(rec.propagation_delay(nd)), _f(rec.update_delay(nd))))
    return _tsv(DELAY_COLUMNS, rows)


def intervals_table(result: RunResult) -> str:
    return _tsv(INTERVAL_COLUMNS, [(r.height, _f(r.interval), int(r.is_switch)) for r in result.intervals])


def _q(values):
    q = summarize_or_none(values)
    return None if q is None else q.as_dict()


def summary_document(result: RunResult, rank_by: str = "activation") -> dict:
    s = result.scenario
    samples, kept = delay_samples(result.delay_records, s.primary_nodes, s.duration_s, rank_by)
    sw = summarize_or_none([r.interval for r in result.intervals if r.is_switch])
    nm = summarize_or_none([r.interval for r in result.intervals if not r.is_switch])
    doc = {
        "seed": s.seed,
        "scenario_digest": s.digest(),
        "rank_by": rank_by,
        "delay_blocks": len(kept),
        "delays": {m: _q(getattr(samples, m)) for m in SUMMARY_METRICS},
        "intervals": {"normal": None if nm is None else nm.as_dict(),
                      "switch": None if sw is None else sw.as_dict()},
        "overhead": None,
    }
    if sw is not None and nm is not None:
        mean_d, med_d = overhead(sw, nm)
        doc["overhead"] = {"mean_s": mean_d, "median_s": med_d}
    return doc


def manifest_document(result: RunResult, rank_by: str = "activation") -> dict:
    s = result.scenario
    rep = result.verification
    return {
        "version": __version__,
        "seed": s.seed,
        "scenario_digest": s.digest(),
        "verification": {"ok": rep.ok, "violations": [str(v) for v in rep.violations]},
        "cb_count": result.committed_cbs,
        "tb_count": len(result.chain.primary_chain) - 1,
        "management_validators": sorted(result.chain.management_validators),
        "offline_mgmt_nodes": list(result.offline_ids),
        "failed_agreements": sum(a.failed for a in result.agreements),
        "rank_by": rank_by,
        "censor_window_s": CENSOR_WINDOW_S,
        "trace_digest": result.trace_digest,
        "event_count": result.event_count,
        "files": [CHAIN_FILE, CONFIG_FILE, DELAYS_FILE, INTERVALS_FILE, SUMMARY_FILE, TOPOLOGY_FILE,
                  SCENARIO_FILE],
    }


def write_run(result: RunResult, out_dir: str | Path, rank_by: str = "activation") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        CHAIN_FILE: chain_table(result.chain),
        CONFIG_FILE: config_lines(result.chain),
        DELAYS_FILE: delays_table(result, rank_by),
        INTERVALS_FILE: intervals_table(result),
        SUMMARY_FILE: json_text(summary_document(result, rank_by)),
        TOPOLOGY_FILE: result.topology.dump(),
        SCENARIO_FILE: dump_scenario(result.scenario),
        MANIFEST_FILE: json_text(manifest_document(result, rank_by)),
    }
    for name, text in files.items():
        (out / name).write_text(text)
    return out


@dataclass
class LoadedRun:
    chain: ChainPair
    manifest: dict


def _need(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifacts(f"missing {path}")
    return path


def load_chain(run_dir: str | Path) -> LoadedRun:
    """Rebuild the chain pair from a run directory's exports.

    Transaction payloads are not exported, so loaded transaction blocks carry
    only their ``tx_root``.
    """
    d = Path(run_dir)
    if not d.is_dir():
        raise MissingArtifacts(f"no run directory at {d}")
    paths = [_need(d / name) for name in (MANIFEST_FILE, CONFIG_FILE, CHAIN_FILE)]
    try:
        manifest = json.loads(paths[0].read_text())
        extra = {}
        for line in paths[1].read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                extra[int(rec["height"])] = rec
        mc, pc = _read_blocks(paths[2], extra)
        chain = ChainPair.from_blocks(mc, pc, manifest["management_validators"])
    except (KeyError, ValueError, TypeError) as e:
        raise CorruptArtifacts(f"{d}: {e}") from e
    return LoadedRun(chain, manifest)


def _read_blocks(path: Path, extra: dict) -> tuple[list[ConfigurationBlock], list[TransactionBlock]]:
    mc: list[ConfigurationBlock] = []
    pc: list[TransactionBlock] = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            h = int(row["height"])
            if row["chain"] == "management":
                rec = extra.get(h)
                if rec is None:
                    raise MissingArtifacts(f"{CONFIG_FILE} has no entry for CB {h}")
                mc.append(ConfigurationBlock(
                    bytes.fromhex(row["hash"]), bytes.fromhex(row["prev_hash"]), int(row["proposer"]),
                    Configuration(rec["config"]), h,
                    tuple((int(a), bytes.fromhex(x)) for a, x in rec["proof"]), float(row["commit_time_s"])))
            else:
                pc.append(TransactionBlock(
                    bytes.fromhex(row["hash"]), bytes.fromhex(row["prev_hash"]), bytes.fromhex(row["config_ref"]),
                    int(row["proposer"]), bytes.fromhex(row["tx_root"]), float(row["size_mb"]), h,
                    float(row["proposed_at_s"]), float(row["commit_time_s"])))
    return mc, pc


def load_scenario_of(run_dir: str | Path) -> Scenario:
    return load_scenario(_need(Path(run_dir) / SCENARIO_FILE))


def verify_run_dir(run_dir: str | Path) -> VerificationReport:
    return verify_chains(load_chain(run_dir).chain)
