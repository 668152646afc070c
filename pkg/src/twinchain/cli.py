"""Command-line entry point: ``twinchain run|sweep|verify|summarize``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__, kernels
from .artifacts import (SUMMARY_FILE, CorruptArtifacts, MissingArtifacts, json_text, verify_run_dir,
                        write_run)
from .scenario import Scenario, ScenarioError, load_scenario
from .simulation import run_simulation
from .sweep import SWEEP_COLUMNS, SweepSpec, run_sweep, sweep_dir

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
SWEEP_TABLE = "sweep.tsv"


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _scenario(path: str | None) -> Scenario:
    return Scenario() if path is None else load_scenario(path)


def cmd_run(args) -> int:
    s = _scenario(args.scenario)
    if args.seed is not None:
        s = s.replace(seed=args.seed)
    result = run_simulation(s)
    out = write_run(result, args.out, args.rank_by)
    rep = result.verification
    print(f"seed {s.seed}: {result.committed_cbs} configuration blocks, "
          f"{len(result.chain.primary_chain) - 1} transaction blocks, "
          f"{result.wall_time_s:.1f}s wall ({result.backend} kernel) -> {out}")
    if not rep.ok:
        for v in rep.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(x) if isinstance(x, float) else str(x)


def cmd_sweep(args) -> int:
    base = _scenario(args.scenario)
    values = _csv_list(args.values)
    seeds = [int(x) for x in _csv_list(args.seeds)]
    spec = SweepSpec(args.param, tuple(values), len(seeds) or 1, base)
    out = Path(args.out)

    def save(value, result):
        write_run(result, sweep_dir(out, spec.parameter, value, result.scenario.seed), args.rank_by)

    res = run_sweep(spec, seeds, rank_by=args.rank_by, on_run=save)
    out.mkdir(parents=True, exist_ok=True)
    with (out / SWEEP_TABLE).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in res.rows():
            w.writerow([_fmt(x) for x in row])
    (out / "sweep.json").write_text(json_text({"parameter": spec.parameter, "values": list(spec.values),
                                              "seeds": list(seeds), "rank_by": args.rank_by,
                                              "failures": [list(f) for f in res.failures]}))
    _print_sweep(out / SWEEP_TABLE)
    if res.failures:
        for v, sd, msg in res.failures:
            print(f"verification failed for {spec.parameter}={v} seed {sd}: {msg}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(args) -> int:
    rep = verify_run_dir(args.run_dir)
    for v in rep.violations:
        print(f"violation: {v}")
    if rep.ok:
        print(f"ok: {rep.management_blocks} configuration blocks, {rep.primary_blocks} transaction blocks")
        return EXIT_OK
    print(f"{len(rep.violations)} violation(s)")
    return EXIT_VERIFY


def _print_sweep(path: Path) -> None:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    head, body = rows[0], rows[1:]
    print("\t".join(head))
    for r in body:
        print("\t".join(r[:3] + [f"{float(x):.4f}" if x else "" for x in r[3:]]))


def cmd_summarize(args) -> int:
    d = Path(args.run_dir)
    if (d / SWEEP_TABLE).is_file():
        _print_sweep(d / SWEEP_TABLE)
        return EXIT_OK
    path = d / SUMMARY_FILE
    if not path.is_file():
        raise MissingArtifacts(f"missing {path}")
    doc = json.loads(path.read_text())
    print(f"seed {doc['seed']}  scenario {doc['scenario_digest'][:12]}  ranked by {doc['rank_by']}")
    print("metric\tcount\tmin\tq1\tmedian\tq3\tmax\tmean")
    groups = list(doc["delays"].items()) + [(f"{k}_interval", v) for k, v in doc["intervals"].items()]
    for name, q in groups:
        if q is None:
            print(f"{name}\t0")
            continue
        print(name + "\t" + str(q["count"]) + "\t" +
              "\t".join(f"{q[k]:.4f}" for k in ("min", "q1", "median", "q3", "max", "mean")))
    if doc.get("overhead"):
        o = doc["overhead"]
        print(f"overhead: mean {o['mean_s']:+.4f}s, median {o['median_s']:+.4f}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twinchain", description="Simulate a primary chain managed by a "
                                "management chain, and analyse the runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND} kernel)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and export its artifacts")
    r.add_argument("--scenario", help="flat key: value scenario file (default: baseline)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--rank-by", choices=("activation", "arrival"), default="activation")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a list of values for one parameter")
    s.add_argument("--scenario")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds (default 0..4)")
    s.add_argument("--out", required=True)
    s.add_argument("--rank-by", choices=("activation", "arrival"), default="activation")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="re-verify the exported chains of a run directory")
    v.add_argument("run_dir")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("summarize", help="print the quantile summary of a run or sweep directory")
    m.add_argument("run_dir")
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, MissingArtifacts) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CorruptArtifacts as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
