"""Command-line entry point: ``hskip <command> [options]``.

Exit status: 0 when every run is legal and its checks are clean, 1 when some
run is not, 2 for unusable configuration or input files, 3 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from hskip.core import BitStream, HSkipError
from hskip.experiments import (
    CSV_FIELDS, BadConfig, RunRecord, ScenarioConfig, parse_dist, run_scenario,
)
from hskip.oracle import GlobalView, ViewNode, is_legal

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
DEFAULT_FRACTION = {"crash": 0.6, "attack": 0.35}


class ConfigParse(HSkipError):
    pass


class ParseError(HSkipError):
    pass


def env_seed(default: int = 0) -> int:
    raw = os.environ.get("HSKIP_SEED")
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigParse(f"HSKIP_SEED is not an integer: {raw!r}") from None


# -- running and writing ----------------------------------------------------


def run_configs(configs: list[ScenarioConfig], trace_path=None) -> list[RunRecord]:
    trace = open(trace_path, "a") if trace_path else None
    try:
        records = []
        for cfg in configs:
            for seed in cfg.seeds():
                if trace is not None:
                    trace.write(f"# {cfg.scenario}-n{cfg.n}-s{seed}\n")
                records.append(run_scenario(cfg, seed, trace=trace))
    finally:
        if trace is not None:
            trace.close()
    records.sort(key=lambda r: (r.scenario, r.n, r.seed, r.run_id))
    return records


def write_rows(records: list[RunRecord], out) -> None:
    """Append rows to ``out`` (a path or ``None`` for stdout); new files get a header."""
    if out is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        writer.writerows(r.row() for r in records)
        return
    path = Path(out)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(CSV_FIELDS)
        writer.writerows(r.row() for r in records)


def report(records: list[RunRecord]) -> int:
    bad = 0
    for r in records:
        problems = list(r.detail.get("violations", []))
        if not r.legal:
            problems.append("not legal at the end of the run")
        if r.detail.get("error"):
            problems.append(r.detail["error"])
        for p in problems:
            print(f"{r.run_id}: {p}", file=sys.stderr)
        bad += bool(problems)
    if bad:
        print(f"{bad} of {len(records)} runs reported violations", file=sys.stderr)
    return EXIT_VIOLATION if bad else EXIT_OK


# -- campaign files -------------------------------------------------------------


def load_campaign(path, seed_override: int | None = None) -> tuple[list[ScenarioConfig], str | None]:
    """Parse and validate a campaign file before anything runs."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read campaign {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("scenarios"), list):
        raise ConfigParse(f"{path}: expected an object with a 'scenarios' list")
    global_seed = seed_override if seed_override is not None else doc.get("seed", env_seed())
    allowed = {"scenario", "n", "seed", "dist", "max_rounds", "repeats", "fraction", "mode"}
    configs = []
    for k, entry in enumerate(doc["scenarios"]):
        if not isinstance(entry, dict):
            raise ConfigParse(f"{path}: scenario #{k} is not an object")
        unknown = set(entry) - allowed
        if unknown:
            raise ConfigParse(f"{path}: scenario #{k}: unknown keys {sorted(unknown)}")
        kw = dict(entry)
        kw["seed"] = seed_override if seed_override is not None else kw.get("seed", global_seed)
        scen = kw.get("scenario", "converge")
        if scen in DEFAULT_FRACTION:
            kw.setdefault("fraction", DEFAULT_FRACTION[scen])
        try:
            configs.append(ScenarioConfig(**kw))
        except (TypeError, ValueError) as exc:
            raise ConfigParse(f"{path}: scenario #{k}: {exc}") from None
    out = doc.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigParse(f"{path}: 'out' must be a string")
    return configs, out


# -- world dumps --------------------------------------------------------------


def load_world_dump(path) -> tuple[GlobalView, set, dict]:
    """Read a world dump for ``oracle-check``.

    ``{"nodes": [{"id", "bw", "rs"?, "name"?}], "edges": [[v, w] | [v, w, cached_bw]]}``;
    endpoints may be ids or names, ``rs`` is a forced bit prefix.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        nodes, labels, by_name = [], {}, {}
        for entry in doc["nodes"]:
            nid = int(entry["id"])
            bw = float(entry["bw"])
            rs = entry.get("rs")
            stream = BitStream.with_prefix(rs, seed=nid) if rs else BitStream.for_node(nid)
            nodes.append(ViewNode(nid, stream, bw))
            if "name" in entry:
                labels[nid] = str(entry["name"])
                by_name[str(entry["name"])] = nid
        view = GlobalView(nodes, labels)

        def resolve(x):
            if isinstance(x, str) and x in by_name:
                return by_name[x]
            nid = int(x)
            if nid not in view:
                raise ParseError(f"{path}: edge endpoint {x!r} is not a node")
            return nid

        edges, cached = set(), {}
        for item in doc.get("edges", []):
            v, w = resolve(item[0]), resolve(item[1])
            edges.add((v, w))
            cached[(v, w)] = float(item[2]) if len(item) > 2 else view[w].bw
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed world dump: {exc!r}") from None
    return view, edges, cached


def oracle_check(path) -> int:
    view, edges, cached = load_world_dump(path)
    verdict = is_legal(view, edges, cached)
    for line in verdict.lines(view):
        print(line)
    return EXIT_OK if verdict.legal else EXIT_VIOLATION


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hskip", description="Bandwidth-ordered self-stabilizing skip graph simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=64, help="number of nodes (default 64)")
    common.add_argument("--seed", type=int, default=None, help="base seed (default: $HSKIP_SEED or 0)")
    common.add_argument("--repeats", type=int, default=1, help="runs with seeds seed, seed+1, ...")
    common.add_argument("--max-rounds", type=int, default=None, help="round cap (default 50*log2 n)")
    common.add_argument("--dist", default="pareto:1.5,1.0",
                        help="pareto:ALPHA,SCALE | uniform:LO,HI | empirical:FILE")
    common.add_argument("--out", default=None, help="append CSV rows here instead of printing")
    common.add_argument("--trace", default=None, help="append the message log to this file")

    helps = {
        "converge": "stabilize from a random tree",
        "join": "one join into a converged network",
        "leave": "one graceful leave from a converged network",
        "change": "one bandwidth change in a converged network",
        "crash": "crash a random fraction and join as many fresh nodes",
        "attack": "crash a block contiguous in bandwidth order and join as many fresh nodes",
        "flow": "route the all-pairs flow problem in a converged network",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name in DEFAULT_FRACTION:
            p.add_argument("--fraction", type=float, default=DEFAULT_FRACTION[name],
                           help=f"share of nodes removed (default {DEFAULT_FRACTION[name]})")
        if name == "flow":
            p.add_argument("--random-targets", action="store_true",
                           help="route to prefix matches of random strings instead")

    p = sub.add_parser("campaign", help="run every scenario in a JSON campaign file")
    p.add_argument("config", help="campaign file")
    p.add_argument("--seed", type=int, default=None, help="override every seed in the file")
    p.add_argument("--out", default=None, help="override the file's output path")
    p.add_argument("--trace", default=None)

    p = sub.add_parser("oracle-check", help="print the legality diff of a JSON world dump")
    p.add_argument("dump", help="world dump file")
    return parser


def _single(args) -> tuple[list[ScenarioConfig], str | None]:
    scenario = args.command
    if scenario == "flow" and args.random_targets:
        scenario = "random_target_flow"
    seed = args.seed if args.seed is not None else env_seed()
    try:
        cfg = ScenarioConfig(
            scenario=scenario, n=args.n, seed=seed, dist=parse_dist(args.dist),
            max_rounds=args.max_rounds, repeats=args.repeats,
            fraction=getattr(args, "fraction", 0.0),
            mode="contiguous" if scenario == "attack" else "random",
        )
    except ValueError as exc:
        raise ConfigParse(str(exc)) from None
    return [cfg], args.out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle-check":
            return oracle_check(args.dump)
        if args.command == "campaign":
            configs, out = load_campaign(args.config, args.seed)
            out = args.out or out
        else:
            configs, out = _single(args)
        records = run_configs(configs, args.trace)
        write_rows(records, out)
        return report(records)
    except (ConfigParse, ParseError, BadConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
