"""Command line interface: gen / sort / verify / experiment.

A persisted run lives in a directory holding one binary image per (PE,
disk) plus ``manifest.json`` describing the machine, the input fingerprint,
and — after sorting — the output layout.  The process exit code is 0 iff
verification passed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from .core import MachineConfig, load_config, validate_config
from .harness import (
    INPUT_KINDS,
    InputSpec,
    generate_input,
    report_stats,
    run_experiment_redistribution,
    run_sort,
    verify_output,
)
from .vdisk import Cluster, OutputLayout

MANIFEST = "manifest.json"


def _add_config_flags(sub: argparse.ArgumentParser, kinds: bool = True) -> None:
    sub.add_argument("--config", help="machine config file (key=value lines)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--randomize", choices=("on", "off"),
                     help="override the config randomize flag")
    if kinds:
        sub.add_argument("--kind", choices=INPUT_KINDS, default="random",
                         help="input kind (default: random)")


def _load_cfg(args) -> MachineConfig:
    if not args.config:
        raise SystemExit("error: --config is required here")
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.randomize is not None:
        overrides["randomize"] = args.randomize == "on"
    return load_config(args.config, overrides)


def _write_manifest(directory: str, payload: dict) -> None:
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_manifest(directory: str) -> dict:
    with open(os.path.join(directory, MANIFEST), "r", encoding="utf-8") as fh:
        return json.load(fh)


def _manifest_cfg(manifest: dict) -> MachineConfig:
    return MachineConfig(**manifest["cfg"])


def _persist(cluster: Cluster, directory: str, payload: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    cluster.save_images(directory)
    _write_manifest(directory, payload)


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    bad = validate_config(cfg)
    if bad:
        raise SystemExit("error: bad config: " + ", ".join(bad))
    cluster = Cluster(cfg)
    gen = generate_input(cluster, InputSpec(args.kind, cfg.N, cfg.seed))
    _persist(cluster, args.persist, {
        "stage": "input",
        "cfg": asdict(cfg),
        "kind": args.kind,
        "count": gen.count,
        "total": gen.total,
        "pe_blocks": gen.pe_blocks,
    })
    print(f"generated {gen.count} elements ({args.kind}) into {args.persist}")
    return 0


def cmd_sort(args) -> int:
    manifest = None
    if args.persist and os.path.exists(os.path.join(args.persist, MANIFEST)):
        manifest = _read_manifest(args.persist)
        if manifest.get("stage") != "input":
            raise SystemExit(f"error: {args.persist} does not hold an input "
                             f"(stage={manifest.get('stage')!r})")
    if manifest is not None:
        cfg = _manifest_cfg(manifest)
        cluster = Cluster.load_images(args.persist, cfg)
        kind = manifest["kind"]
        pe_blocks = [list(map(int, lbs)) for lbs in manifest["pe_blocks"]]
        count, total = int(manifest["count"]), int(manifest["total"])
    else:
        cfg = _load_cfg(args)
        cluster = Cluster(cfg)
        gen = generate_input(cluster, InputSpec(args.kind, cfg.N, cfg.seed))
        kind = args.kind
        pe_blocks = gen.pe_blocks
        count, total = gen.count, gen.total

    result = run_sort(cluster, pe_blocks, args.engine)
    verdict = verify_output(cluster, result.layout, count, total)
    text = report_stats(cfg, result, kind, args.stats)
    sys.stdout.write(text)

    if args.persist:
        layout = result.layout
        _persist(cluster, args.persist, {
            "stage": "output",
            "cfg": asdict(cfg),
            "kind": kind,
            "count": count,
            "total": total,
            "layout": {
                "engine": layout.engine,
                "per_pe": layout.per_pe,
                "stripe": ([list(addr) for addr in layout.stripe]
                           if layout.stripe is not None else None),
            },
        })
    if verdict.ok:
        print("verification: pass", file=sys.stderr)
        return 0
    for failure in verdict.failures:
        print(f"verification: FAIL: {failure}", file=sys.stderr)
    return 1


def cmd_verify(args) -> int:
    manifest = _read_manifest(args.persist)
    if manifest.get("stage") != "output":
        raise SystemExit(f"error: {args.persist} does not hold an output "
                         f"(stage={manifest.get('stage')!r})")
    cfg = _manifest_cfg(manifest)
    cluster = Cluster.load_images(args.persist, cfg)
    desc = manifest["layout"]
    layout = OutputLayout(
        desc["engine"],
        per_pe=desc["per_pe"],
        stripe=([tuple(addr) for addr in desc["stripe"]]
                if desc["stripe"] is not None else None))
    verdict = verify_output(cluster, layout, int(manifest["count"]),
                            int(manifest["total"]))
    if verdict.ok:
        print("verification: pass")
        return 0
    for failure in verdict.failures:
        print(f"verification: FAIL: {failure}")
    return 1


def cmd_experiment(args) -> int:
    cfg = _load_cfg(args)
    b_values = tuple(int(v) for v in args.blocks.split(","))
    _rows, text = run_experiment_redistribution(
        cfg, kind=args.kind, b_values=b_values, trials=args.trials,
        path=args.stats)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emsort",
        description="Deterministic simulator of a distributed external-"
                    "memory sorting cluster with exact I/O and "
                    "communication accounting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate an input and persist it")
    _add_config_flags(p_gen)
    p_gen.add_argument("--persist", required=True, metavar="DIR")
    p_gen.set_defaults(func=cmd_gen)

    p_sort = sub.add_parser("sort", help="sort (fresh or persisted input)")
    _add_config_flags(p_sort)
    p_sort.add_argument("--engine", choices=("canonical", "striped"),
                        default="canonical")
    p_sort.add_argument("--persist", metavar="DIR",
                        help="input directory to load / output directory")
    p_sort.add_argument("--stats", metavar="FILE", help="also write CSV here")
    p_sort.set_defaults(func=cmd_sort)

    p_verify = sub.add_parser("verify", help="re-verify a persisted output")
    p_verify.add_argument("--persist", required=True, metavar="DIR")
    p_verify.set_defaults(func=cmd_verify)

    p_exp = sub.add_parser("experiment",
                           help="redistribution volume measurements")
    _add_config_flags(p_exp)
    p_exp.add_argument("--blocks", default="4,16",
                       help="comma-separated block sizes (default: 4,16)")
    p_exp.add_argument("--trials", type=int, default=20)
    p_exp.add_argument("--stats", metavar="FILE", help="also write CSV here")
    p_exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
