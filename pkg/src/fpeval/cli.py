"""Command line interface.

Exit codes: 0 ok, 1 usage, 2 data, 3 consistency, 4 matcher, 5 comparison mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dedup import POLICIES
from .errors import CompletenessError, ConfigError, FpevalError, MatcherError
from .metrics import MODES
from .pipeline import RunConfig, compare_modes, run_dedup, run_eval
from .synth import SynthParams, finger_seed, synth_database
from .templates import DEFAULT_NAMING, load_manifest, write_manifest

EXIT_OK, EXIT_USAGE = 0, 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _add_run_options(p):
    """Flags overriding the same-named fields of the JSON run configuration."""
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--target-db", type=Path)
    p.add_argument("--attack-db", dest="attack_dbs", type=Path, action="append")
    p.add_argument("--a", type=_positive)
    p.add_argument("--u", type=_positive)
    p.add_argument("--k", type=_positive)
    p.add_argument("--include-mirrored", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--exclusions", type=Path)
    p.add_argument("--dup-policy", choices=POLICIES)
    p.add_argument("--dup-threshold", type=float)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--workers", type=_positive)
    p.add_argument("--fmr-bound", dest="fmr_bounds", type=float, action="append")
    p.add_argument("--threshold", dest="thresholds", type=float, action="append")
    p.add_argument("--symmetry-sample", type=int)
    p.add_argument("--symmetry-tolerance", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--cache-dir", type=Path)


_OVERRIDES = (
    "target_db", "attack_dbs", "a", "u", "k", "include_mirrored", "exclusions", "dup_policy",
    "dup_threshold", "output_dir", "workers", "fmr_bounds", "thresholds", "symmetry_sample",
    "symmetry_tolerance", "seed", "cache_dir",
)


def _run_config(args) -> RunConfig:
    if args.config:
        doc = json.loads(args.config.read_text(encoding="utf-8")) if args.config.is_file() else None
        if doc is None:
            raise ConfigError(f"config file {args.config} not found")
        base = args.config.parent
    else:
        doc, base = {}, Path(".")
    for name in _OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            # command-line paths are relative to the working directory
            if isinstance(value, Path):
                value = value.resolve()
            elif name == "attack_dbs":
                value = [p.resolve() for p in value]
            doc[name] = value
    return RunConfig.from_dict(doc, base)


def cmd_scan(args) -> int:
    try:
        manifest = load_manifest(args.root, args.naming, args.n, args.m, args.name)
    except CompletenessError as exc:
        print(f"scan failed: {exc}", file=sys.stderr)
        return exc.exit_code
    out = args.out or Path(args.root) / "manifest.json"
    write_manifest(manifest, out)
    print(f"{manifest.name}: {len(manifest)} templates ({manifest.n} fingers x {manifest.m} impressions) -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = SynthParams(
        minutiae_count=(args.min_minutiae, args.max_minutiae),
        width=args.width,
        height=args.height,
        rotation=args.rotation,
        translation=args.translation,
        jitter=args.jitter,
        drop_prob=args.drop_prob,
        spurious=(args.min_spurious, args.max_spurious),
        seed=args.seed,
    )
    seeds = {}
    for spec in args.plant or []:
        try:
            dst, src = (int(x) for x in spec.split(":"))
        except ValueError:
            raise ConfigError(f"--plant expects DST:SRC finger indices, got {spec!r}") from None
        seeds[dst] = finger_seed(SynthParams(seed=args.plant_seed), src)
    manifest, _ = synth_database(params, args.n, args.m, args.out, args.name or args.out.name, seeds)
    print(f"wrote {len(manifest)} templates and manifest.json to {args.out}")
    return EXIT_OK


def _print_summary(report):
    counts = report["counts"]
    print(f"mode: {report['mode']}  target: {report['target_db']['name']}  matcher: {report['matcher']['fingerprint'][:12]}")
    print(f"comparisons: {counts['genuine']} genuine, {counts['impostor']} impostor"
          + ("  (mirrored)" if counts["include_mirrored"] else ""))
    print(f"EER: {report['eer']['value']} at t = {report['eer']['threshold']}")
    for op in report["operating_points"]:
        print(f"{op['name']}: t = {op['threshold']}  FMR = {op['fmr']}  FNMR = {op['fnmr']}")
    for s in report["attack_success"]:
        print(f"success at t = {s['threshold']}: {s['successes']}/{s['attempts']} = {s['rate']}")
    print(f"artifacts: {report['_dir']}")


def cmd_eval(args) -> int:
    report = run_eval(_run_config(args), args.mode)
    _print_summary(report)
    return EXIT_OK


def cmd_compare_modes(args) -> int:
    summary = compare_modes(args.random_report, args.skilled_report, args.t)
    summary.pop("_inflation")
    text = json.dumps(summary, indent=2)
    if args.out:
        args.out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_dedup(args) -> int:
    res = run_dedup(_run_config(args))
    print(f"{len(res['candidates'])} duplicate candidate(s) at threshold {res['threshold']:.12g}; "
          f"{len(res['exclusions'])} exclusion link(s) -> {res['dir']}")
    if res["warning"]:
        print(f"WARNING: {res['warning']}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fpeval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scan", help="build a database manifest from a template directory")
    p.add_argument("root", type=Path)
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--m", type=_positive, required=True)
    p.add_argument("--naming", default=DEFAULT_NAMING)
    p.add_argument("--name")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("synth", help="generate a synthetic template database")
    p.add_argument("out", type=Path)
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--m", type=_positive, required=True)
    p.add_argument("--name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-minutiae", type=int, default=30)
    p.add_argument("--max-minutiae", type=int, default=50)
    p.add_argument("--width", type=int, default=388)
    p.add_argument("--height", type=int, default=374)
    p.add_argument("--rotation", type=float, default=15.0)
    p.add_argument("--translation", type=float, default=25.0)
    p.add_argument("--jitter", type=float, default=2.0)
    p.add_argument("--drop-prob", type=float, default=0.1)
    p.add_argument("--min-spurious", type=int, default=0)
    p.add_argument("--max-spurious", type=int, default=5)
    p.add_argument("--plant", action="append", metavar="DST:SRC",
                   help="finger DST reuses finger SRC of the database generated with --plant-seed")
    p.add_argument("--plant-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="run a verification test")
    p.add_argument("--mode", choices=MODES, required=True)
    _add_run_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare-modes", help="compare a random and a skilled report at one threshold")
    p.add_argument("random_report", type=Path)
    p.add_argument("skilled_report", type=Path)
    p.add_argument("--t", type=float, help="threshold (default: FMR1000 threshold of the random report)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_compare_modes)

    p = sub.add_parser("dedup", help="find fingers shared between the target and attack databases")
    _add_run_options(p)
    p.set_defaults(func=cmd_dedup)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FpevalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, MatcherError) and exc.transcript:
            print(json.dumps(exc.transcript, indent=2, default=str), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
