"""End-to-end runs: configuration, evaluation, duplicate discovery and mode comparison.

Each run writes into its own directory under ``output_dir`` and is guarded by
a lock file so concurrent invocations cannot interleave their artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import random
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from . import __version__
from .dedup import (
    ALL_CANDIDATES,
    POLICIES,
    build_exclusions,
    default_threshold,
    find_duplicates,
    load_previous,
    merge_verdicts,
    review_warning,
    write_duplicate_report,
)
from .errors import ComparisonMismatchError, CompletenessError, ConfigError, FpevalError, ParseError
from .matcher import Matcher, ScoreCache, SymmetryReport, check_symmetry, compute_score_matrix, matcher_from_spec
from .metrics import (
    MODES,
    SKILLED,
    EvaluationResult,
    attack_success_rate,
    det_curve,
    eer,
    format_number,
    format_rate,
    operating_point,
    operating_point_name,
    write_det_csv,
)
from .protocols import (
    Exclusions,
    ProtocolConfig,
    genuine_pairs,
    random_impostor_pairs,
    run_verification_test,
    skilled_candidates,
)
from .records import GENUINE, IMPOSTOR, ComparisonPair, read_score_records, write_pairs_csv, write_score_records
from .templates import DatabaseManifest, TemplateStore, read_manifest

log = logging.getLogger(__name__)

REPORT_NAME = "report.json"
DET_NAME = "det.csv"
SCORES_NAME = "scores.csv"
PAIRS_NAME = "pairs.csv"
DUPLICATES_NAME = "duplicates.csv"
EXCLUSIONS_NAME = "exclusions.json"


class LockError(FpevalError):
    exit_code = 1


@dataclass
class RunConfig:
    target_db: Path
    attack_dbs: list[Path] = field(default_factory=list)
    matcher: dict = field(default_factory=lambda: {"kind": "builtin"})
    a: int | None = 1
    u: int | None = None
    k: int = 1
    include_mirrored: bool = False
    exclusions: Path | None = None
    dup_policy: str = ALL_CANDIDATES
    dup_threshold: float | None = None
    output_dir: Path = Path("runs")
    workers: int = 1
    fmr_bounds: list[float] = field(default_factory=lambda: [0.001])
    thresholds: list[float] = field(default_factory=list)
    symmetry_sample: int = 10
    symmetry_tolerance: float = 0.0
    seed: int = 0
    cache_dir: Path | None = None
    base_dir: Path = field(default=Path("."), repr=False)

    _PATHS = ("target_db", "exclusions", "output_dir", "cache_dir")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        if "target_db" not in doc or doc["target_db"] is None:
            raise ConfigError("config needs target_db")
        base = Path(base_dir)

        def path(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        kw: dict[str, Any] = dict(doc)
        for name in cls._PATHS:
            if name in kw:
                kw[name] = path(kw[name])
        kw["attack_dbs"] = [path(p) for p in kw.get("attack_dbs") or []]
        cfg = cls(base_dir=base, **kw)
        cfg.validate_values()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)

    def validate_values(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.dup_policy not in POLICIES:
            raise ConfigError(f"dup_policy must be one of {POLICIES}")
        if self.symmetry_sample < 0:
            raise ConfigError("symmetry_sample must be >= 0")
        for b in self.fmr_bounds:
            if not 0 < b <= 1:
                raise ConfigError(f"fmr bound {b} outside (0, 1]")

    def protocol(self, exclusions: Exclusions) -> ProtocolConfig:
        return ProtocolConfig(self.a, self.u, self.k, exclusions, self.include_mirrored)


@dataclass
class Workspace:
    """Everything a run needs, resolved and validated before any comparison."""

    config: RunConfig
    target: DatabaseManifest
    attack_dbs: list[DatabaseManifest]
    matcher: Matcher
    exclusions: Exclusions
    store: TemplateStore
    cache: ScoreCache


def prepare(config: RunConfig, mode: str | None = None) -> Workspace:
    target = read_manifest(config.target_db)
    attack = [read_manifest(p) for p in config.attack_dbs] or [target]
    missing = [str(p) for db in [target, *attack] for p in db.entries.values() if not p.is_file()]
    if missing:
        raise CompletenessError([], f"{len(missing)} template files missing, e.g. {missing[0]}")
    names = [db.name for db in attack]
    if len(set(names)) != len(names):
        raise ConfigError(f"attack databases must have distinct names, got {names}")
    matcher = matcher_from_spec(config.matcher, config.base_dir)
    exclusions = Exclusions.load(config.exclusions) if config.exclusions else Exclusions()
    if mode is not None and mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    config.protocol(exclusions).resolve(target, attack if mode == SKILLED else ())
    store = TemplateStore([target, *attack])
    cache = ScoreCache()
    if config.cache_dir:
        cache.load(config.cache_dir, matcher.fingerprint)
    return Workspace(config, target, attack, matcher, exclusions, store, cache)


@contextmanager
def locked_dir(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{path} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def database_digest(manifest: DatabaseManifest) -> str:
    h = hashlib.sha256()
    for (i, j), p in manifest.entries.items():
        h.update(f"{i},{j}\n".encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def symmetry_sample(ws: Workspace) -> list[ComparisonPair]:
    n = ws.config.symmetry_sample
    if n == 0:
        return []
    pool = genuine_pairs(ws.target) + random_impostor_pairs(ws.target, 1)
    rng = random.Random(ws.config.seed)
    return pool if len(pool) <= n else rng.sample(pool, n)


def run_symmetry_check(ws: Workspace) -> SymmetryReport | None:
    sample = symmetry_sample(ws)
    if not sample:
        return None
    report = check_symmetry(ws.matcher, sample, ws.store, ws.config.symmetry_tolerance)
    if report.symmetric is None:
        log.warning("%s", report.reason)
    return report


def _fraction_dict(fr: Fraction) -> dict:
    return {"value": format_rate(fr), "count": f"{fr.numerator}/{fr.denominator}"}


def summarize(result: EvaluationResult, fmr_bounds, thresholds) -> dict:
    """Metric section of a report; every entry is recomputable from the score records."""
    e = eer(result)
    ops = []
    for bound in fmr_bounds:
        op = operating_point(result, bound, operating_point_name(bound))
        ops.append(
            {
                "name": op.name,
                "bound": format_rate(Fraction(str(bound))),
                "threshold": format_number(op.threshold),
                "fmr": format_rate(op.fmr),
                "fnmr": format_rate(op.fnmr),
            }
        )
    success = []
    for t in thresholds:
        s = attack_success_rate(result.impostor_scores, t)
        success.append(
            {"threshold": format_number(t), "successes": s.successes, "attempts": s.attempts, "rate": format_rate(s.rate)}
        )
    return {
        "eer": {"value": format_rate(e.value), "threshold": format_number(e.threshold)},
        "operating_points": ops,
        "attack_success": success,
    }


def run_eval(config: RunConfig, mode: str, ws: Workspace | None = None) -> dict:
    ws = ws or prepare(config, mode)
    out = Path(config.output_dir) / mode
    with locked_dir(out):
        symmetry = run_symmetry_check(ws)
        protocol = config.protocol(ws.exclusions).with_symmetry(symmetry)
        result = run_verification_test(
            mode, ws.target, ws.attack_dbs, protocol, ws.matcher, ws.store, ws.cache, config.workers
        )
        records = list(result.genuine_records) + list(result.impostor_records)
        write_score_records(records, out / SCORES_NAME)
        write_pairs_csv([ComparisonPair(r.probe, r.gallery, r.label) for r in records], out / PAIRS_NAME)
        write_det_csv(det_curve(result), out / DET_NAME)

        report = {
            "tool": {"name": "fpeval", "version": __version__},
            "mode": mode,
            "matcher": {"fingerprint": ws.matcher.fingerprint, "kind": ws.matcher.kind},
            "target_db": {"name": ws.target.name, "n": ws.target.n, "m": ws.target.m, "sha256": database_digest(ws.target)},
            "protocol": result.config,
            "symmetry": _symmetry_dict(symmetry),
            "counts": result.attestation,
            **summarize(result, config.fmr_bounds, config.thresholds),
            "artifacts": {"det": DET_NAME, "scores": SCORES_NAME, "pairs": PAIRS_NAME},
        }
        (out / REPORT_NAME).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        if config.cache_dir:
            ws.cache.save(config.cache_dir, ws.matcher.fingerprint)
    report["_dir"] = str(out)
    report["_result"] = result
    return report


def _symmetry_dict(report: SymmetryReport | None) -> dict | None:
    if report is None:
        return None
    d = report.to_dict()
    d["tolerance"] = format_number(d["tolerance"])
    if d["max_deviation"] is not None:
        d["max_deviation"] = format_number(d["max_deviation"])
    return d


def load_report(path) -> tuple[dict, EvaluationResult]:
    """Read a report and rebuild its EvaluationResult from the persisted score records."""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_NAME
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CompletenessError([], f"report {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    records = read_score_records(path.parent / report["artifacts"]["scores"])
    result = EvaluationResult.from_records(
        [r for r in records if r.label == GENUINE],
        [r for r in records if r.label == IMPOSTOR],
        mode=report["mode"],
        config=report["protocol"],
        attestation=report["counts"],
    )
    return report, result


def compare_modes(random_report, skilled_report, t: float | None = None) -> dict:
    rep_r, res_r = load_report(random_report)
    rep_s, res_s = load_report(skilled_report)
    if rep_r["matcher"]["fingerprint"] != rep_s["matcher"]["fingerprint"]:
        raise ComparisonMismatchError("reports were produced by different matchers")
    if rep_r["target_db"] != rep_s["target_db"]:
        raise ComparisonMismatchError("reports evaluate different target databases")
    if t is None:
        t = operating_point(res_r, Fraction(1, 1000)).threshold
    base = attack_success_rate(res_r.impostor_scores, t)
    attack = attack_success_rate(res_s.impostor_scores, t)
    inflation = attack.rate / base.rate if base.rate else None
    return {
        "threshold": format_number(t),
        "random": {"mode": rep_r["mode"], "successes": base.successes, "attempts": base.attempts, "fmr": format_rate(base.rate)},
        "skilled": {"mode": rep_s["mode"], "successes": attack.successes, "attempts": attack.attempts, "success_rate": format_rate(attack.rate)},
        "inflation": format_rate(inflation) if inflation is not None else None,
        "_inflation": inflation,
    }


def run_dedup(config: RunConfig, ws: Workspace | None = None) -> dict:
    ws = ws or prepare(config, SKILLED)
    others = [db for db in ws.attack_dbs if db.name != ws.target.name]
    if not others:
        raise ConfigError("duplicate search needs at least one attack database other than the target")
    out = Path(config.output_dir) / "dedup"
    with locked_dir(out):
        # the best cross-impression score is taken over all impressions on both sides
        protocol = ProtocolConfig(None, None, 1).resolve(ws.target, others)
        pairs = [ComparisonPair(p, c) for p, cands in skilled_candidates(ws.target, others, protocol) for c in cands]
        records = compute_score_matrix(ws.matcher, pairs, ws.store, ws.cache, config.workers)
        threshold = config.dup_threshold
        if threshold is None:
            genuine = compute_score_matrix(ws.matcher, genuine_pairs(ws.target), ws.store, ws.cache, config.workers)
            threshold = default_threshold([r.score for r in genuine])
        candidates = merge_verdicts(find_duplicates(records, threshold), load_previous(out / DUPLICATES_NAME))
        write_duplicate_report(candidates, out / DUPLICATES_NAME)
        exclusions = build_exclusions(candidates, config.dup_policy)
        exclusions.save(out / EXCLUSIONS_NAME)
        if config.cache_dir:
            ws.cache.save(config.cache_dir, ws.matcher.fingerprint)
    return {
        "dir": str(out),
        "threshold": threshold,
        "candidates": candidates,
        "exclusions": exclusions,
        "warning": review_warning(candidates),
    }
