"""Comparison-pair generation for the random- and skilled-impostor verification tests.

Counts for a database of n fingers x m impressions:

* genuine:          n * m * (m - 1) / 2
* random impostor:  n * (n - 1) * a**2 / 2   (first a impressions of each finger)
* skilled impostor: n * a * k                (top k of the first u impressions of every other finger)

With ``include_mirrored`` the first two double, since both orders are scored.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, ConsistencyError, ParseError, SelectionError
from .matcher import Matcher, ScoreCache, SymmetryReport, compute_score_matrix, score_rows
from .metrics import MODES, RANDOM, SKILLED, EvaluationResult
from .records import GENUINE, IMPOSTOR, ComparisonPair, ScoreRecord
from .templates import DatabaseManifest, FingerKey, TemplateKey, TemplateStore

log = logging.getLogger(__name__)


class Exclusions:
    """Symmetric links between fingers known to be the same physical finger."""

    def __init__(self, links: Iterable[tuple[FingerKey, FingerKey]] = ()):
        self._links: set[frozenset] = set()
        for a, b in links:
            self.add(a, b)

    def add(self, a: FingerKey, b: FingerKey) -> None:
        a, b = FingerKey(*a), FingerKey(*b)
        if a == b:
            raise ConfigError(f"cannot exclude finger {a} against itself")
        self._links.add(frozenset((a, b)))

    def linked(self, a: FingerKey, b: FingerKey) -> bool:
        return frozenset((a, b)) in self._links

    def links(self) -> list[tuple[FingerKey, FingerKey]]:
        return sorted(tuple(sorted(link)) for link in self._links)

    def __len__(self):
        return len(self._links)

    def __iter__(self):
        return iter(self.links())

    def __eq__(self, other):
        return isinstance(other, Exclusions) and self._links == other._links

    def to_json(self) -> list[dict]:
        return [{"db_a": a.db, "finger_a": a.finger, "db_b": b.db, "finger_b": b.finger} for a, b in self.links()]

    @classmethod
    def from_json(cls, doc) -> "Exclusions":
        try:
            return cls((FingerKey(d["db_a"], int(d["finger_a"])), FingerKey(d["db_b"], int(d["finger_b"]))) for d in doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed exclusion list ({exc})") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Exclusions":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None


@dataclass(frozen=True)
class ProtocolConfig:
    """``a``/``u`` of None mean "all impressions" of the respective database."""

    a: int | None = None
    u: int | None = None
    k: int = 1
    exclusions: Exclusions = field(default_factory=Exclusions, compare=False)
    include_mirrored: bool = False

    def resolve(self, target: DatabaseManifest, attack_dbs: Sequence[DatabaseManifest] = ()) -> "ProtocolConfig":
        a = target.m if self.a is None else self.a
        u = min((db.m for db in attack_dbs), default=target.m) if self.u is None else self.u
        if not 1 <= a <= target.m:
            raise ConfigError(f"a={a} outside 1..{target.m} for database {target.name!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        for db in attack_dbs:
            if not 1 <= u <= db.m:
                raise ConfigError(f"u={u} outside 1..{db.m} for attack database {db.name!r}")
        return replace(self, a=a, u=u)

    def with_symmetry(self, report: SymmetryReport | None) -> "ProtocolConfig":
        """Force mirrored comparisons when the matcher was found asymmetric."""
        if report is not None and report.symmetric is False and not self.include_mirrored:
            log.info("matcher is asymmetric; including mirrored comparisons")
            return replace(self, include_mirrored=True)
        return self

    def snapshot(self) -> dict:
        return {
            "a": self.a,
            "u": self.u,
            "k": self.k,
            "include_mirrored": self.include_mirrored,
            "exclusions": self.exclusions.to_json(),
        }


def genuine_count(n, m, mirrored=False) -> int:
    return n * m * (m - 1) // (1 if mirrored else 2)


def random_impostor_count(n, a, mirrored=False) -> int:
    return n * (n - 1) * a * a // (1 if mirrored else 2)


def skilled_impostor_count(n, a, k) -> int:
    return n * a * k


def genuine_pairs(manifest: DatabaseManifest, include_mirrored: bool = False) -> list[ComparisonPair]:
    pairs = []
    for i in range(1, manifest.n + 1):
        for j in range(1, manifest.m + 1):
            for y in range(j + 1, manifest.m + 1):
                pair = ComparisonPair(manifest.key(i, j), manifest.key(i, y), GENUINE)
                pairs.append(pair)
                if include_mirrored:
                    pairs.append(pair.mirrored())
    return pairs


def random_impostor_pairs(manifest: DatabaseManifest, a: int, include_mirrored: bool = False) -> list[ComparisonPair]:
    if not 1 <= a <= manifest.m:
        raise ConfigError(f"a={a} outside 1..{manifest.m}")
    keys = {(i, j): manifest.key(i, j) for i in range(1, manifest.n + 1) for j in range(1, a + 1)}
    pairs = []
    for i in range(1, manifest.n + 1):
        for x in range(i + 1, manifest.n + 1):
            for j in range(1, a + 1):
                for y in range(1, a + 1):
                    pair = ComparisonPair(keys[i, j], keys[x, y], IMPOSTOR)
                    pairs.append(pair)
                    if include_mirrored:
                        pairs.append(pair.mirrored())
    return pairs


def skilled_candidates(
    target: DatabaseManifest, attack_dbs: Sequence[DatabaseManifest], config: ProtocolConfig
) -> list[tuple[TemplateKey, list[TemplateKey]]]:
    """For each targeted impression, the impressions an attacker may choose from."""
    if not attack_dbs:
        raise ConfigError("skilled protocol needs at least one attack database")
    config = config.resolve(target, attack_dbs)
    attack_dbs = sorted(attack_dbs, key=lambda db: db.name)
    # candidate keys per attack finger, built once and shared between probes
    pool = [(FingerKey(db.name, x), [db.key(x, y) for y in range(1, config.u + 1)]) for db in attack_dbs for x in range(1, db.n + 1)]
    out = []
    for i in range(1, target.n + 1):
        target_finger = FingerKey(target.name, i)
        cands = [
            key
            for finger, keys in pool
            if finger != target_finger and not config.exclusions.linked(target_finger, finger)
            for key in keys
        ]
        for j in range(1, config.a + 1):
            out.append((target.key(i, j), cands))
    return out


def skilled_impostor_select(
    target: DatabaseManifest,
    attack_dbs: Sequence[DatabaseManifest],
    config: ProtocolConfig,
    matcher: Matcher,
    store: TemplateStore | None = None,
    cache: ScoreCache | None = None,
    workers: int = 1,
) -> list[ScoreRecord]:
    """Score every probe against its candidate set and keep the top ``k`` per probe.

    Records have the targeted impression as probe and the chosen attacker
    impression as gallery.
    """
    config = config.resolve(target, attack_dbs)
    store = store or TemplateStore([target, *attack_dbs])
    plan = skilled_candidates(target, attack_dbs, config)
    for probe, cands in plan:
        if len(cands) < config.k:
            raise SelectionError(f"probe {probe} has {len(cands)} candidates, fewer than k={config.k}")
    selected = []
    for (probe, cands), chunk in zip(plan, score_rows(matcher, plan, store, cache, workers)):
        # candidates are in ascending key order and nlargest is stable, so
        # equal scores resolve to the smallest candidate key
        best = heapq.nlargest(config.k, range(len(cands)), key=chunk.__getitem__)
        selected.extend(ScoreRecord(probe, cands[c], chunk[c], IMPOSTOR) for c in best)
    return selected


def _attest(label, expected, actual):
    if expected != actual:
        raise ConsistencyError(f"{label}: expected {expected} comparisons by formula, got {actual}")


def run_verification_test(
    mode: str,
    target: DatabaseManifest,
    attack_dbs: Sequence[DatabaseManifest],
    config: ProtocolConfig,
    matcher: Matcher,
    store: TemplateStore | None = None,
    cache: ScoreCache | None = None,
    workers: int = 1,
) -> EvaluationResult:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    attack_dbs = list(attack_dbs) if attack_dbs else [target]
    config = config.resolve(target, attack_dbs if mode == SKILLED else ())
    store = store or TemplateStore([target, *attack_dbs])
    cache = cache if cache is not None else ScoreCache()
    n, m, mirrored = target.n, target.m, config.include_mirrored

    gen_pairs = genuine_pairs(target, mirrored)
    _attest("genuine pairs", genuine_count(n, m, mirrored), len(gen_pairs))
    if mode == RANDOM:
        imp_pairs = random_impostor_pairs(target, config.a, mirrored)
        imp_expected = random_impostor_count(n, config.a, mirrored)
        _attest("random impostor pairs", imp_expected, len(imp_pairs))

    genuine = compute_score_matrix(matcher, gen_pairs, store, cache, workers)
    if mode == RANDOM:
        impostor = compute_score_matrix(matcher, imp_pairs, store, cache, workers)
    else:
        impostor = skilled_impostor_select(target, attack_dbs, config, matcher, store, cache, workers)
        imp_expected = skilled_impostor_count(n, config.a, config.k)
    _attest("genuine scores", len(gen_pairs), len(genuine))
    _attest(f"{mode} impostor scores", imp_expected, len(impostor))

    attestation = {
        "n": n,
        "m": m,
        "a": config.a,
        "u": config.u if mode == SKILLED else None,
        "k": config.k if mode == SKILLED else None,
        "include_mirrored": mirrored,
        "genuine": len(genuine),
        "impostor": len(impostor),
    }
    snapshot = config.snapshot()
    snapshot["target_db"] = target.name
    snapshot["attack_dbs"] = [db.name for db in attack_dbs] if mode == SKILLED else []
    return EvaluationResult.from_records(genuine, impostor, mode=mode, config=snapshot, attestation=attestation)
