"""Cross-database duplicate finger discovery.

Flags finger pairs whose best cross-impression score reaches a threshold. Flags
are review candidates; verdicts are persisted in the duplicate report so a
rerun keeps earlier confirmations.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from .errors import ConfigError, ParseError
from .protocols import Exclusions
from .records import ScoreRecord
from .templates import FingerKey

log = logging.getLogger(__name__)

CANDIDATE, CONFIRMED, REJECTED = "candidate", "confirmed", "rejected"
VERDICTS = (CANDIDATE, CONFIRMED, REJECTED)
CONFIRMED_ONLY, ALL_CANDIDATES = "confirmed_only", "all_candidates"
POLICIES = (CONFIRMED_ONLY, ALL_CANDIDATES)

REPORT_COLUMNS = ["db_a", "finger_a", "db_b", "finger_b", "best_score", "impr_a", "impr_b", "verdict"]


@dataclass(frozen=True)
class DuplicateCandidate:
    finger_a: FingerKey
    finger_b: FingerKey
    best_score: float
    best_pair: tuple[int, int]
    verdict: str = CANDIDATE

    @property
    def link(self) -> tuple[FingerKey, FingerKey]:
        return self.finger_a, self.finger_b


def find_duplicates(records: Iterable[ScoreRecord], dup_threshold: float, cross_db_only: bool = True) -> list[DuplicateCandidate]:
    if dup_threshold <= 0:
        raise ConfigError(f"duplicate threshold must be positive, got {dup_threshold}")
    best: dict[tuple[FingerKey, FingerKey], tuple[float, tuple[int, int]]] = {}
    for rec in records:
        fa, fb = rec.probe.finger_key, rec.gallery.finger_key
        if fa == fb or (cross_db_only and fa.db == fb.db):
            continue
        if rec.score < dup_threshold:
            continue
        ia, ib = rec.probe.impression, rec.gallery.impression
        if fb < fa:
            fa, fb, ia, ib = fb, fa, ib, ia
        # highest score wins; equal scores keep the lowest impression pair
        rank = (rec.score, (-ia, -ib))
        known = best.get((fa, fb))
        if known is None or rank > (known[0], (-known[1][0], -known[1][1])):
            best[(fa, fb)] = (rec.score, (ia, ib))
    out = [DuplicateCandidate(fa, fb, score, pair) for (fa, fb), (score, pair) in best.items()]
    out.sort(key=lambda c: (-c.best_score, c.finger_a, c.finger_b))
    return out


def build_exclusions(candidates: Iterable[DuplicateCandidate], policy: str = ALL_CANDIDATES) -> Exclusions:
    if policy not in POLICIES:
        raise ConfigError(f"unknown duplicate policy {policy!r}; expected one of {POLICIES}")
    keep = {CONFIRMED} if policy == CONFIRMED_ONLY else {CANDIDATE, CONFIRMED}
    return Exclusions(c.link for c in candidates if c.verdict in keep)


def merge_verdicts(candidates: Iterable[DuplicateCandidate], previous: Iterable[DuplicateCandidate]) -> list[DuplicateCandidate]:
    """Carry review verdicts from an earlier report over to freshly found candidates."""
    verdicts = {c.link: c.verdict for c in previous}
    return [replace(c, verdict=verdicts.get(c.link, c.verdict)) for c in candidates]


def write_duplicate_report(candidates: Iterable[DuplicateCandidate], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for c in candidates:
            w.writerow(
                [c.finger_a.db, c.finger_a.finger, c.finger_b.db, c.finger_b.finger, repr(float(c.best_score)), *c.best_pair, c.verdict]
            )


def read_duplicate_report(path) -> list[DuplicateCandidate]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != REPORT_COLUMNS:
            raise ParseError(f"{path}: expected columns {','.join(REPORT_COLUMNS)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                db_a, fa, db_b, fb, score, ia, ib, verdict = row
                cand = DuplicateCandidate(
                    FingerKey(db_a, int(fa)), FingerKey(db_b, int(fb)), float(score), (int(ia), int(ib)), verdict
                )
            except ValueError as exc:
                raise ParseError(f"malformed duplicate row ({exc})", line=lineno) from None
            if verdict not in VERDICTS:
                raise ParseError(f"unknown verdict {verdict!r}", line=lineno)
            out.append(cand)
    return out


def review_warning(candidates: Iterable[DuplicateCandidate]) -> str | None:
    pending = sum(1 for c in candidates if c.verdict == CANDIDATE)
    if not pending:
        return None
    return (
        f"{pending} duplicate candidate(s) await manual review; set their verdict to "
        f"'confirmed' or 'rejected' in the duplicate report"
    )


def default_threshold(genuine_scores) -> float:
    """Median of the genuine score distribution.

    A true duplicate's best score is a maximum over many same-finger
    comparisons and lands far above the genuine median.
    """
    scores = sorted(genuine_scores)
    if not scores:
        raise ConfigError("duplicate threshold needs genuine scores or an explicit value")
    mid = len(scores) // 2
    value = scores[mid] if len(scores) % 2 else (scores[mid - 1] + scores[mid]) / 2
    if value <= 0:
        raise ConfigError("genuine median is 0; set an explicit duplicate threshold")
    return value


def load_previous(path) -> list[DuplicateCandidate]:
    path = Path(path)
    return read_duplicate_report(path) if path.is_file() else []
