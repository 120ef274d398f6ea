"""Comparison pairs, score records and their CSV encodings."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ParseError
from .templates import TemplateKey

GENUINE = "genuine"
IMPOSTOR = "impostor"
LABELS = (GENUINE, IMPOSTOR)

KEY_COLUMNS = [
    "probe_db",
    "probe_finger",
    "probe_impression",
    "gallery_db",
    "gallery_finger",
    "gallery_impression",
]
SCORE_MATRIX_COLUMNS = KEY_COLUMNS + ["score"]
PAIR_COLUMNS = KEY_COLUMNS + ["label"]
SCORE_RECORD_COLUMNS = KEY_COLUMNS + ["label", "score"]


class ComparisonPair(NamedTuple):
    probe: TemplateKey
    gallery: TemplateKey
    label: str = IMPOSTOR

    def mirrored(self) -> "ComparisonPair":
        return ComparisonPair(self.gallery, self.probe, self.label)


class ScoreRecord(NamedTuple):
    probe: TemplateKey
    gallery: TemplateKey
    score: float
    label: str | None = None


def format_score(score: float) -> str:
    # repr is the shortest string that round-trips to the same double
    return repr(float(score))


def _key_cells(key: TemplateKey) -> list:
    return [key.db, key.finger, key.impression]


def _parse_key(row, offset, lineno) -> TemplateKey:
    try:
        return TemplateKey(row[offset], int(row[offset + 1]), int(row[offset + 2]))
    except ValueError:
        raise ParseError(f"non-integer finger/impression in {row[offset:offset + 3]}", line=lineno) from None


def parse_score(text: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric score {text!r}", line=lineno) from None
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"score must be finite and non-negative, got {text!r}", line=lineno)
    return value


def _open_writer(path):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_pairs_csv(pairs: Iterable[ComparisonPair], path) -> None:
    fh, w = _open_writer(path)
    with fh:
        w.writerow(PAIR_COLUMNS)
        for p in pairs:
            w.writerow(_key_cells(p.probe) + _key_cells(p.gallery) + [p.label])


def write_score_records(records: Iterable[ScoreRecord], path) -> None:
    fh, w = _open_writer(path)
    with fh:
        w.writerow(SCORE_RECORD_COLUMNS)
        for r in records:
            w.writerow(_key_cells(r.probe) + _key_cells(r.gallery) + [r.label or "", format_score(r.score)])


def read_score_records(path) -> list[ScoreRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_RECORD_COLUMNS:
            raise ParseError(f"{path}: expected columns {','.join(SCORE_RECORD_COLUMNS)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(SCORE_RECORD_COLUMNS):
                raise ParseError(f"expected {len(SCORE_RECORD_COLUMNS)} fields", line=lineno)
            out.append(
                ScoreRecord(_parse_key(row, 0, lineno), _parse_key(row, 3, lineno), parse_score(row[7], lineno), row[6] or None)
            )
    return out


def write_score_matrix(entries: Iterable[tuple[TemplateKey, TemplateKey, float]], path) -> None:
    fh, w = _open_writer(path)
    with fh:
        w.writerow(SCORE_MATRIX_COLUMNS)
        for probe, gallery, score in entries:
            w.writerow(_key_cells(probe) + _key_cells(gallery) + [format_score(score)])


def read_score_matrix(path) -> Iterable[tuple[int, TemplateKey, TemplateKey, float]]:
    """Yield ``(line number, probe, gallery, score)`` rows of a score-matrix CSV."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_MATRIX_COLUMNS:
            raise ParseError(f"{path}: expected columns {','.join(SCORE_MATRIX_COLUMNS)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SCORE_MATRIX_COLUMNS):
                raise ParseError(f"expected {len(SCORE_MATRIX_COLUMNS)} fields, got {len(row)}", line=lineno)
            yield lineno, _parse_key(row, 0, lineno), _parse_key(row, 3, lineno), parse_score(row[6], lineno)
