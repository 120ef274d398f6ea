"""Error rates on empirical score distributions.

Acceptance is inclusive: a comparison is accepted iff ``score >= t``.
FMR(t) counts impostor scores ``>= t``; FNMR(t) counts genuine scores ``< t``.
Rates are exact ``Fraction`` objects; conversion to decimals happens only when
formatting output.
"""

from __future__ import annotations

import csv
import decimal
from bisect import bisect_left
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple, Sequence

from .errors import ConfigError, UndefinedMetricError
from .records import ScoreRecord

RANDOM = "random"
SKILLED = "skilled"
MODES = (RANDOM, SKILLED)

SIGNIFICANT_DIGITS = 12
_DEC = decimal.Context(prec=SIGNIFICANT_DIGITS, rounding=decimal.ROUND_HALF_EVEN)


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    genuine_scores: tuple[float, ...]
    impostor_scores: tuple[float, ...]
    mode: str = RANDOM
    config: dict = field(default_factory=dict)
    attestation: dict = field(default_factory=dict)
    genuine_records: tuple[ScoreRecord, ...] = ()
    impostor_records: tuple[ScoreRecord, ...] = ()

    @classmethod
    def from_records(cls, genuine: Sequence[ScoreRecord], impostor: Sequence[ScoreRecord], **kw):
        return cls(
            tuple(r.score for r in genuine),
            tuple(r.score for r in impostor),
            genuine_records=tuple(genuine),
            impostor_records=tuple(impostor),
            **kw,
        )

    @cached_property
    def sorted_genuine(self) -> list[float]:
        return sorted(self.genuine_scores)

    @cached_property
    def sorted_impostor(self) -> list[float]:
        return sorted(self.impostor_scores)


class DetPoint(NamedTuple):
    threshold: float
    fmr: Fraction
    fnmr: Fraction


class OperatingPoint(NamedTuple):
    name: str
    threshold: float
    fmr: Fraction
    fnmr: Fraction


class EqualErrorRate(NamedTuple):
    value: Fraction
    threshold: float


@dataclass(frozen=True)
class AttackSuccess:
    successes: int
    attempts: int
    threshold: float

    @property
    def rate(self) -> Fraction:
        return Fraction(self.successes, self.attempts)


def _accepted(sorted_scores, t) -> int:
    return len(sorted_scores) - bisect_left(sorted_scores, t)


def fmr(result: EvaluationResult, t: float) -> Fraction:
    imp = result.sorted_impostor
    if not imp:
        raise UndefinedMetricError("FMR undefined: no impostor scores")
    return Fraction(_accepted(imp, t), len(imp))


def fnmr(result: EvaluationResult, t: float) -> Fraction:
    gen = result.sorted_genuine
    if not gen:
        raise UndefinedMetricError("FNMR undefined: no genuine scores")
    return Fraction(bisect_left(gen, t), len(gen))


def _require_both(result):
    if not result.genuine_scores or not result.impostor_scores:
        raise UndefinedMetricError("need non-empty genuine and impostor score sets")


def candidate_thresholds(result: EvaluationResult) -> list[float]:
    """Distinct observed scores, ascending, plus a sentinel one unit above the maximum."""
    _require_both(result)
    observed = sorted(set(result.genuine_scores) | set(result.impostor_scores))
    return observed + [observed[-1] + 1.0]


def det_curve(result: EvaluationResult) -> list[DetPoint]:
    return [DetPoint(t, fmr(result, t), fnmr(result, t)) for t in candidate_thresholds(result)]


def eer(result: EvaluationResult) -> EqualErrorRate:
    """Midpoint of FMR and FNMR at the threshold minimising their gap (ties -> lowest threshold)."""
    best = None
    for point in det_curve(result):
        gap = abs(point.fmr - point.fnmr)
        if best is None or gap < best[0]:
            best = (gap, point)
    _, point = best
    return EqualErrorRate((point.fmr + point.fnmr) / 2, point.threshold)


def _as_fraction(x) -> Fraction:
    # decimal literals such as 0.001 are taken at face value, not as binary floats
    return x if isinstance(x, Fraction) else Fraction(str(x))


def operating_point(result: EvaluationResult, fmr_bound, name: str = "FMR1000") -> OperatingPoint:
    """Lowest candidate threshold whose FMR does not exceed ``fmr_bound``."""
    bound = _as_fraction(fmr_bound)
    if not 0 < bound <= 1:
        raise ConfigError(f"fmr bound must lie in (0, 1], got {fmr_bound}")
    for point in det_curve(result):
        if point.fmr <= bound:
            return OperatingPoint(name, point.threshold, point.fmr, point.fnmr)
    raise AssertionError("sentinel threshold always has FMR 0")


def attack_success_rate(impostor_scores: Sequence[float], t: float) -> AttackSuccess:
    scores = list(impostor_scores)
    if not scores:
        raise UndefinedMetricError("attack success rate undefined: no attempts")
    return AttackSuccess(sum(1 for s in scores if s >= t), len(scores), t)


def operating_point_name(bound) -> str:
    bound = _as_fraction(bound)
    if bound.numerator == 1:
        return f"FMR{bound.denominator}"
    return f"FMR<={format_rate(bound)}"


def format_rate(x: Fraction) -> str:
    value = _DEC.divide(decimal.Decimal(x.numerator), decimal.Decimal(x.denominator))
    return format(value.normalize(_DEC), "f") if value else "0"


def format_number(x: float) -> str:
    return format(float(x), f".{SIGNIFICANT_DIGITS}g")


def write_det_csv(points: Sequence[DetPoint], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fmr", "fnmr"])
        for p in points:
            w.writerow([format_number(p.threshold), format_rate(p.fmr), format_rate(p.fnmr)])
