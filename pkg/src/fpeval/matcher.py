"""Similarity scoring: built-in minutiae matcher, external command adapter and
precomputed score matrices, plus the batch driver and score cache.

Every matcher maps an ordered (probe, gallery) pair of templates to a finite,
non-negative score where larger means more similar.
"""

from __future__ import annotations

import hashlib
import json
import math
import shlex
import subprocess
import tempfile
import threading
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import _kernel
from .errors import ConfigError, MatcherError, ScoreImportError, ScoreLookupError
from .records import ComparisonPair, ScoreRecord, read_score_matrix, write_score_matrix
from .templates import MIN_ALIGNABLE_MINUTIAE, MinutiaeTemplate, TemplateKey, TemplateStore, write_xyt

BUILTIN = "builtin"
EXTERNAL = "external_command"
PRECOMPUTED = "precomputed"


def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _checked(score, probe, gallery) -> float:
    score = float(score)
    if not math.isfinite(score) or score < 0:
        raise MatcherError(f"{probe} -> {gallery}: invalid score {score!r}")
    return score


@dataclass(frozen=True)
class BuiltinParams:
    """Accumulator bin sizes and pairing tolerances (pixels, degrees)."""

    bin_xy: float = 10.0
    bin_theta: float = 10.0
    r_pair: float = 12.0
    theta_pair: float = 20.0
    quality_weighted: bool = False

    def __post_init__(self):
        if self.bin_xy <= 0 or self.r_pair <= 0 or self.theta_pair < 0:
            raise ConfigError(f"invalid builtin matcher parameters {self}")
        n_theta = 360.0 / self.bin_theta if self.bin_theta > 0 else 0.5
        if n_theta < 1 or abs(n_theta - round(n_theta)) > 1e-9:
            raise ConfigError(f"bin_theta must divide 360, got {self.bin_theta}")


class Matcher:
    kind: str

    @property
    def fingerprint(self) -> str:
        """Stable hash of kind and parameters; part of every cache key."""
        return _digest(self.describe())

    def describe(self) -> dict:
        raise NotImplementedError

    def compare(self, probe: MinutiaeTemplate, gallery: MinutiaeTemplate) -> float:
        raise NotImplementedError

    def score(self, probe: TemplateKey, gallery: TemplateKey, store: TemplateStore) -> float:
        return self.compare(store[probe], store[gallery])


class BuiltinMatcher(Matcher):
    """Hough-voting rigid alignment followed by greedy minutia pairing.

    score = 100 * p**2 / (n_probe * n_gallery), p = number of paired minutiae.
    """

    kind = BUILTIN

    def __init__(self, params: BuiltinParams | None = None):
        self.params = params or BuiltinParams()

    def describe(self):
        return {"kind": self.kind, "params": asdict(self.params)}

    def compare(self, probe, gallery):
        n_p, n_g = len(probe), len(gallery)
        if n_p < MIN_ALIGNABLE_MINUTIAE or n_g < MIN_ALIGNABLE_MINUTIAE:
            return 0.0
        prm = self.params
        paired = _kernel.paired_count(
            probe.array,
            gallery.array,
            float(prm.bin_xy),
            float(prm.bin_theta),
            float(prm.r_pair),
            float(prm.theta_pair),
            bool(prm.quality_weighted),
            _kernel.COS_TABLE,
            _kernel.SIN_TABLE,
        )
        return 100.0 * paired * paired / (n_p * n_g)


class ExternalMatcher(Matcher):
    """Runs ``command`` once per comparison; ``{probe}`` and ``{gallery}`` are
    replaced by template paths and the process must print one number."""

    kind = EXTERNAL

    def __init__(self, command: str, timeout: float | None = None, concurrency: int = 1):
        if "{probe}" not in command or "{gallery}" not in command:
            raise ConfigError("external matcher command needs {probe} and {gallery} placeholders")
        self.command = command
        self.timeout = timeout
        self.concurrency = max(1, int(concurrency))

    def describe(self):
        return {"kind": self.kind, "command": self.command}

    def run(self, probe_path, gallery_path) -> float:
        argv = [tok.format(probe=str(probe_path), gallery=str(gallery_path)) for tok in shlex.split(self.command)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise MatcherError(f"external matcher failed to run: {exc}", transcript={"argv": argv}) from None
        transcript = {"argv": argv, "returncode": proc.returncode, "stdout": proc.stdout, "stderr": proc.stderr}
        if proc.returncode != 0:
            raise MatcherError(f"external matcher exited with status {proc.returncode}", transcript)
        try:
            value = float(proc.stdout.strip())
        except ValueError:
            raise MatcherError(f"external matcher printed non-numeric output {proc.stdout.strip()!r}", transcript) from None
        if not math.isfinite(value) or value < 0:
            raise MatcherError(f"external matcher printed invalid score {value!r}", transcript)
        return value

    def compare(self, probe, gallery):
        if probe.path is not None and gallery.path is not None:
            return self.run(probe.path, gallery.path)
        with tempfile.TemporaryDirectory() as tmp:
            pp, gp = Path(tmp, "probe.xyt"), Path(tmp, "gallery.xyt")
            write_xyt(probe, pp)
            write_xyt(gallery, gp)
            return self.run(pp, gp)

    def score(self, probe, gallery, store):
        pp, gp = store.path(probe), store.path(gallery)
        if pp is not None and gp is not None:
            return self.run(pp, gp)
        return self.compare(store[probe], store[gallery])


class PrecomputedMatcher(Matcher):
    """Serves scores from a fixed ordered-pair table."""

    kind = PRECOMPUTED

    def __init__(self, matrix: dict[tuple[TemplateKey, TemplateKey], float], source: str = ""):
        self.matrix = dict(matrix)
        self.source = source

    def describe(self):
        rows = sorted((tuple(p), tuple(g), s) for (p, g), s in self.matrix.items())
        return {"kind": self.kind, "matrix_sha256": _digest(rows)}

    def lookup(self, probe: TemplateKey, gallery: TemplateKey) -> float:
        try:
            return self.matrix[(probe, gallery)]
        except KeyError:
            raise ScoreLookupError(f"no precomputed score for {probe} -> {gallery}", pair=(probe, gallery)) from None

    def compare(self, probe, gallery):
        return self.lookup(probe.key, gallery.key)

    def score(self, probe, gallery, store):
        return self.lookup(probe, gallery)

    def __len__(self):
        return len(self.matrix)


class SymmetrizedMatcher(Matcher):
    """max(M(p, g), M(g, p)) of an inner matcher; symmetric by construction."""

    def __init__(self, inner: Matcher):
        self.inner = inner
        self.kind = inner.kind

    def describe(self):
        return {"symmetrized": self.inner.describe()}

    def compare(self, probe, gallery):
        return max(self.inner.compare(probe, gallery), self.inner.compare(gallery, probe))

    def score(self, probe, gallery, store):
        return max(self.inner.score(probe, gallery, store), self.inner.score(gallery, probe, store))


def compare(matcher: Matcher, probe: MinutiaeTemplate, gallery: MinutiaeTemplate) -> float:
    if not len(probe) or not len(gallery):
        raise MatcherError("cannot compare an empty template")
    return _checked(matcher.compare(probe, gallery), probe.key, gallery.key)


def import_score_matrix(csv_path) -> PrecomputedMatcher:
    matrix: dict[tuple[TemplateKey, TemplateKey], float] = {}
    for lineno, probe, gallery, score in read_score_matrix(csv_path):
        known = matrix.get((probe, gallery))
        if known is not None and known != score:
            raise ScoreImportError(
                f"line {lineno}: conflicting scores {known!r} and {score!r} for {probe} -> {gallery}"
            )
        matrix[(probe, gallery)] = score
    return PrecomputedMatcher(matrix, source=str(csv_path))


def matcher_from_spec(spec: dict, base_dir=None) -> Matcher:
    """Build a matcher from its JSON description (the ``matcher`` block of a run config)."""
    kind = spec.get("kind", BUILTIN)
    if kind == BUILTIN:
        matcher: Matcher = BuiltinMatcher(BuiltinParams(**spec.get("params", {})))
    elif kind in (EXTERNAL, "external"):
        matcher = ExternalMatcher(spec["command"], spec.get("timeout"), spec.get("concurrency", 1))
    elif kind == PRECOMPUTED:
        path = Path(spec["csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        matcher = import_score_matrix(path)
    else:
        raise ConfigError(f"unknown matcher kind {kind!r}")
    if spec.get("symmetrize"):
        matcher = SymmetrizedMatcher(matcher)
    return matcher


class ScoreCache:
    """Scores keyed by (matcher fingerprint, probe key, gallery key).

    Stored as one row ``{gallery: score}`` per probe, so a probe's whole
    candidate list can be looked up at once. ``hits`` and ``misses`` count
    lookups served and comparisons computed.
    """

    def __init__(self):
        self._rows: dict[str, dict[TemplateKey, dict[TemplateKey, float]]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def rows(self, fingerprint) -> dict[TemplateKey, dict[TemplateKey, float]]:
        """The live ``probe -> {gallery: score}`` mapping of one matcher."""
        with self._lock:
            return self._rows.setdefault(fingerprint, {})

    def get(self, fingerprint, probe, gallery):
        return self._rows.get(fingerprint, {}).get(probe, {}).get(gallery)

    def put(self, fingerprint, probe, gallery, score):
        self.put_many(fingerprint, [(probe, gallery, score)])

    def put_many(self, fingerprint, items):
        rows = self.rows(fingerprint)
        with self._lock:
            for probe, gallery, score in items:
                row = rows.get(probe)
                if row is None:
                    row = rows[probe] = {}
                row[gallery] = score

    def __len__(self):
        return sum(len(row) for rows in self._rows.values() for row in rows.values())

    def entries(self, fingerprint):
        rows = self._rows.get(fingerprint, {})
        return sorted((p, g, s) for p, row in rows.items() for g, s in row.items())

    def save(self, directory, fingerprint) -> Path:
        path = Path(directory) / f"scores-{fingerprint[:16]}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_score_matrix(self.entries(fingerprint), path)
        return path

    def load(self, directory, fingerprint) -> int:
        path = Path(directory) / f"scores-{fingerprint[:16]}.csv"
        if not path.is_file():
            return 0
        items = [(probe, gallery, score) for _, probe, gallery, score in read_score_matrix(path)]
        self.put_many(fingerprint, items)
        return len(items)


@dataclass
class _Failure:
    probe: TemplateKey
    gallery: TemplateKey
    error: Exception


# worker-process state, installed once per process by _init_worker
_worker_matcher: Matcher | None = None
_worker_store: TemplateStore | None = None


def _init_worker(matcher, templates):
    global _worker_matcher, _worker_store
    _worker_matcher = matcher
    _worker_store = TemplateStore(templates=templates.values())


def _score_chunk(matcher, store, chunk):
    out = []
    for probe, gallery in chunk:
        try:
            out.append(_checked(matcher.score(probe, gallery, store), probe, gallery))
        except Exception as exc:  # reported back with the pair
            return out, _Failure(probe, gallery, exc)
    return out, None


def _score_chunk_in_worker(chunk):
    return _score_chunk(_worker_matcher, _worker_store, chunk)


def _chunks(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _raise_failure(failure, pair):
    err = failure.error
    msg = f"comparison {pair.probe} -> {pair.gallery} failed: {err}"
    if isinstance(err, ScoreLookupError):
        raise ScoreLookupError(msg, pair=pair) from err
    raise MatcherError(msg, transcript=getattr(err, "transcript", None), pair=pair) from err


_NO_ROW: dict = {}


def _fill(matcher, plan, store, cache, workers):
    """Score the (probe, gallery) pairs of ``plan`` missing from ``cache``; returns a failure or None."""
    rows = cache.rows(matcher.fingerprint)
    todo: list[tuple[TemplateKey, TemplateKey]] = []
    pending = set()
    total = 0
    for probe, galleries in plan:
        total += len(galleries)
        row = rows.get(probe, _NO_ROW)
        for gallery in [g for g in galleries if g not in row]:
            if (probe, gallery) not in pending:
                pending.add((probe, gallery))
                todo.append((probe, gallery))
    cache.hits += total - len(todo)
    if not todo:
        return None
    return _run(matcher, todo, store, cache, matcher.fingerprint, max(1, int(workers)))


def score_rows(
    matcher: Matcher,
    plan: Sequence[tuple[TemplateKey, Sequence[TemplateKey]]],
    store: TemplateStore,
    cache: ScoreCache | None = None,
    workers: int = 1,
) -> list[list[float]]:
    """Score each probe against its gallery list; one list of scores per plan entry."""
    cache = cache if cache is not None else ScoreCache()
    failure = _fill(matcher, plan, store, cache, workers)
    if failure is not None:
        _raise_failure(failure, ComparisonPair(failure.probe, failure.gallery))
    rows = cache.rows(matcher.fingerprint)
    return [list(map(rows[probe].__getitem__, galleries)) for probe, galleries in plan]


def compute_score_matrix(
    matcher: Matcher,
    pairs: Sequence,
    store: TemplateStore,
    cache: ScoreCache | None = None,
    workers: int = 1,
) -> list[ScoreRecord]:
    """Score every pair, in input order, reusing and filling ``cache``.

    ``pairs`` holds anything with ``probe``, ``gallery`` and optionally ``label``.
    """
    cache = cache if cache is not None else ScoreCache()
    failure = _fill(matcher, [(p.probe, (p.gallery,)) for p in pairs], store, cache, workers)
    if failure is not None:
        pair = next(p for p in pairs if (p.probe, p.gallery) == (failure.probe, failure.gallery))
        _raise_failure(failure, pair)
    rows = cache.rows(matcher.fingerprint)
    return [ScoreRecord(p.probe, p.gallery, rows[p.probe][p.gallery], getattr(p, "label", None)) for p in pairs]


def _run(matcher, todo, store, cache, fp, workers):
    def commit(chunk, result):
        scores, failure = result
        cache.put_many(fp, [(probe, gallery, s) for (probe, gallery), s in zip(chunk, scores)])
        cache.misses += len(scores)
        return failure

    if isinstance(matcher, ExternalMatcher) or (
        isinstance(matcher, SymmetrizedMatcher) and isinstance(matcher.inner, ExternalMatcher)
    ):
        limit = getattr(matcher, "concurrency", None) or getattr(matcher.inner, "concurrency", 1)
        with ThreadPoolExecutor(max_workers=max(limit, workers)) as pool:
            results = pool.map(lambda item: _score_chunk(matcher, store, [item]), todo)
            for item, result in zip(todo, results):
                failure = commit([item], result)
                if failure is not None:
                    return failure
        return None

    if workers == 1 or isinstance(matcher, PrecomputedMatcher) or len(todo) < 2 * workers:
        return commit(todo, _score_chunk(matcher, store, todo))

    keys = {k for p, g in todo for k in (p, g)}
    templates = store.load(sorted(keys))
    size = max(32, len(todo) // (workers * 8) + 1)
    chunks = list(_chunks(todo, size))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(matcher, templates)) as pool:
        for chunk, result in zip(chunks, pool.map(_score_chunk_in_worker, chunks)):
            failure = commit(chunk, result)
            if failure is not None:
                return failure
    return None


@dataclass
class SymmetryReport:
    """Outcome of a symmetry check; ``symmetric`` is None when it could not be decided."""

    tolerance: float
    deviations: list[tuple[TemplateKey, TemplateKey, float]] = field(default_factory=list)
    symmetric: bool | None = None
    reason: str = ""

    @property
    def max_deviation(self) -> float | None:
        return max((d for _, _, d in self.deviations), default=None)

    @property
    def known(self) -> bool:
        return self.symmetric is not None

    def to_dict(self) -> dict:
        return {
            "symmetric": self.symmetric,
            "tolerance": self.tolerance,
            "pairs_checked": len(self.deviations),
            "max_deviation": self.max_deviation,
            "reason": self.reason,
        }


def check_symmetry(matcher: Matcher, sample_pairs: Iterable, store: TemplateStore, tolerance: float = 0.0) -> SymmetryReport:
    sample_pairs = list(sample_pairs)
    if not sample_pairs:
        raise ConfigError("symmetry check needs at least one pair")
    report = SymmetryReport(tolerance)
    for pair in sample_pairs:
        try:
            forward = _checked(matcher.score(pair.probe, pair.gallery, store), pair.probe, pair.gallery)
            backward = _checked(matcher.score(pair.gallery, pair.probe, store), pair.gallery, pair.probe)
        except ScoreLookupError as exc:
            report.symmetric = None
            report.reason = f"symmetry unknown: {exc}"
            return report
        report.deviations.append((pair.probe, pair.gallery, abs(forward - backward)))
    report.symmetric = report.max_deviation <= tolerance
    return report
