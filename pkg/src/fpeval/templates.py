"""Minutiae templates, fingerprint databases and the on-disk formats for both.

A template is one impression of one finger, stored as an ``.xyt`` text file:
one minutia per line, whitespace separated integers ``x y theta [quality]``.
A database is ``n`` fingers times ``m`` impressions, described by a JSON
manifest mapping each 1-based ``(finger, impression)`` to a template file.
"""

from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import CompletenessError, ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

RIDGE_ENDING = "ridge_ending"
BIFURCATION = "bifurcation"
UNKNOWN = "unknown"
MINUTIA_KINDS = (RIDGE_ENDING, BIFURCATION, UNKNOWN)

MIN_ALIGNABLE_MINUTIAE = 4
MANIFEST_NAME = "manifest.json"
DEFAULT_NAMING = "{finger}_{impression}.xyt"


class TemplateKey(NamedTuple):
    """Identity of one impression: (database name, finger index, impression index)."""

    db: str
    finger: int
    impression: int

    @property
    def finger_key(self) -> "FingerKey":
        return FingerKey(self.db, self.finger)

    def __str__(self):
        return f"{self.db}:{self.finger}_{self.impression}"


class FingerKey(NamedTuple):
    db: str
    finger: int

    def __str__(self):
        return f"{self.db}:{self.finger}"


@dataclass(frozen=True)
class Minutia:
    x: int
    y: int
    angle: int
    kind: str = UNKNOWN
    quality: int = 100

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"negative minutia coordinate ({self.x}, {self.y})")
        if not 0 <= self.angle < 360:
            raise ValidationError(f"minutia angle {self.angle} outside [0, 360)")
        if not 0 <= self.quality <= 100:
            raise ValidationError(f"minutia quality {self.quality} outside [0, 100]")
        if self.kind not in MINUTIA_KINDS:
            raise ValidationError(f"unknown minutia kind {self.kind!r}")


@dataclass(frozen=True)
class MinutiaeTemplate:
    finger_id: str
    impression_id: int
    minutiae: tuple[Minutia, ...]
    width: int = 0
    height: int = 0
    source_db: str = ""
    warnings: tuple[str, ...] = ()
    path: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.impression_id < 1:
            raise ValidationError(f"impression index must be >= 1, got {self.impression_id}")
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        for k, mt in enumerate(self.minutiae):
            if (self.width and mt.x >= self.width) or (self.height and mt.y >= self.height):
                raise ValidationError(
                    f"minutia {k} at ({mt.x}, {mt.y}) outside {self.width}x{self.height} image"
                )

    @property
    def key(self) -> TemplateKey:
        return TemplateKey(self.source_db, int(self.finger_id), self.impression_id)

    def __len__(self):
        return len(self.minutiae)

    @cached_property
    def array(self) -> np.ndarray:
        """``(n, 4)`` int64 array of x, y, angle, quality."""
        arr = np.array(
            [(mt.x, mt.y, mt.angle, mt.quality) for mt in self.minutiae], dtype=np.int64
        )
        return arr.reshape(len(self.minutiae), 4)


def parse_xyt(
    text: str,
    finger_id: str,
    impression_id: int,
    source_db: str = "",
    width: int = 0,
    height: int = 0,
) -> MinutiaeTemplate:
    minutiae = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(fields)}", line=lineno)
        try:
            values = [int(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-integer token in {line.strip()!r}", line=lineno) from None
        x, y, theta = values[:3]
        quality = values[3] if len(values) == 4 else 100
        try:
            minutiae.append(Minutia(x, y, theta % 360, UNKNOWN, quality))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    if not minutiae:
        raise ParseError("no minutiae")

    warnings: tuple[str, ...] = ()
    if len(minutiae) < MIN_ALIGNABLE_MINUTIAE:
        warnings = (f"only {len(minutiae)} minutiae; too few to align",)
        log.warning("template %s/%s: %s", finger_id, impression_id, warnings[0])
    return MinutiaeTemplate(
        finger_id, impression_id, tuple(minutiae), width, height, source_db, warnings
    )


def format_xyt(template: MinutiaeTemplate) -> str:
    return "".join(f"{mt.x} {mt.y} {mt.angle} {mt.quality}\n" for mt in template.minutiae)


def read_xyt(path, finger_id, impression_id, source_db="") -> MinutiaeTemplate:
    path = Path(path)
    try:
        tpl = parse_xyt(path.read_text(encoding="ascii"), finger_id, impression_id, source_db)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None
    object.__setattr__(tpl, "path", path)
    return tpl


def write_xyt(template: MinutiaeTemplate, path) -> None:
    # newline="" keeps LF endings on every platform
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(format_xyt(template))


@dataclass(frozen=True)
class DatabaseManifest:
    name: str
    n: int
    m: int
    entries: dict[tuple[int, int], Path]

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ConfigError(f"database needs n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        missing = [
            (i, j)
            for i in range(1, self.n + 1)
            for j in range(1, self.m + 1)
            if (i, j) not in self.entries
        ]
        if missing:
            raise CompletenessError(missing)
        if len(self.entries) != self.n * self.m:
            extra = sorted(set(self.entries) - {(i, j) for i in range(1, self.n + 1) for j in range(1, self.m + 1)})
            raise ValidationError(f"entries outside 1..{self.n} x 1..{self.m}: {extra}")
        ordered = {k: Path(self.entries[k]) for k in sorted(self.entries)}
        object.__setattr__(self, "entries", ordered)

    def key(self, finger: int, impression: int) -> TemplateKey:
        return TemplateKey(self.name, finger, impression)

    def keys(self) -> Iterator[TemplateKey]:
        for i, j in self.entries:
            yield TemplateKey(self.name, i, j)

    def path(self, key: TemplateKey) -> Path:
        return self.entries[(key.finger, key.impression)]

    def __len__(self):
        return len(self.entries)


def _check_naming(naming: str) -> None:
    fields = {name for _, name, _, _ in string.Formatter().parse(naming) if name is not None}
    if fields != {"finger", "impression"}:
        raise ConfigError(f"naming scheme {naming!r} needs {{finger}} and {{impression}} placeholders")


def load_manifest(root, naming: str = DEFAULT_NAMING, n: int = 100, m: int = 8, name=None) -> DatabaseManifest:
    """Build a manifest from a directory whose file names follow ``naming``."""
    root = Path(root)
    _check_naming(naming)
    if not root.is_dir():
        raise CompletenessError([], f"database root {root} does not exist")
    entries, missing = {}, []
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            path = root / naming.format(finger=i, impression=j)
            if path.is_file():
                entries[(i, j)] = path.resolve()
            else:
                missing.append((i, j))
    if missing:
        raise CompletenessError(missing)
    return DatabaseManifest(name or root.resolve().name, n, m, entries)


def manifest_to_dict(manifest: DatabaseManifest, relative_to=None) -> dict:
    entries = []
    for (i, j), path in manifest.entries.items():
        if relative_to is not None:
            try:
                path = Path(path).resolve().relative_to(Path(relative_to).resolve())
            except ValueError:
                pass
        entries.append({"finger": i, "impression": j, "path": path.as_posix()})
    return {"name": manifest.name, "n": manifest.n, "m": manifest.m, "entries": entries}


def write_manifest(manifest: DatabaseManifest, path) -> Path:
    """Write manifest JSON. Entry paths are stored relative to the file's directory when possible."""
    path = Path(path)
    doc = manifest_to_dict(manifest, relative_to=path.parent)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> DatabaseManifest:
    """Read a manifest JSON file; a directory means its ``manifest.json``."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CompletenessError([], f"manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    try:
        entries = {}
        for e in doc["entries"]:
            p = Path(e["path"])
            if not p.is_absolute():
                p = (path.parent / p).resolve()
            entries[(int(e["finger"]), int(e["impression"]))] = p
        return DatabaseManifest(doc["name"], int(doc["n"]), int(doc["m"]), entries)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed manifest ({exc})") from None


class TemplateStore:
    """Resolves template keys to parsed templates, loading files on first use."""

    def __init__(self, manifests: Iterable[DatabaseManifest] = (), templates: Iterable[MinutiaeTemplate] = ()):
        self.manifests: dict[str, DatabaseManifest] = {}
        self._templates: dict[TemplateKey, MinutiaeTemplate] = {}
        for man in manifests:
            self.add_manifest(man)
        for tpl in templates:
            self._templates[tpl.key] = tpl

    def add_manifest(self, manifest: DatabaseManifest) -> None:
        known = self.manifests.get(manifest.name)
        if known is not None and known != manifest:
            raise ValidationError(f"two different databases named {manifest.name!r}")
        self.manifests[manifest.name] = manifest

    def path(self, key: TemplateKey) -> Path | None:
        man = self.manifests.get(key.db)
        if man is None:
            tpl = self._templates.get(key)
            return tpl.path if tpl else None
        return man.path(key)

    def __getitem__(self, key: TemplateKey) -> MinutiaeTemplate:
        tpl = self._templates.get(key)
        if tpl is None:
            man = self.manifests.get(key.db)
            if man is None or (key.finger, key.impression) not in man.entries:
                raise KeyError(key)
            tpl = read_xyt(man.path(key), str(key.finger), key.impression, key.db)
            self._templates[key] = tpl
        return tpl

    def __contains__(self, key):
        if key in self._templates:
            return True
        man = self.manifests.get(key.db)
        return man is not None and (key.finger, key.impression) in man.entries

    def load(self, keys: Iterable[TemplateKey]) -> dict[TemplateKey, MinutiaeTemplate]:
        return {k: self[k] for k in keys}
