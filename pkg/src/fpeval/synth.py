"""Synthetic minutiae templates and databases with known genuine/impostor structure.

Minutiae are placed uniformly with a minimum spacing; there is no ridge-flow
model. Impressions of a finger are noisy rigid copies of one base template.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, GenerationError
from .templates import (
    BIFURCATION,
    RIDGE_ENDING,
    DatabaseManifest,
    Minutia,
    MinutiaeTemplate,
    write_manifest,
    write_xyt,
)

MIN_SPACING = 8.0
_KINDS = (RIDGE_ENDING, BIFURCATION)


@dataclass(frozen=True)
class SynthParams:
    minutiae_count: tuple[int, int] = (30, 50)
    width: int = 388
    height: int = 374
    rotation: float = 15.0
    translation: float = 25.0
    jitter: float = 2.0
    drop_prob: float = 0.1
    spurious: tuple[int, int] = (0, 5)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.minutiae_count
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid minutiae_count range {self.minutiae_count}")
        slo, shi = self.spurious
        if slo < 0 or shi < slo:
            raise ConfigError(f"invalid spurious range {self.spurious}")
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"invalid field {self.width}x{self.height}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError(f"drop_prob {self.drop_prob} outside [0, 1]")
        if self.rotation < 0 or self.translation < 0 or self.jitter < 0:
            raise ConfigError("perturbation magnitudes must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def noiseless(cls, **kw) -> "SynthParams":
        """Parameters under which every impression equals its base template."""
        return cls(rotation=0.0, translation=0.0, jitter=0.0, drop_prob=0.0, spurious=(0, 0), **kw)


def finger_seed(params: SynthParams, finger: int) -> int:
    return int(np.random.SeedSequence([params.seed, finger]).generate_state(1, np.uint64)[0])


def _max_points(width, height, spacing=MIN_SPACING):
    # a square cell of side spacing/sqrt(2) holds at most one point
    cell = spacing / math.sqrt(2)
    return math.ceil(width / cell) * math.ceil(height / cell)


def synth_template(params: SynthParams, seed: int, finger_id: str = "1", source_db: str = "") -> MinutiaeTemplate:
    rng = np.random.default_rng(seed)
    lo, hi = params.minutiae_count
    count = int(rng.integers(lo, hi + 1))
    if count > _max_points(params.width, params.height):
        raise GenerationError(
            f"cannot place {count} minutiae {MIN_SPACING:g}px apart in {params.width}x{params.height}"
        )
    pts: list[tuple[int, int]] = []
    attempts = 0
    while len(pts) < count:
        attempts += 1
        if attempts > 200 * count:
            raise GenerationError(f"gave up placing {count} minutiae after {attempts} attempts")
        x = int(rng.integers(0, params.width))
        y = int(rng.integers(0, params.height))
        if all((x - px) ** 2 + (y - py) ** 2 >= MIN_SPACING**2 for px, py in pts):
            pts.append((x, y))
    angles = rng.integers(0, 360, count)
    kinds = rng.integers(0, 2, count)
    quality = rng.integers(40, 101, count)
    minutiae = tuple(
        Minutia(x, y, int(a), _KINDS[int(k)], int(q)) for (x, y), a, k, q in zip(pts, angles, kinds, quality)
    )
    return MinutiaeTemplate(finger_id, 1, minutiae, params.width, params.height, source_db)


def _rotate(x, y, cx, cy, degrees):
    r = math.radians(degrees)
    c, s = math.cos(r), math.sin(r)
    return cx + c * (x - cx) - s * (y - cy), cy + s * (x - cx) + c * (y - cy)


def synth_impression(
    base: MinutiaeTemplate,
    params: SynthParams,
    seed: int,
    impression_id: int = 1,
) -> MinutiaeTemplate:
    """Seeded rigid motion + positional jitter + drops + spurious minutiae of ``base``."""
    rng = np.random.default_rng(seed)
    w, h = base.width or params.width, base.height or params.height
    rot = float(rng.uniform(-params.rotation, params.rotation)) if params.rotation else 0.0
    tx = float(rng.uniform(-params.translation, params.translation)) if params.translation else 0.0
    ty = float(rng.uniform(-params.translation, params.translation)) if params.translation else 0.0
    cx, cy = w / 2.0, h / 2.0

    out = []
    for mt in base.minutiae:
        keep = rng.random() >= params.drop_prob
        jx, jy = rng.normal(0.0, params.jitter, 2) if params.jitter else (0.0, 0.0)
        if not keep:
            continue
        x, y = _rotate(mt.x, mt.y, cx, cy, rot)
        x, y = round(x + tx + jx), round(y + ty + jy)
        if 0 <= x < w and 0 <= y < h:
            out.append(Minutia(x, y, round(mt.angle + rot) % 360, mt.kind, mt.quality))

    lo, hi = params.spurious
    for _ in range(int(rng.integers(lo, hi + 1))):
        out.append(
            Minutia(
                int(rng.integers(0, w)),
                int(rng.integers(0, h)),
                int(rng.integers(0, 360)),
                _KINDS[int(rng.integers(0, 2))],
                int(rng.integers(20, 61)),
            )
        )
    return replace(base, impression_id=impression_id, minutiae=tuple(out), warnings=(), path=None)


def rigid_transform(template: MinutiaeTemplate, dx: float, dy: float, dtheta: float) -> MinutiaeTemplate:
    """Rotate about the image centre by ``dtheta`` degrees, then translate; coordinates rounded.

    Raises GenerationError if a minutia leaves the image.
    """
    cx, cy = template.width / 2.0, template.height / 2.0
    out = []
    for mt in template.minutiae:
        x, y = _rotate(mt.x, mt.y, cx, cy, dtheta)
        x, y = round(x + dx), round(y + dy)
        if x < 0 or y < 0 or (template.width and x >= template.width) or (template.height and y >= template.height):
            raise GenerationError(f"minutia ({mt.x}, {mt.y}) leaves the image under the transform")
        out.append(Minutia(x, y, round(mt.angle + dtheta) % 360, mt.kind, mt.quality))
    return replace(template, minutiae=tuple(out), path=None)


def pad_template(template: MinutiaeTemplate, margin: int) -> MinutiaeTemplate:
    """Embed ``template`` in a canvas enlarged by ``margin`` pixels on every side."""
    moved = tuple(replace(mt, x=mt.x + margin, y=mt.y + margin) for mt in template.minutiae)
    return replace(
        template, minutiae=moved, width=template.width + 2 * margin, height=template.height + 2 * margin, path=None
    )


def impression_seed(fseed: int, db_name: str, impression: int) -> list[int]:
    return [fseed, zlib.crc32(db_name.encode()), impression]


def synth_finger(params: SynthParams, fseed: int, finger: int, m: int, db_name: str) -> list[MinutiaeTemplate]:
    base = synth_template(params, fseed, str(finger), db_name)
    return [synth_impression(base, params, impression_seed(fseed, db_name, j), j) for j in range(1, m + 1)]


def synth_database(
    params: SynthParams,
    n: int,
    m: int,
    out_dir=None,
    name: str = "synth",
    finger_seeds: dict[int, int] | None = None,
) -> tuple[DatabaseManifest, list[MinutiaeTemplate]]:
    """Generate ``n`` fingers x ``m`` impressions.

    ``finger_seeds`` overrides the base-template seed of selected fingers; two
    databases sharing a seed for some finger contain the same physical finger.
    With ``out_dir`` the templates and ``manifest.json`` are written there.
    """
    if n < 1 or m < 1:
        raise ConfigError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    finger_seeds = finger_seeds or {}
    templates = []
    for i in range(1, n + 1):
        fseed = finger_seeds.get(i, finger_seed(params, i))
        templates.extend(synth_finger(params, fseed, i, m, name))

    root = Path(out_dir) if out_dir is not None else Path(name)
    entries = {}
    if out_dir is not None:
        root.mkdir(parents=True, exist_ok=True)
    for tpl in templates:
        path = (root / f"{tpl.finger_id}_{tpl.impression_id}.xyt").resolve()
        if out_dir is not None:
            write_xyt(tpl, path)
        object.__setattr__(tpl, "path", path if out_dir is not None else None)
        entries[(int(tpl.finger_id), tpl.impression_id)] = path
    manifest = DatabaseManifest(name, n, m, entries)
    if out_dir is not None:
        write_manifest(manifest, root / "manifest.json")
    return manifest, templates
