"""Clip files, dataset manifests, and the synthetic motion dataset.

Clips live on disk as "VCLP" files: a little-endian header (magic,
version, C, T, H, W as u32) followed by C·T·H·W float32 values in
c,t,h,w row-major order.  A manifest is a TSV with one
``relative-path<TAB>label`` line per clip.

The synthetic generator renders one textured square per clip moving on a
toroidal canvas.  Texture, start position, and background are drawn the
same way for every class; only the trajectory differs, so no single
frame carries any class information — the label is purely temporal.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError

CLIP_MAGIC = b"VCLP"
CLIP_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

MOTION_CLASSES = (
    "translate-right",
    "translate-left",
    "translate-up",
    "translate-down",
    "clockwise-orbit",
    "counter-clockwise-orbit",
)


def write_clip(path, clip: np.ndarray) -> None:
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise FormatError(f"clip must be C,T,H,W, got shape {clip.shape}")
    if not np.all(np.isfinite(clip)):
        raise NumericError(f"refusing to write non-finite clip to {path}")
    c, t, h, w = clip.shape
    payload = np.ascontiguousarray(clip, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, c, t, h, w))
        f.write(payload)


def read_clip(path) -> np.ndarray:
    """Read a clip file back as float64; errors name the bad byte offset."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(data)}")
    magic, version, c, t, h, w = _HEADER.unpack_from(data, 0)
    if magic != CLIP_MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0")
    if version != CLIP_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    expected = 4 * c * t * h * w
    if len(data) - _HEADER.size != expected:
        raise FormatError(
            f"{path}: payload has {len(data) - _HEADER.size} bytes, expected {expected}"
            f" at byte offset {_HEADER.size}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return values.astype(np.float64).reshape(c, t, h, w)


def write_manifest(path, entries: list[tuple[str, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rel, label in entries:
            f.write(f"{rel}\t{int(label)}\n")


def read_manifest(path) -> list[tuple[str, int]]:
    entries = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        try:
            rel, label = line.split("\t")
            entries.append((rel, int(label)))
        except ValueError as exc:
            raise FormatError(f"{path}:{line_no}: bad manifest line {line!r}") from exc
    return entries


def load_dataset(manifest_path) -> tuple[list[np.ndarray], list[int]]:
    """Read every clip referenced by a manifest, relative to its directory."""
    manifest_path = Path(manifest_path)
    clips, labels = [], []
    for rel, label in read_manifest(manifest_path):
        clips.append(read_clip(manifest_path.parent / rel))
        labels.append(label)
    return clips, labels


# ---------------------------------------------------------------------------
# synthetic moving-square dataset


@dataclass(frozen=True)
class SyntheticSpec:
    num_clips: int = 200
    classes: tuple[str, ...] = MOTION_CLASSES
    shape: tuple[int, int, int, int] = (3, 8, 16, 16)
    texture_noise: float = 0.25
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if self.num_clips < 0:
            raise ConfigError("num_clips must be non-negative")
        if not self.classes:
            raise ConfigError("need at least one motion class")
        unknown = [c for c in self.classes if c not in MOTION_CLASSES]
        if unknown:
            raise ConfigError(f"unknown motion classes {unknown}; known: {MOTION_CLASSES}")
        if len(self.shape) != 4 or any(v < 1 for v in self.shape):
            raise ConfigError(f"bad clip shape {self.shape}")
        if self.texture_noise < 0:
            raise ConfigError("texture_noise must be non-negative")


def _square_side(h: int, w: int) -> int:
    return max(2, min(h, w) // 3)


# Every class gets a distinct pace so that, like real actions, no class
# is the flip/rotation image of another: the label stays decodable from
# transformation-invariant temporal structure alone.  (A rotation maps a
# right-mover onto an up-mover; equal speeds would therefore make the
# classes collapse under any transformation-consistent representation.)
_TRANSLATE_DELTAS = {
    "translate-right": (0, 1),
    "translate-left": (0, -1),
    "translate-up": (-1, 0),
    "translate-down": (1, 0),
}
_TRANSLATE_SPEEDS = {
    "translate-right": 1,
    "translate-left": 2,
    "translate-up": 3,
    "translate-down": 4,
}
_ORBIT_DIRECTIONS = {"clockwise-orbit": 1.0, "counter-clockwise-orbit": -1.0}
_ORBIT_RADII = {"clockwise-orbit": 3 / 16, "counter-clockwise-orbit": 5 / 16}


def trajectory(
    motion: str,
    start: tuple[int, int],
    theta0: float,
    num_frames: int,
    h: int,
    w: int,
    speed: int | None = None,
) -> list[tuple[int, int]]:
    """Integer top-left positions per frame on the (h, w) torus.

    Translations move ``speed`` px per frame (per-class default);
    orbits complete one revolution per clip around the start point, at a
    per-class radius.  Reversing time maps a right trajectory onto a
    left one (at the same explicit speed) with a shifted start, which
    the generator tests rely on.
    """
    r0, c0 = start
    positions = []
    if motion in _TRANSLATE_DELTAS:
        dr, dc = _TRANSLATE_DELTAS[motion]
        v = _TRANSLATE_SPEEDS[motion] if speed is None else int(speed)
        for t in range(num_frames):
            positions.append(((r0 + dr * v * t) % h, (c0 + dc * v * t) % w))
    elif motion in _ORBIT_DIRECTIONS:
        direction = _ORBIT_DIRECTIONS[motion]
        radius = _ORBIT_RADII[motion] * min(h, w)
        for t in range(num_frames):
            angle = theta0 + direction * 2.0 * math.pi * t / num_frames
            rr = int(round(r0 + radius * math.sin(angle))) % h
            cc = int(round(c0 + radius * math.cos(angle))) % w
            positions.append((rr, cc))
    else:
        raise ConfigError(f"unknown motion class {motion!r}")
    return positions


def render_moving_square(
    texture: np.ndarray,
    background: np.ndarray,
    positions: list[tuple[int, int]],
) -> np.ndarray:
    """Paste a C×s×s texture onto a static C×H×W background per frame.

    Positions index the square's top-left corner and wrap toroidally, so
    the square never leaves the canvas.
    """
    c, h, w = background.shape
    side = texture.shape[1]
    clip = np.empty((c, len(positions), h, w), dtype=np.float64)
    for t, (r0, c0) in enumerate(positions):
        frame = background.copy()
        rows = (r0 + np.arange(side)) % h
        cols = (c0 + np.arange(side)) % w
        frame[:, rows[:, None], cols[None, :]] = texture
        clip[:, t] = frame
    return clip


def _f32(values: np.ndarray) -> np.ndarray:
    # quantize to float32 so in-memory clips equal their on-disk round trip
    return values.astype(np.float32).astype(np.float64)


def make_clip(spec: SyntheticSpec, motion: str, rng: np.random.Generator) -> np.ndarray:
    """One random clip of the given class (texture/start are class-free)."""
    c, t, h, w = spec.shape
    side = _square_side(h, w)
    texture = _f32(rng.uniform(0.4, 1.0, size=(c, side, side)))
    background = _f32(rng.normal(0.0, spec.texture_noise, size=(c, h, w)))
    start = (int(rng.integers(h)), int(rng.integers(w)))
    theta0 = float(rng.uniform(0.0, 2.0 * math.pi))
    return render_moving_square(texture, background, trajectory(motion, start, theta0, t, h, w))


def generate_clips(spec: SyntheticSpec) -> tuple[list[np.ndarray], list[int]]:
    """The in-memory dataset: clips plus integer labels, balanced by
    round-robin over the class list; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    clips, labels = [], []
    for i in range(spec.num_clips):
        label = i % len(spec.classes)
        clips.append(make_clip(spec, spec.classes[label], rng))
        labels.append(label)
    return clips, labels


def gen_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write the dataset as clip files plus a manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips, labels = generate_clips(spec)
    entries = []
    for i, (clip, label) in enumerate(zip(clips, labels)):
        rel = f"clip_{i:05d}.vclp"
        write_clip(out_dir / rel, clip)
        entries.append((rel, label))
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, entries)
    return manifest
