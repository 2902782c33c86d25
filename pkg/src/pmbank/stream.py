"""Synthetic scene-structured feature streams and their binary file format.

File layout (little-endian)::

    b"PMBS"  u32 version  u32 base_fps  u32 H  u32 W  u32 D
    u64 frame_count  u32 scene_count
    scene_count x (u32 id, u64 start_tick, u64 end_tick, D x f32 archetype)
    frame_count x (u64 tick, H*W*D x f32 row-major)
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PMBError, Timestamp

MAGIC = b"PMBS"
VERSION = 1

_HEADER = struct.Struct("<4sIIIIIQI")
_SCENE_HEAD = struct.Struct("<IQQ")
_TICK = struct.Struct("<Q")


class InvalidSpec(PMBError):
    pass


class StreamFileError(PMBError):
    pass


class IoError(StreamFileError):
    pass


class BadMagic(StreamFileError):
    pass


class VersionMismatch(StreamFileError):
    pass


class TruncatedFile(StreamFileError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class SceneAnnotation:
    scene_id: int
    start_tick: int
    end_tick: int  # exclusive
    archetype: np.ndarray

    def contains(self, tick: int) -> bool:
        return self.start_tick <= tick < self.end_tick

    def __eq__(self, other):
        if not isinstance(other, SceneAnnotation):
            return NotImplemented
        return (
            (self.scene_id, self.start_tick, self.end_tick) == (other.scene_id, other.start_tick, other.end_tick)
            and self.archetype.tobytes() == other.archetype.tobytes()
        )


@dataclass(frozen=True)
class StreamSpec:
    seed: int = 0
    base_fps: int = 8
    duration_s: int = 40
    height: int = 16
    width: int = 16
    depth: int = 8
    scene_count: int = 4
    noise_sigma: float = 0.1

    @property
    def frame_count(self) -> int:
        return self.duration_s * self.base_fps

    def validate(self):
        for name in ("base_fps", "duration_s", "height", "width", "depth", "scene_count"):
            if getattr(self, name) <= 0:
                raise InvalidSpec(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise InvalidSpec(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.seed < 0:
            raise InvalidSpec(f"seed must be non-negative, got {self.seed}")
        if self.scene_count > self.frame_count:
            raise InvalidSpec(f"{self.scene_count} scenes do not fit in {self.frame_count} frames")


@dataclass
class Stream:
    """Frames as one (N, H, W, D) float32 block plus their ticks and scene table."""

    base_fps: int
    ticks: np.ndarray
    grids: np.ndarray
    scenes: list[SceneAnnotation]

    def __len__(self):
        return len(self.ticks)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.grids.shape[1:])

    def timestamp(self, i: int) -> Timestamp:
        return Timestamp(int(self.ticks[i]), self.base_fps)

    def frames(self):
        for i in range(len(self)):
            yield self.timestamp(i), self.grids[i]

    @property
    def end_tick(self) -> int:
        return int(self.ticks[-1]) + 1 if len(self) else 0

    def __eq__(self, other):
        if not isinstance(other, Stream):
            return NotImplemented
        return (
            self.base_fps == other.base_fps
            and np.array_equal(self.ticks, other.ticks)
            and self.grids.shape == other.grids.shape
            and self.grids.tobytes() == other.grids.tobytes()
            and self.scenes == other.scenes
        )


def scene_boundaries(frame_count: int, scene_count: int) -> list[int]:
    return [s * frame_count // scene_count for s in range(scene_count)]


def gen_synthetic_stream(spec: StreamSpec) -> Stream:
    """Each frame is its scene's unit-norm archetype broadcast over H x W plus Gaussian noise."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.frame_count
    starts = scene_boundaries(n, spec.scene_count)
    ends = starts[1:] + [n]

    archetypes = rng.standard_normal((spec.scene_count, spec.depth))
    norms = np.linalg.norm(archetypes, axis=1, keepdims=True)
    archetypes = (archetypes / np.where(norms == 0, 1, norms)).astype(np.float32)

    grids = np.empty((n, spec.height, spec.width, spec.depth), dtype=np.float32)
    scenes = []
    for s, (start, end) in enumerate(zip(starts, ends)):
        noise = rng.standard_normal((end - start, spec.height, spec.width, spec.depth))
        grids[start:end] = archetypes[s] + spec.noise_sigma * noise
        scenes.append(SceneAnnotation(s, start, end, archetypes[s].copy()))
    return Stream(spec.base_fps, np.arange(n, dtype=np.uint64), grids, scenes)


# -- file I/O -----------------------------------------------------------------


def encode_stream(stream: Stream) -> bytes:
    h, w, d = stream.grids.shape[1:]
    parts = [_HEADER.pack(MAGIC, VERSION, stream.base_fps, h, w, d, len(stream), len(stream.scenes))]
    for scene in stream.scenes:
        parts.append(_SCENE_HEAD.pack(scene.scene_id, scene.start_tick, scene.end_tick))
        parts.append(np.asarray(scene.archetype, dtype="<f4").tobytes())
    frame_dtype = np.dtype([("tick", "<u8"), ("grid", "<f4", (h * w * d,))])
    records = np.empty(len(stream), dtype=frame_dtype)
    records["tick"] = stream.ticks
    records["grid"] = stream.grids.reshape(len(stream), -1)
    parts.append(records.tobytes())
    return b"".join(parts)


def decode_stream(blob: bytes) -> Stream:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedFile("header is incomplete", len(blob))
    _, version, base_fps, h, w, d, frame_count, scene_count = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, this reader supports {VERSION}")

    offset = _HEADER.size
    scenes = []
    scene_size = _SCENE_HEAD.size + 4 * d
    for _ in range(scene_count):
        if offset + scene_size > len(blob):
            raise TruncatedFile("scene table is incomplete", offset)
        scene_id, start, end = _SCENE_HEAD.unpack_from(blob, offset)
        arch = np.frombuffer(blob, dtype="<f4", count=d, offset=offset + _SCENE_HEAD.size).astype(np.float32)
        scenes.append(SceneAnnotation(scene_id, start, end, arch))
        offset += scene_size

    frame_size = _TICK.size + 4 * h * w * d
    available = (len(blob) - offset) // frame_size
    if available < frame_count:
        raise TruncatedFile(f"expected {frame_count} frames, found {available}", offset + available * frame_size)
    frame_dtype = np.dtype([("tick", "<u8"), ("grid", "<f4", (h * w * d,))])
    records = np.frombuffer(blob, dtype=frame_dtype, count=frame_count, offset=offset)
    ticks = records["tick"].astype(np.uint64)
    grids = records["grid"].astype(np.float32).reshape(frame_count, h, w, d)
    return Stream(base_fps, ticks, grids, scenes)


def atomic_write(path, data: bytes | str):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_stream(path, stream: Stream):
    try:
        atomic_write(path, encode_stream(stream))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_stream(path) -> Stream:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_stream(blob)
