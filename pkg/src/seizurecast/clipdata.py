"""Clip container format, synthetic cross-species clip generator, frame
sampling, and pretraining-set assembly.

Container layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"CLPB"
    4       4     version (u32, currently 1)
    8       16    C, T, H, W (u32 each)
    24      4     metadata length L (u32)
    28      L     metadata, UTF-8 "key=value" lines
    28+L    4*C*T*H*W  frames, float32, C-order
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from seizurecast.errors import ConfigError, ContractError, FormatError, LengthError, MagicError, TruncationError
from seizurecast.numerics import Tensor
from seizurecast.seeds import derive_seed

CLIP_MAGIC = b"CLPB"
CLIP_VERSION = 1
_HEADER = struct.Struct("<4sI4II")

SPECIES = ("rodent", "human")
PRETRAIN_CONDITIONS = ("seizure", "normal")
POOL_CONDITIONS = ("preictal", "interictal")
CONDITIONS = PRETRAIN_CONDITIONS + POOL_CONDITIONS
JITTERY = ("seizure", "preictal")

DEFAULT_MEAN = 0.5
DEFAULT_STD = 0.5


@dataclass(frozen=True)
class ClipMeta:
    species: str
    condition: str
    seed: int
    fps: int = 8
    id: str = ""

    def __post_init__(self):
        if self.species not in SPECIES:
            raise ContractError(f"unknown species {self.species!r}")
        if self.condition not in CONDITIONS:
            raise ContractError(f"unknown condition {self.condition!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ContractError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if int(self.fps) <= 0:
            raise ContractError("fps must be positive")
        if any(c in self.id for c in "\n="):
            raise ContractError("clip id may not contain newlines or '='")

    @property
    def label(self) -> int:
        """1 for seizure-bearing conditions (seizure, preictal), else 0."""
        return int(self.condition in JITTERY)

    def to_text(self) -> str:
        return "".join(
            f"{k}={v}\n"
            for k, v in (
                ("species", self.species),
                ("condition", self.condition),
                ("seed", int(self.seed)),
                ("fps", int(self.fps)),
                ("id", self.id),
            )
        )

    @classmethod
    def from_text(cls, text: str) -> "ClipMeta":
        kv = {}
        for line in text.splitlines():
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError("metadata", f"malformed line {line!r}")
            kv[key] = value
        missing = {"species", "condition", "seed", "fps", "id"} - kv.keys()
        if missing:
            raise FormatError("metadata", f"missing keys {sorted(missing)}")
        try:
            return cls(kv["species"], kv["condition"], int(kv["seed"]), int(kv["fps"]), kv["id"])
        except (ValueError, ContractError) as exc:
            raise FormatError("metadata", str(exc)) from exc


@dataclass
class ClipBundle:
    meta: ClipMeta
    frames: np.ndarray  # float32, (C, T, H, W), values in [0, 1]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    @property
    def label(self) -> int:
        return self.meta.label

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClipBundle):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.frames.shape == other.frames.shape
            and self.frames.dtype == other.frames.dtype
            and self.frames.tobytes() == other.frames.tobytes()
        )


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class ClipGeometry:
    channels: int = 1
    frames: int = 40
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if min(self.channels, self.frames, self.height, self.width) <= 0:
            raise ContractError(f"clip dimensions must be positive, got {self}")


_SPECIES_LOOK = {
    # blob (major, minor) std in pixels; background base range, texture std and scale
    "rodent": {"blob": (3.0, 1.5), "base": (0.12, 0.22), "tex_std": 0.06, "tex_scale": 0.8},
    "human": {"blob": (2.6, 2.2), "base": (0.25, 0.35), "tex_std": 0.04, "tex_scale": 3.0},
}
# jitter amplitude (px) at clip start / end
_JITTER_RAMP = {"seizure": (0.6, 2.0), "preictal": (0.3, 1.3)}
_JITTER_FREQ = (0.30, 0.42)  # cycles per raw frame
_NOISE_STD = 0.01


def generate_synthetic_clip(meta: ClipMeta, geometry: ClipGeometry = ClipGeometry()) -> ClipBundle:
    """Render a moving Gaussian blob over a textured background.

    All random draws come from ``meta.seed`` and happen in the same order for
    every condition, so two clips sharing a seed differ only by the jitter
    term. Seizure/preictal clips add a fast oscillation to the blob position
    whose amplitude ramps up linearly over the clip.
    """
    g = geometry
    look = _SPECIES_LOOK[meta.species]
    rng = np.random.default_rng(int(meta.seed))

    base = rng.uniform(*look["base"])
    tex = gaussian_filter(rng.standard_normal((g.channels, g.height, g.width)), sigma=(0, look["tex_scale"], look["tex_scale"]))
    tex *= look["tex_std"] / max(tex.std(), 1e-12)
    background = base + tex

    amplitude = rng.uniform(0.45, 0.6)
    major, minor = look["blob"]
    angle0 = rng.uniform(0, np.pi)
    spin = rng.uniform(-0.02, 0.02)
    lo_y, hi_y = 0.3 * g.height, 0.7 * g.height
    lo_x, hi_x = 0.3 * g.width, 0.7 * g.width
    c0 = np.array([rng.uniform(lo_y, hi_y), rng.uniform(lo_x, hi_x)])
    drift_freq = rng.uniform(0.005, 0.03, size=(2, 2))
    drift_phase = rng.uniform(0, 2 * np.pi, size=(2, 2))
    drift_amp = rng.uniform(1.5, 3.5, size=(2, 2)) * np.array([[g.height], [g.width]]) / 32.0
    jit_freq = rng.uniform(*_JITTER_FREQ, size=2)
    jit_phase = rng.uniform(0, 2 * np.pi, size=2)
    noise = rng.standard_normal((g.channels, g.frames, g.height, g.width)) * _NOISE_STD

    t = np.arange(g.frames, dtype=np.float64)
    pos = c0[:, None] + np.einsum("ak,akt->at", drift_amp, np.sin(2 * np.pi * drift_freq[..., None] * t + drift_phase[..., None]))
    if meta.condition in JITTERY:
        a0, a1 = _JITTER_RAMP[meta.condition]
        ramp = a0 + (a1 - a0) * t / max(g.frames - 1, 1)
        pos = pos + ramp * np.sin(2 * np.pi * jit_freq[:, None] * t + jit_phase[:, None])

    yy, xx = np.mgrid[0 : g.height, 0 : g.width].astype(np.float64)
    frames = np.empty((g.channels, g.frames, g.height, g.width))
    for i in range(g.frames):
        theta = angle0 + spin * i
        dy, dx = yy - pos[0, i], xx - pos[1, i]
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        blob = amplitude * np.exp(-0.5 * ((u / major) ** 2 + (v / minor) ** 2))
        frames[:, i] = background + blob
    frames += noise
    np.clip(frames, 0.0, 1.0, out=frames)
    return ClipBundle(meta, frames.astype(np.float32))


# ---------------------------------------------------------------------------
# container IO


def save_clip(clip: ClipBundle, path: str | os.PathLike) -> None:
    frames = np.ascontiguousarray(clip.frames, dtype="<f4")
    if frames.ndim != 4 or min(frames.shape) <= 0:
        raise ContractError(f"frames must be a non-empty 4-D array, got shape {frames.shape}")
    meta = clip.meta.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, *frames.shape, len(meta)))
        fh.write(meta)
        fh.write(frames.tobytes())


def load_clip(path: str | os.PathLike) -> ClipBundle:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != CLIP_MAGIC:
        raise MagicError("magic", f"expected {CLIP_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < _HEADER.size:
        raise TruncationError("header", f"{len(blob)} bytes, header needs {_HEADER.size}")
    _, version, c, t, h, w, meta_len = _HEADER.unpack_from(blob)
    if version != CLIP_VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if min(c, t, h, w) == 0:
        raise FormatError("dims", f"zero-sized dimension in {(c, t, h, w)}")
    meta_end = _HEADER.size + meta_len
    if len(blob) < meta_end:
        raise TruncationError("metadata", f"declared {meta_len} bytes, {len(blob) - _HEADER.size} present")
    try:
        meta = ClipMeta.from_text(blob[_HEADER.size : meta_end].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError("metadata", "not valid UTF-8") from exc
    expected = 4 * c * t * h * w
    payload = len(blob) - meta_end
    if payload < expected:
        raise TruncationError("payload", f"dims {(c, t, h, w)} need {expected} bytes, found {payload}")
    if payload > expected:
        raise FormatError("payload", f"dims {(c, t, h, w)} need {expected} bytes, found {payload}")
    frames = np.frombuffer(blob, dtype="<f4", offset=meta_end).reshape(c, t, h, w).astype(np.float32)
    return ClipBundle(meta, frames)


def clip_roundtrip(clip: ClipBundle, path: str | os.PathLike) -> ClipBundle:
    save_clip(clip, path)
    return load_clip(path)


# ---------------------------------------------------------------------------
# sampling


def sample_frames(
    clip: ClipBundle,
    T: int = 16,
    rate: int = 2,
    mean: float | Sequence[float] = DEFAULT_MEAN,
    std: float | Sequence[float] = DEFAULT_STD,
) -> Tensor:
    """Take frames 0, rate, ..., (T-1)*rate and normalize per channel."""
    frames = clip.frames
    need = (T - 1) * rate + 1
    if T <= 0 or rate <= 0:
        raise ContractError("T and rate must be positive")
    if frames.shape[1] < need:
        raise LengthError(need, frames.shape[1])
    picked = frames[:, 0 : need : rate]
    c = frames.shape[0]
    mu = np.broadcast_to(np.asarray(mean, dtype=np.float32), (c,)).reshape(c, 1, 1, 1)
    sd = np.broadcast_to(np.asarray(std, dtype=np.float32), (c,)).reshape(c, 1, 1, 1)
    return Tensor(((picked - mu) / sd).astype(np.float32))


# ---------------------------------------------------------------------------
# pretraining sets


class Configuration(str, Enum):
    BASE = "Base"
    H = "+H"
    RY = "+R(Y)"
    RN = "+R(N)"
    RYN = "+R(Y/N)"
    RYN_H = "+R(Y/N)+H"

    @classmethod
    def parse(cls, value: "str | Configuration") -> "Configuration":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown configuration {value!r}; expected one of {[c.value for c in cls]}") from None

    @property
    def slug(self) -> str:
        return {"Base": "base", "+H": "h", "+R(Y)": "ry", "+R(N)": "rn", "+R(Y/N)": "ryn", "+R(Y/N)+H": "ryn_h"}[self.value]


# which (species, condition) subsets each configuration draws
_COMPOSITION = {
    Configuration.BASE: (),
    Configuration.H: (("human", "normal"),),
    Configuration.RY: (("rodent", "seizure"),),
    Configuration.RN: (("rodent", "normal"),),
    Configuration.RYN: (("rodent", "seizure"), ("rodent", "normal")),
    Configuration.RYN_H: (("rodent", "seizure"), ("rodent", "normal"), ("human", "normal")),
}

DEFAULT_COUNTS = {"rodent/seizure": 24, "rodent/normal": 24, "human/normal": 16}


@dataclass
class DatasetSpec:
    """Composition of the pretraining set.

    ``counts`` gives clips per ``"species/condition"``. Rodent-normal clips
    are subsampled without replacement from a larger candidate pool of
    ``rodent_normal_pool`` clips, to balance them against the seizure clips.
    """

    configuration: Configuration = Configuration.RYN_H
    counts: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    rodent_normal_pool: int = 64
    seed: int = 0
    geometry: ClipGeometry = ClipGeometry()

    def __post_init__(self):
        self.configuration = Configuration.parse(self.configuration)
        for key, n in self.counts.items():
            if key not in DEFAULT_COUNTS:
                raise ConfigError(f"unknown subset {key!r}", path="counts")
            if n < 0:
                raise ConfigError("counts must be non-negative", path=f"counts.{key}")
        if self.rodent_normal_pool < self.counts.get("rodent/normal", 0):
            raise ConfigError("pool smaller than requested rodent/normal count", path="rodent_normal_pool")


def _make_clip(species: str, condition: str, index: int, seed: int, geometry: ClipGeometry) -> ClipBundle:
    meta = ClipMeta(species, condition, derive_seed(seed, species, condition, index), id=f"{species}-{condition}-{index:05d}")
    return generate_synthetic_clip(meta, geometry)


def build_pretrain_dataset(spec: DatasetSpec) -> list[ClipBundle]:
    """Rodent clips (seizure then normal) followed by human clips; empty for Base."""
    clips: list[ClipBundle] = []
    for species, condition in _COMPOSITION[spec.configuration]:
        n = spec.counts.get(f"{species}/{condition}", 0)
        if (species, condition) == ("rodent", "normal"):
            pick = np.random.default_rng(derive_seed(spec.seed, "rodent-normal-subsample"))
            indices = np.sort(pick.choice(spec.rodent_normal_pool, size=n, replace=False))
        else:
            indices = np.arange(n)
        clips.extend(_make_clip(species, condition, int(i), spec.seed, spec.geometry) for i in indices)
    return clips


def build_fewshot_pool(seed: int = 0, per_class: int = 20, geometry: ClipGeometry = ClipGeometry()) -> list[ClipBundle]:
    """Human forecasting pool: ``per_class`` preictal clips then ``per_class`` interictal clips."""
    pool = []
    for condition in POOL_CONDITIONS:
        for i in range(per_class):
            meta = ClipMeta("human", condition, derive_seed(seed, "pool", condition, i), id=f"pool-{condition}-{i:02d}")
            pool.append(generate_synthetic_clip(meta, geometry))
    return pool


# ---------------------------------------------------------------------------
# manifests


def write_dataset(clips: Sequence[ClipBundle], directory: str | os.PathLike, manifest_name: str = "manifest.json") -> Path:
    """Save clips as ``<id>.clpb`` and a JSON manifest of {id, path, species, condition}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for clip in clips:
        name = f"{clip.meta.id}.clpb"
        save_clip(clip, directory / name)
        entries.append({"id": clip.meta.id, "path": name, "species": clip.meta.species, "condition": clip.meta.condition})
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ContractError("clip ids must be unique within a dataset")
    manifest = directory / manifest_name
    manifest.write_text(json.dumps(entries, indent=1) + "\n")
    return manifest


def read_dataset(manifest: str | os.PathLike) -> list[ClipBundle]:
    manifest = Path(manifest)
    entries = json.loads(manifest.read_text())
    clips = []
    for i, e in enumerate(entries):
        clip = load_clip(manifest.parent / e["path"])
        if clip.meta.id != e["id"] or clip.meta.species != e["species"] or clip.meta.condition != e["condition"]:
            raise FormatError(f"manifest[{i}]", f"entry does not match clip file {e['path']}")
        clips.append(clip)
    return clips
