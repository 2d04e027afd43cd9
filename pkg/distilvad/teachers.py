"""
DistilVAD - Teachers

Teachers turn a frame into a full-resolution anomaly map. The student is
trained on max-pooled versions of those maps at its head resolutions.

Two teachers ship with the toolkit:
    OracleTeacher        degrades the ground-truth anomaly mask (blob misses,
                         box blur, Gaussian noise) to mimic an imperfect
                         object-level detector
    PrecomputedTeacher   reads maps produced by an external model from AMAP
                         files laid out as <dir>/<video_id>/<frame_index>.amap
"""
import logging
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from distilvad.exceptions import (
    ConfigError,
    MapMagicError,
    MapNotFoundError,
    MapTruncatedError,
    TeacherResolutionError,
)
from distilvad.functional import adaptive_max_pool2d_array

# Configure logger
logger = logging.getLogger(__name__)

AMAP_MAGIC = b"AMP1"
TEACHER_KINDS = ("oracle", "precomputed")


@dataclass
class TeacherOutput:
    """
    Attributes:
        full_map (np.ndarray): (H, W) non-negative float32 map
        provenance (str): "oracle" or "precomputed"
    """

    full_map: np.ndarray
    provenance: str


@dataclass
class OracleTeacherConfig:
    """
    Attributes:
        noise_std (float): std of the Gaussian noise added to every pixel
        blur_radius (int): box blur radius, 0 disables blurring
        miss_rate (float): probability of dropping each anomaly blob
    """

    noise_std: float = 0.1
    blur_radius: int = 1
    miss_rate: float = 0.1

    def validate(self, key="teachers"):
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}", key=key)
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ConfigError(f"miss_rate must be in [0, 1], got {self.miss_rate}", key=key)
        if self.blur_radius < 0:
            raise ConfigError(f"blur_radius must be >= 0, got {self.blur_radius}", key=key)
        return self


@dataclass
class TeacherSpec:
    """One entry of the run configuration's ``teachers`` list."""

    kind: str = "oracle"
    seed: int = 1
    noise_std: float = 0.1
    blur_radius: int = 1
    miss_rate: float = 0.1
    directory: str = ""

    def oracle_config(self):
        return OracleTeacherConfig(self.noise_std, self.blur_radius, self.miss_rate)

    def validate(self, key="teachers"):
        if self.kind not in TEACHER_KINDS:
            raise ConfigError(f"kind must be one of {TEACHER_KINDS}, got {self.kind!r}", key=key)
        if self.kind == "precomputed" and not self.directory:
            raise ConfigError("precomputed teachers need a directory", key=f"{key}.directory")
        self.oracle_config().validate(key)
        return self


# multi-resolution targets

def downsample_map(full_map, resolutions):
    """
    Max-pool a map to every target resolution.

    Args:
        full_map (np.ndarray): (..., H, W) map
        resolutions (list): (h, w) targets, each no larger than (H, W)

    Returns:
        list of np.ndarray: one (..., h, w) map per resolution

    Raises:
        TeacherResolutionError: when a target exceeds the map
    """
    full_map = np.asarray(full_map)
    height, width = full_map.shape[-2:]
    maps = []
    for h, w in resolutions:
        if h > height or w > width:
            raise TeacherResolutionError(
                f"teacher map {height}x{width} is smaller than the head resolution {h}x{w}")
        pooled, _ = adaptive_max_pool2d_array(full_map, h, w)
        maps.append(pooled)
    return maps


class MapNormalizer:
    """
    Split-level min-max normalization of teacher maps to [0, 1].

    Fit with every full map of the split first, then transform. Since the
    mapping is increasing it commutes with max pooling, so pooled maps can be
    transformed after downsampling.
    """

    def __init__(self):
        self.low = np.inf
        self.high = -np.inf

    def update(self, full_map):
        self.low = min(self.low, float(np.min(full_map)))
        self.high = max(self.high, float(np.max(full_map)))
        return self

    def fit(self, maps):
        for m in maps:
            self.update(m)
        return self

    @property
    def fitted(self):
        return self.high >= self.low

    def transform(self, m):
        m = np.asarray(m)
        if not self.fitted:
            raise ValueError("MapNormalizer used before fit")
        span = self.high - self.low
        if span <= 0:
            return np.zeros_like(m)
        return np.clip((m - self.low) / span, 0.0, 1.0).astype(m.dtype, copy=False)


# oracle

def _oracle_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def oracle_teacher(gt_mask, cfg, seed):
    """
    Degrade a ground-truth anomaly mask into a teacher map.

    Blobs are 4-connected components of the binarized mask; each is dropped
    with probability ``miss_rate``. The surviving mask is box blurred, noised
    and clamped to [0, 1].

    Args:
        gt_mask (np.ndarray): (H, W) mask, non-zero on anomalous pixels
        cfg (OracleTeacherConfig): degradation knobs
        seed (int, sequence or np.random.Generator): noise/miss stream

    Returns:
        TeacherOutput: float32 map in [0, 1]
    """
    rng = _oracle_rng(seed)
    binary = np.asarray(gt_mask) > 0
    out = binary.astype(np.float64)
    if cfg.miss_rate > 0 and binary.any():
        labels, count = ndimage.label(binary)
        dropped = np.flatnonzero(rng.random(count) < cfg.miss_rate) + 1
        if dropped.size:
            out[np.isin(labels, dropped)] = 0.0
    if cfg.blur_radius > 0:
        out = ndimage.uniform_filter(out, size=2 * cfg.blur_radius + 1, mode="constant")
    if cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, size=out.shape)
    return TeacherOutput(np.clip(out, 0.0, 1.0).astype(np.float32), "oracle")


class Teacher:
    """Frozen source of full-resolution anomaly maps."""

    provenance = "teacher"

    def __init__(self, name):
        self.name = name

    def full_map(self, clip, frame_index):
        raise NotImplementedError

    def __call__(self, clip, frame_index):
        return self.full_map(clip, frame_index)


class OracleTeacher(Teacher):
    """
    Oracle built on the clip's ground-truth masks.

    The per-frame stream is seeded from (seed, crc32(video_id), frame_index),
    so maps do not depend on evaluation order.
    """

    provenance = "oracle"

    def __init__(self, cfg, seed, name=None):
        super().__init__(name or f"oracle{seed}")
        self.cfg = cfg.validate()
        self.seed = int(seed)

    def full_map(self, clip, frame_index):
        key = [self.seed, zlib.crc32(clip.video_id.encode("utf-8")), int(frame_index)]
        return oracle_teacher(clip.masks[frame_index], self.cfg, key)


class PrecomputedTeacher(Teacher):
    provenance = "precomputed"

    def __init__(self, directory, name=None):
        super().__init__(name or os.path.basename(os.path.normpath(directory)))
        self.directory = directory

    def full_map(self, clip, frame_index):
        return load_precomputed(self.directory, clip.video_id, frame_index)


def build_teacher(spec, index=0):
    """Instantiate a teacher from its configuration entry."""
    spec.validate(key=f"teachers[{index}]")
    if spec.kind == "oracle":
        return OracleTeacher(spec.oracle_config(), spec.seed, name=f"T{index + 1}")
    return PrecomputedTeacher(spec.directory, name=f"T{index + 1}")


# AMAP files

def encode_amap(full_map):
    full_map = np.asarray(full_map)
    if full_map.ndim != 2:
        raise ValueError(f"AMAP stores 2-D maps, got shape {full_map.shape}")
    h, w = full_map.shape
    return AMAP_MAGIC + struct.pack("<II", h, w) + np.ascontiguousarray(full_map, dtype="<f4").tobytes()


def decode_amap(payload, source="<bytes>"):
    if payload[:4] != AMAP_MAGIC:
        raise MapMagicError(f"{source}: bad anomaly map magic {payload[:4]!r}")
    if len(payload) < 12:
        raise MapTruncatedError(f"{source}: header truncated at {len(payload)} bytes")
    h, w = struct.unpack("<II", payload[4:12])
    expected = 12 + 4 * h * w
    if len(payload) < expected:
        raise MapTruncatedError(f"{source}: expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload[12:expected], dtype="<f4").reshape(h, w).astype(np.float32)


def amap_path(directory, video_id, frame_index):
    return os.path.join(directory, video_id, f"{int(frame_index)}.amap")


def write_amap(path, full_map):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_amap(full_map))


def read_amap(path):
    """
    Read one AMAP file.

    Raises:
        MapNotFoundError, MapMagicError, MapTruncatedError
    """
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except FileNotFoundError as e:
        logger.error(f"Anomaly map not found: {path}")
        raise MapNotFoundError(f"anomaly map not found: {path}") from e
    return decode_amap(payload, source=path)


def store_precomputed(directory, video_id, frame_index, full_map):
    """Write a teacher map under <directory>/<video_id>/<frame_index>.amap."""
    path = amap_path(directory, video_id, frame_index)
    write_amap(path, full_map)
    return path


def load_precomputed(directory, video_id, frame_index):
    """Load a teacher map written by ``store_precomputed``."""
    return TeacherOutput(read_amap(amap_path(directory, video_id, frame_index)), "precomputed")
