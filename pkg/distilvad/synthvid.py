"""
DistilVAD - Synthetic surveillance videos

Bright sprites bounce over a static, mildly textured background. Normal
sprites are boxes with moderate size and speed; an anomalous sprite is
either much faster, much larger or disc-shaped. Mixed clips contain one
anomalous interval of round(anomaly_rate * clip_length) frames, during which
the anomalous sprite is on screen.

Splits:
    train    normal clips only
    distill  mixed clips; the student sees frames and teacher maps, no labels
    test     mixed clips with frame labels and pixel masks

On disk:
    <root>/<split>/<video_id>/<frame_index>.pgm   8-bit P5 frames
    <root>/<split>/<video_id>/labels.csv          frame_index,label
    <root>/masks/<split>/<video_id>/<i>.amap      masks of anomalous frames
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from distilvad.exceptions import ConfigError, EmptyDatasetError, MapNotFoundError
from distilvad.metrics import read_labels, write_labels
from distilvad.teachers import amap_path, read_amap, store_precomputed
from distilvad.utils import get_num_workers

# Configure logger
logger = logging.getLogger(__name__)

ANOMALY_TYPES = ("fast_mover", "oversized", "novel_shape")
SPLITS = ("train", "distill", "test")


@dataclass
class SceneConfig:
    """
    Generator settings. Anomalous speed and size ranges must lie strictly
    above the normal ones.

    Attributes:
        resolution (tuple): (H, W)
        clip_length (int): frames per clip
        train_clips, distill_clips, test_clips (int): clips per split
        sprites (tuple): inclusive range of normal sprites per clip
        normal_speed (tuple): pixels per frame
        normal_size (tuple): inclusive sprite side length range
        fast_speed (tuple): speed range of fast movers
        oversized_size (tuple): side length range of oversized sprites
        anomaly_types (list): subset of ANOMALY_TYPES
        anomaly_rate (float): anomalous share of each mixed clip
        seed (int): master seed
    """

    resolution: tuple = (64, 64)
    clip_length: int = 60
    train_clips: int = 50
    distill_clips: int = 30
    test_clips: int = 20
    sprites: tuple = (1, 3)
    normal_speed: tuple = (0.5, 1.5)
    normal_size: tuple = (5, 8)
    fast_speed: tuple = (3.5, 5.0)
    oversized_size: tuple = (14, 18)
    anomaly_types: list = field(default_factory=lambda: list(ANOMALY_TYPES))
    anomaly_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        self.sprites = tuple(int(v) for v in self.sprites)
        self.normal_size = tuple(int(v) for v in self.normal_size)
        self.oversized_size = tuple(int(v) for v in self.oversized_size)
        self.normal_speed = tuple(float(v) for v in self.normal_speed)
        self.fast_speed = tuple(float(v) for v in self.fast_speed)
        self.anomaly_types = list(self.anomaly_types)

    def clips_in(self, split):
        return {"train": self.train_clips, "distill": self.distill_clips, "test": self.test_clips}[split]

    def validate(self):
        height, width = self.resolution
        if self.clip_length < 1:
            raise ConfigError(f"must be positive, got {self.clip_length}", key="scene.clip_length")
        if self.normal_speed[1] >= self.fast_speed[0]:
            raise ConfigError("fast movers must be faster than every normal sprite",
                              key="scene.fast_speed")
        if self.normal_size[1] >= self.oversized_size[0]:
            raise ConfigError("oversized sprites must be larger than every normal sprite",
                              key="scene.oversized_size")
        if self.oversized_size[1] > min(height, width):
            raise ConfigError(f"sprites up to {self.oversized_size[1]} px do not fit {height}x{width}",
                              key="scene.oversized_size")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ConfigError(f"must be in [0, 1], got {self.anomaly_rate}", key="scene.anomaly_rate")
        unknown = [t for t in self.anomaly_types if t not in ANOMALY_TYPES]
        if unknown or not self.anomaly_types:
            raise ConfigError(f"expected a non-empty subset of {ANOMALY_TYPES}, got {self.anomaly_types}",
                              key="scene.anomaly_types")
        if self.sprites[0] < 0 or self.sprites[1] < self.sprites[0]:
            raise ConfigError(f"invalid range {self.sprites}", key="scene.sprites")
        return self


@dataclass
class Sprite:
    """
    A moving box or disc; (y, x) is the top-left corner in pixels.
    """

    y: float
    x: float
    vy: float
    vx: float
    size: int
    intensity: int
    shape: str = "box"
    anomalous: bool = False

    def stamp(self):
        """Boolean footprint of shape (size, size)."""
        if self.shape == "box":
            return np.ones((self.size, self.size), dtype=bool)
        centre = (self.size - 1) / 2.0
        yy, xx = np.mgrid[:self.size, :self.size]
        return (yy - centre) ** 2 + (xx - centre) ** 2 <= (self.size / 2.0) ** 2

    @property
    def area(self):
        return int(self.stamp().sum())

    def step(self, height, width):
        """Advance one frame, bouncing off the borders so the sprite stays fully visible."""
        self.y, self.vy = _bounce(self.y + self.vy, self.vy, height - self.size)
        self.x, self.vx = _bounce(self.x + self.vx, self.vx, width - self.size)


def _bounce(pos, vel, upper):
    if upper <= 0:
        return 0.0, 0.0
    while pos < 0 or pos > upper:
        if pos < 0:
            pos, vel = -pos, -vel
        if pos > upper:
            pos, vel = 2 * upper - pos, -vel
    return pos, vel


@dataclass
class SceneState:
    background: np.ndarray
    sprites: list = field(default_factory=list)


def _paint(canvas, sprite, value):
    height, width = canvas.shape
    top, left = int(round(sprite.y)), int(round(sprite.x))
    stamp = sprite.stamp()
    rows = slice(max(top, 0), min(top + sprite.size, height))
    cols = slice(max(left, 0), min(left + sprite.size, width))
    cut = stamp[rows.start - top:rows.stop - top, cols.start - left:cols.stop - left]
    canvas[rows, cols][cut] = value


def render_frame(state):
    """Rasterize the scene into an 8-bit grayscale frame."""
    frame = state.background.copy()
    for sprite in state.sprites:
        _paint(frame, sprite, sprite.intensity)
    return frame


def gt_anomaly_map(state):
    """Float mask with 1.0 on the pixels of anomalous sprites."""
    mask = np.zeros(state.background.shape, dtype=np.float32)
    for sprite in state.sprites:
        if sprite.anomalous:
            _paint(mask, sprite, 1.0)
    return mask


@dataclass
class Clip:
    """
    Attributes:
        video_id (str): unique across splits
        split (str): "train", "distill" or "test"
        frames (np.ndarray): (L, H, W) uint8
        labels (np.ndarray): (L,) uint8 frame labels
        masks (np.ndarray): (L, H, W) uint8 anomaly masks
    """

    video_id: str
    split: str
    frames: np.ndarray
    labels: np.ndarray
    masks: np.ndarray

    def __len__(self):
        return len(self.frames)


@dataclass
class SyntheticDataset:
    train: list = field(default_factory=list)
    distill: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name):
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}", key="train.distill_split")
        return getattr(self, name)

    def frame_count(self, name):
        return int(sum(len(c) for c in self.split(name)))


def _background(rng, height, width):
    base = rng.uniform(40, 80)
    coarse = rng.uniform(-12, 12, size=(height // 8 + 1, width // 8 + 1))
    texture = np.kron(coarse, np.ones((8, 8)))[:height, :width]
    ramp = np.linspace(0, rng.uniform(-10, 10), width)[None, :]
    return np.clip(base + texture + ramp, 0, 255).astype(np.uint8)


def _random_sprite(rng, cfg, kind=None):
    height, width = cfg.resolution
    speed_range, size_range, shape = cfg.normal_speed, cfg.normal_size, "box"
    if kind == "fast_mover":
        speed_range = cfg.fast_speed
    elif kind == "oversized":
        size_range = cfg.oversized_size
    elif kind == "novel_shape":
        shape = "disc"
    size = int(rng.integers(size_range[0], size_range[1] + 1))
    speed = rng.uniform(*speed_range)
    angle = rng.uniform(0, 2 * np.pi)
    return Sprite(
        y=rng.uniform(0, max(height - size, 0)),
        x=rng.uniform(0, max(width - size, 0)),
        vy=speed * np.sin(angle),
        vx=speed * np.cos(angle),
        size=size,
        intensity=int(rng.integers(150, 231)),
        shape=shape,
        anomalous=kind is not None,
    )


def anomaly_interval(cfg, rng):
    """(start, stop) of the anomalous interval of a mixed clip."""
    count = int(round(cfg.anomaly_rate * cfg.clip_length))
    if count == 0:
        return 0, 0
    start = int(rng.integers(0, cfg.clip_length - count + 1))
    return start, start + count


def generate_clip(cfg, split, index, split_index=None):
    """
    Generate one clip from its own sub-seed of the master seed.

    Returns:
        Clip: frames, labels and masks
    """
    split_index = SPLITS.index(split) if split_index is None else split_index
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(split_index, index)))
    height, width = cfg.resolution
    state = SceneState(_background(rng, height, width))
    state.sprites = [_random_sprite(rng, cfg)
                     for _ in range(int(rng.integers(cfg.sprites[0], cfg.sprites[1] + 1)))]
    start = stop = 0
    intruder = None
    if split != "train":
        start, stop = anomaly_interval(cfg, rng)
        kind = cfg.anomaly_types[int(rng.integers(len(cfg.anomaly_types)))]
        intruder = _random_sprite(rng, cfg, kind=kind)

    frames = np.empty((cfg.clip_length, height, width), dtype=np.uint8)
    masks = np.zeros((cfg.clip_length, height, width), dtype=np.uint8)
    for t in range(cfg.clip_length):
        active = start <= t < stop
        visible = state.sprites + ([intruder] if active else [])
        frame_state = SceneState(state.background, visible)
        frames[t] = render_frame(frame_state)
        if active:
            masks[t] = gt_anomaly_map(frame_state) > 0
            intruder.step(height, width)
        for sprite in state.sprites:
            sprite.step(height, width)
    labels = (masks.reshape(cfg.clip_length, -1).max(axis=1) > 0).astype(np.uint8)
    return Clip(f"{split}_{index:03d}", split, frames, labels, masks)


def generate_dataset(cfg, workers=None):
    """
    Generate all three splits. Clips are independent and generated in parallel;
    the result does not depend on the worker count.

    Args:
        cfg (SceneConfig): generator settings
        workers (int, optional): thread count, DISTILVAD_WORKERS by default

    Returns:
        SyntheticDataset: train (normal only), distill and test splits
    """
    cfg.validate()
    workers = workers or get_num_workers()
    dataset = SyntheticDataset()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for split in SPLITS:
            jobs = [pool.submit(generate_clip, cfg, split, i) for i in range(cfg.clips_in(split))]
            setattr(dataset, split, [job.result() for job in jobs])
    logger.info(
        f"Generated {len(dataset.train)}/{len(dataset.distill)}/{len(dataset.test)} "
        f"train/distill/test clips of {cfg.clip_length} frames"
    )
    return dataset


# disk I/O

def write_pgm(path, frame):
    Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8)).save(path, format="PPM")


def read_pgm(path):
    with Image.open(path) as image:
        return np.asarray(image.convert("L"), dtype=np.uint8)


def save_dataset(dataset, root):
    """Write every split under ``root``."""
    for split in SPLITS:
        for clip in dataset.split(split):
            clip_dir = os.path.join(root, split, clip.video_id)
            os.makedirs(clip_dir, exist_ok=True)
            for t, frame in enumerate(clip.frames):
                write_pgm(os.path.join(clip_dir, f"{t}.pgm"), frame)
            write_labels(os.path.join(clip_dir, "labels.csv"), clip.labels)
            for t in np.flatnonzero(clip.labels):
                store_precomputed(os.path.join(root, "masks", split), clip.video_id, t,
                                  clip.masks[t].astype(np.float32))
    logger.info(f"Saved dataset to {root}")


def load_clip(root, split, video_id):
    clip_dir = os.path.join(root, split, video_id)
    labels = read_labels(os.path.join(clip_dir, "labels.csv"))
    frames = np.stack([read_pgm(os.path.join(clip_dir, f"{t}.pgm")) for t in range(len(labels))])
    masks = np.zeros(frames.shape, dtype=np.uint8)
    mask_dir = os.path.join(root, "masks", split)
    for t in np.flatnonzero(labels):
        try:
            masks[t] = read_amap(amap_path(mask_dir, video_id, t)) > 0
        except MapNotFoundError:
            logger.error(f"Mask missing for anomalous frame {video_id}/{t}")
            raise
    return Clip(video_id, split, frames, labels, masks)


def load_dataset(root, splits=SPLITS):
    """
    Load a dataset written by ``save_dataset``.

    Raises:
        EmptyDatasetError: when no clip is found
    """
    dataset = SyntheticDataset()
    for split in splits:
        split_dir = os.path.join(root, split)
        if not os.path.isdir(split_dir):
            continue
        ids = sorted(d for d in os.listdir(split_dir) if os.path.isdir(os.path.join(split_dir, d)))
        setattr(dataset, split, [load_clip(root, split, v) for v in ids])
    if not any(dataset.split(s) for s in splits):
        raise EmptyDatasetError(f"no clips found under {root}")
    return dataset
