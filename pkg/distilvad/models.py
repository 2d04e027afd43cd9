"""
DistilVAD - Student network

Downsampling block, convolutional-transformer blocks with depthwise-separable
Q/K/V projections, multi-resolution anomaly heads and the mirrored decoder
used for reconstruction pre-training.

Parameter names follow the checkpoint convention:
    enc.conv{i}.w, enc.bn{i}.gamma          downsampling block
    blk{j}.head{h}.{q,k,v}.{dw,bn,pw}.*     attention projections
    blk{j}.proj, blk{j}.bn, blk{j}.ffn{1,2} block trunk
    head{k}.conv{0,1}.*                     anomaly heads
    dec.deconv{i}, dec.bn{i}                decoder
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from distilvad import functional as F
from distilvad.exceptions import ConfigError, ShapeError
from distilvad.nn import BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module
from distilvad.tensor import Tensor, concat_channels, matmul, relu, softmax_rows

# Configure logger
logger = logging.getLogger(__name__)

FFN_KINDS = ("pointwise", "dense")

FIRST_KERNEL, FIRST_STRIDE, FIRST_PADDING = 7, 1, 0
KERNEL, STRIDE, PADDING = 3, 2, 1


@dataclass
class ModelConfig:
    """
    Architecture hyper-parameters.

    Attributes:
        blocks (int): transformer block count (m)
        attn_heads (int): attention heads per block (s)
        head_dim (int): per-head projection width (d)
        channels (int): transformer channel width (c); equals the last
            downsampling filter count
        head_resolutions (list): (h, w) of every output map, strictly
            increasing in area
        input_frames (int): frames per input sequence
        frame_channels (int): channels per frame
        input_resolution (tuple): (H, W) of the frames
        ffn_kind (str): "pointwise" or "dense"
        downsample_filters (list): filters of the downsampling convs
        head_filters (int): filters of the first head conv
    """

    blocks: int = 5
    attn_heads: int = 5
    head_dim: int = 64
    channels: int = 256
    head_resolutions: list = field(default_factory=lambda: [(1, 1), (4, 4), (16, 16)])
    input_frames: int = 3
    frame_channels: int = 1
    input_resolution: tuple = (64, 64)
    ffn_kind: str = "pointwise"
    downsample_filters: list = field(default_factory=lambda: [16, 32, 64, 128, 256])
    head_filters: int = 64

    def __post_init__(self):
        self.head_resolutions = [tuple(int(v) for v in res) for res in self.head_resolutions]
        self.input_resolution = tuple(int(v) for v in self.input_resolution)
        self.downsample_filters = [int(v) for v in self.downsample_filters]

    @property
    def num_heads_out(self):
        """Number of output heads (r)."""
        return len(self.head_resolutions)

    @property
    def in_channels(self):
        return self.input_frames * self.frame_channels

    def encoder_sizes(self):
        """
        Spatial sizes through the downsampling block, input first.

        Raises:
            ConfigError: naming the first layer the input does not survive
        """
        sizes = [self.input_resolution]
        for i in range(len(self.downsample_filters)):
            k, s, p = (FIRST_KERNEL, FIRST_STRIDE, FIRST_PADDING) if i == 0 else (KERNEL, STRIDE, PADDING)
            h, w = sizes[-1]
            if h + 2 * p < k or w + 2 * p < k:
                raise ConfigError(
                    f"input resolution {self.input_resolution} too small: layer enc.conv{i} "
                    f"receives {h}x{w}", key="model.input_resolution")
            sizes.append((F.conv_output_size(h, k, s, p), F.conv_output_size(w, k, s, p)))
        return sizes

    @property
    def grid(self):
        """Token grid (h, w) seen by the transformer blocks."""
        return self.encoder_sizes()[-1]

    def validate(self):
        for name in ("blocks", "attn_heads", "head_dim", "channels", "input_frames",
                     "frame_channels", "head_filters"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < (0 if name == "blocks" else 1):
                raise ConfigError(f"must be a positive integer, got {value!r}", key=f"model.{name}")
        if not self.downsample_filters:
            raise ConfigError("needs at least one layer", key="model.downsample_filters")
        if self.channels != self.downsample_filters[-1]:
            raise ConfigError(
                f"{self.channels} differs from the last downsampling width "
                f"{self.downsample_filters[-1]}", key="model.channels")
        if self.ffn_kind not in FFN_KINDS:
            raise ConfigError(f"must be one of {FFN_KINDS}, got {self.ffn_kind!r}", key="model.ffn_kind")
        if not self.head_resolutions:
            raise ConfigError("needs at least one resolution", key="model.head_resolutions")
        areas = [h * w for h, w in self.head_resolutions]
        if any(b <= a for a, b in zip(areas, areas[1:])):
            raise ConfigError("resolutions must be strictly increasing in area",
                              key="model.head_resolutions")
        height, width = self.input_resolution
        for h, w in self.head_resolutions:
            if h < 1 or w < 1 or h > height or w > width:
                raise ConfigError(f"{h}x{w} outside the input resolution {height}x{width}",
                                  key="model.head_resolutions")
        self.encoder_sizes()
        return self


class DownsamplingBlock(Module):
    """Five conv + BN + ReLU layers: 7x7 stride 1 without padding, then 3x3 stride 2."""

    def __init__(self, in_channels, filters, rng):
        super().__init__()
        self.depth = len(filters)
        channels = in_channels
        for i, out in enumerate(filters):
            k, s, p = (FIRST_KERNEL, FIRST_STRIDE, FIRST_PADDING) if i == 0 else (KERNEL, STRIDE, PADDING)
            setattr(self, f"conv{i}", Conv2d(channels, out, k, rng, stride=s, padding=p))
            setattr(self, f"bn{i}", BatchNorm2d(out))
            channels = out

    def forward(self, x):
        for i in range(self.depth):
            x = relu(getattr(self, f"bn{i}")(getattr(self, f"conv{i}")(x)))
        return x


class ConvProjection(Module):
    """
    Depthwise 3x3 conv + BN + pointwise conv to ``head_dim``, flattened to tokens.

    Queries keep the grid (stride 1); keys and values use stride 2 with
    padding 1, giving ceil(h/2) * ceil(w/2) tokens.
    """

    def __init__(self, channels, head_dim, rng, stride=1):
        super().__init__()
        self.stride = stride
        self.dw = Conv2d(channels, channels, 3, rng, stride=stride, padding=1, groups=channels)
        self.bn = BatchNorm2d(channels)
        self.pw = Conv2d(channels, head_dim, 1, rng)

    def forward(self, x):
        y = self.pw(self.bn(self.dw(x)))
        return y.rearrange("n d h w -> n (h w) d")


def token_count(h, w, stride):
    """Tokens produced by a projection of the given stride on an h x w grid."""
    return F.conv_output_size(h, 3, stride, 1) * F.conv_output_size(w, 3, stride, 1)


def _swap_last(t):
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return t.transpose(*axes)


def self_attention(q, k, v):
    """
    Scaled dot-product attention ``softmax(Q K^T / sqrt(d)) V``.

    Args:
        q (Tensor): (..., n_q, d)
        k (Tensor): (..., n_k, d)
        v (Tensor): (..., n_k, d)

    Returns:
        Tensor: (..., n_q, d)
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}", axis="d")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values", axis="tokens")
    scores = matmul(q, _swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax_rows(scores), v)


class AttentionHead(Module):
    def __init__(self, channels, head_dim, rng):
        super().__init__()
        self.q = ConvProjection(channels, head_dim, rng, stride=1)
        self.k = ConvProjection(channels, head_dim, rng, stride=2)
        self.v = ConvProjection(channels, head_dim, rng, stride=2)

    def forward(self, x):
        h, w = x.shape[-2:]
        z = self_attention(self.q(x), self.k(x), self.v(x))
        return z.rearrange("n (h w) d -> n d h w", h=h, w=w)


class CvTBlock(Module):
    """
    Transformer block over the token grid.

    Heads are concatenated on the channel axis, reduced to ``channels`` by a
    pointwise conv and added to the input (Z*). Z* goes through BN and the
    feed-forward network, whose output is added back to Z*.
    """

    def __init__(self, channels, attn_heads, head_dim, grid, rng, ffn_kind="pointwise"):
        super().__init__()
        self.attn_heads = attn_heads
        self.ffn_kind = ffn_kind
        self.grid = tuple(grid)
        for i in range(attn_heads):
            setattr(self, f"head{i}", AttentionHead(channels, head_dim, rng))
        self.proj = Conv2d(head_dim * attn_heads, channels, 1, rng)
        self.bn = BatchNorm2d(channels)
        if ffn_kind == "pointwise":
            self.ffn1 = Conv2d(channels, 4 * channels, 1, rng)
            self.ffn2 = Conv2d(4 * channels, channels, 1, rng)
        else:
            flat = channels * self.grid[0] * self.grid[1]
            self.ffn1 = Linear(flat, 4 * channels, rng)
            self.ffn2 = Linear(4 * channels, flat, rng)

    def ffn(self, y):
        if self.ffn_kind == "pointwise":
            return self.ffn2(relu(self.ffn1(y)))
        n, c, h, w = y.shape
        if (h, w) != self.grid:
            raise ShapeError(f"dense FFN built for a {self.grid} grid, got {(h, w)}", axis="height")
        flat = y.rearrange("n c h w -> n (c h w)")
        out = self.ffn2(relu(self.ffn1(flat)))
        return out.rearrange("n (c h w) -> n c h w", c=c, h=h, w=w)

    def forward(self, p):
        z = concat_channels([getattr(self, f"head{i}")(p) for i in range(self.attn_heads)])
        z_star = self.proj(z) + p
        return self.ffn(self.bn(z_star)) + z_star


class AnomalyHead(Module):
    """
    conv 3x3 + ReLU, conv 3x3 to one channel + ReLU, then adaptive max pool.

    Targets finer than the feature grid are reached by nearest upsampling
    by ceil(target / grid) before pooling, which keeps the map's maximum.
    """

    def __init__(self, channels, filters, resolution, rng):
        super().__init__()
        self.resolution = tuple(resolution)
        self.conv0 = Conv2d(channels, filters, 3, rng, padding=1)
        self.conv1 = Conv2d(filters, 1, 3, rng, padding=1)

    def forward(self, x):
        y = relu(self.conv1(relu(self.conv0(x))))
        return resize_max(y, *self.resolution)


def resize_max(x, out_h, out_w):
    """Bring a map to (out_h, out_w) by nearest upsampling (if needed) and adaptive max pooling."""
    h, w = x.shape[-2:]
    fh = -(-out_h // h) if out_h > h else 1
    fw = -(-out_w // w) if out_w > w else 1
    return F.adaptive_max_pool2d(F.upsample_nearest2d(x, fh, fw), out_h, out_w)


class Encoder(Module):
    """Downsampling block followed by the transformer blocks (the auto-encoder's E)."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.enc = DownsamplingBlock(cfg.in_channels, cfg.downsample_filters, rng)
        grid = cfg.grid
        for j in range(cfg.blocks):
            setattr(self, f"blk{j}", CvTBlock(cfg.channels, cfg.attn_heads, cfg.head_dim, grid,
                                              rng, ffn_kind=cfg.ffn_kind))

    def check_input(self, x):
        expected = (self.cfg.in_channels, *self.cfg.input_resolution)
        if x.ndim != 4:
            raise ShapeError(f"expected (N, C, H, W) input, got {x.shape}", axis="rank")
        if x.shape[1] != expected[0]:
            raise ShapeError(
                f"expected {self.cfg.input_frames} frames x {self.cfg.frame_channels} channels, "
                f"got {x.shape[1]} channels", axis="channels")
        if tuple(x.shape[2:]) != expected[1:]:
            raise ShapeError(f"expected {expected[1:]} frames, got {tuple(x.shape[2:])}",
                             axis="height")

    def transform(self, p):
        for j in range(self.cfg.blocks):
            p = getattr(self, f"blk{j}")(p)
        return p

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        self.check_input(x)
        return self.transform(self.enc(x))


class StudentModel(Encoder):
    """Encoder plus one anomaly head per configured resolution."""

    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        for k, res in enumerate(cfg.head_resolutions):
            setattr(self, f"head{k}", AnomalyHead(cfg.channels, cfg.head_filters, res, rng))

    def heads(self, p):
        return [getattr(self, f"head{k}")(p) for k in range(self.cfg.num_heads_out)]

    def forward(self, x, timings=None):
        """
        Args:
            x (Tensor or np.ndarray): (N, frames * channels, H, W) sequences
            timings (dict, optional): accumulates seconds per stage under
                "downsample", "transformer" and "heads"

        Returns:
            list of Tensor: one (N, 1, h_k, w_k) map per head
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        self.check_input(x)
        if timings is None:
            return self.heads(self.transform(self.enc(x)))
        start = time.perf_counter()
        p = self.enc(x)
        mid = time.perf_counter()
        p = self.transform(p)
        end = time.perf_counter()
        maps = self.heads(p)
        done = time.perf_counter()
        for stage, seconds in (("downsample", mid - start), ("transformer", end - mid),
                               ("heads", done - end)):
            timings[stage] = timings.get(stage, 0.0) + seconds
        return maps


class Decoder(Module):
    """Transposed convolutions mirroring the downsampling block, back to one frame."""

    def __init__(self, cfg, rng):
        super().__init__()
        sizes = cfg.encoder_sizes()
        filters = cfg.downsample_filters
        self.depth = len(filters)
        for step, i in enumerate(reversed(range(self.depth))):
            k, s, p = (FIRST_KERNEL, FIRST_STRIDE, FIRST_PADDING) if i == 0 else (KERNEL, STRIDE, PADDING)
            (in_h, in_w), (out_h, out_w) = sizes[i + 1], sizes[i]
            pad_h = out_h - F.conv_transpose_output_size(in_h, k, s, p)
            pad_w = out_w - F.conv_transpose_output_size(in_w, k, s, p)
            if pad_h != pad_w or not 0 <= pad_h < s:
                raise ConfigError(
                    f"dec.deconv{step} cannot mirror enc.conv{i}: {in_h}x{in_w} -> {out_h}x{out_w}",
                    key="model.input_resolution")
            out_channels = filters[i - 1] if i > 0 else cfg.frame_channels
            setattr(self, f"deconv{step}", ConvTranspose2d(filters[i], out_channels, k, rng, stride=s,
                                                           padding=p, output_padding=pad_h))
            if i > 0:
                setattr(self, f"bn{step}", BatchNorm2d(out_channels))

    def forward(self, latent):
        x = latent
        for step in range(self.depth):
            x = getattr(self, f"deconv{step}")(x)
            if step < self.depth - 1:
                x = relu(getattr(self, f"bn{step}")(x))
        return x


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def build_student(cfg, seed):
    """
    Build a freshly initialized student.

    Args:
        cfg (ModelConfig): architecture
        seed (int or np.random.Generator): initialization stream

    Returns:
        StudentModel: the model in training mode
    """
    cfg.validate()
    model = StudentModel(cfg, _rng(seed))
    logger.debug(f"Built student with {model.num_parameters()} parameters, grid {cfg.grid}")
    return model


def build_autoencoder(cfg, seed):
    """
    Build the encoder/decoder pair used for reconstruction pre-training.

    Returns:
        tuple: (Encoder, Decoder)
    """
    cfg.validate()
    rng = _rng(seed)
    encoder = Encoder(cfg, rng)
    decoder = Decoder(cfg, rng)
    return encoder, decoder
