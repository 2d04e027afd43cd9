"""
DistilVAD - Multi-resolution discriminator

Judges whether a set of anomaly maps came from a teacher or from the student.
Maps are consumed largest first: the largest goes through two stride-2
convs, every further map is concatenated with the features brought to its
resolution and passed through one stride-2 conv. A global max pool, the 1x1
map (when configured) and a pointwise conv produce one logit per sample.
"""
import logging

import numpy as np

from distilvad import functional as F
from distilvad.exceptions import ShapeError
from distilvad.models import resize_max
from distilvad.nn import Conv2d, Module
from distilvad.tensor import Tensor, concat_channels, relu

# Configure logger
logger = logging.getLogger(__name__)

STEM_FILTERS = (16, 32)
STAGE_FILTERS = 64


class DiscriminatorStage(Module):
    def __init__(self, in_channels, filters, rng):
        super().__init__()
        self.depth = len(filters)
        for i, out in enumerate(filters):
            setattr(self, f"conv{i}", Conv2d(in_channels, out, 3, rng, stride=2, padding=1))
            in_channels = out

    def forward(self, x):
        for i in range(self.depth):
            x = relu(getattr(self, f"conv{i}")(x))
        return x


class Discriminator(Module):
    """
    Args:
        resolutions (list): the student's head resolutions, in any order
        rng (np.random.Generator): initialization stream
    """

    def __init__(self, resolutions, rng):
        super().__init__()
        self.resolutions = [tuple(r) for r in resolutions]
        # processing order: largest area first, the 1x1 map joins at the fusion step
        self.order = sorted(range(len(self.resolutions)),
                            key=lambda k: -self.resolutions[k][0] * self.resolutions[k][1])
        self.scalar_index = None
        if self.resolutions[self.order[-1]] == (1, 1):
            self.scalar_index = self.order.pop()
        channels = 0
        for j in range(len(self.order)):
            if j == 0:
                self.stage0 = DiscriminatorStage(1, STEM_FILTERS, rng)
                channels = STEM_FILTERS[-1]
            else:
                setattr(self, f"stage{j}", DiscriminatorStage(channels + 1, (STAGE_FILTERS,), rng))
                channels = STAGE_FILTERS
        fused = channels + (1 if self.scalar_index is not None else 0)
        self.fuse = Conv2d(fused, 1, 1, rng)

    def check_maps(self, maps):
        if len(maps) != len(self.resolutions):
            raise ShapeError(f"expected {len(self.resolutions)} maps, got {len(maps)}", axis="maps")
        for k, (m, res) in enumerate(zip(maps, self.resolutions)):
            if m.ndim != 4 or m.shape[1] != 1 or tuple(m.shape[2:]) != res:
                raise ShapeError(f"map {k} has shape {m.shape}, expected (N, 1, {res[0]}, {res[1]})",
                                 axis="height")

    def forward(self, maps):
        """
        Args:
            maps (list): one (N, 1, h_k, w_k) Tensor or array per resolution

        Returns:
            Tensor: (N,) logits
        """
        maps = [m if isinstance(m, Tensor) else Tensor(np.asarray(m)) for m in maps]
        self.check_maps(maps)
        features = None
        for j, k in enumerate(self.order):
            stage = getattr(self, f"stage{j}")
            if features is None:
                features = stage(maps[k])
            else:
                h, w = self.resolutions[k]
                features = stage(concat_channels([resize_max(features, h, w), maps[k]]))
        parts = []
        if features is not None:
            parts.append(F.adaptive_max_pool2d(features, 1, 1))
        if self.scalar_index is not None:
            parts.append(maps[self.scalar_index])
        x = parts[0] if len(parts) == 1 else concat_channels(parts)
        logit = self.fuse(x)
        return logit.reshape(logit.shape[0])


def build_discriminator(resolutions, seed):
    """Build one discriminator for the given head resolutions."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Discriminator(resolutions, rng)
