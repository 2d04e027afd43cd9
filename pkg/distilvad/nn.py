"""
DistilVAD - Neural network building blocks

A small Module system over the tape-based tensors: named parameters,
batch-norm buffers, train/eval switching and state dictionaries whose keys
are the canonical checkpoint names (``enc.conv0.w``, ``blk3.head2.q.dw.w``).
"""
import hashlib
import logging
import math

import numpy as np

from distilvad import functional as F
from distilvad.exceptions import CheckpointError
from distilvad.tensor import Tensor, get_default_dtype

# Configure logger
logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


def uniform_init(rng, shape, fan_in, dtype=None):
    """Uniform values in +-sqrt(1/fan_in)."""
    bound = math.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype or get_default_dtype())


class Module:
    """
    Base class for layers and networks.

    Parameters, sub-modules and buffers are discovered from instance
    attributes in assignment order; plain lists are not traversed, so a
    list of blocks must also be registered as attributes (``blk0``...).
    """

    def __init__(self):
        self.training = True
        self._buffers = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name, value in self._buffers.items():
            yield f"{prefix}{name}", value
        for name, child in self.named_children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self.named_children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        """Return a name -> array mapping of parameters and buffers (copies)."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: buf.copy() for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state, strict=True):
        """
        Copy arrays from ``state`` into parameters and buffers.

        Args:
            state (dict): name -> array
            strict (bool): require every entry of this module to be present

        Returns:
            list: names of this module's entries that were absent from ``state``

        Raises:
            CheckpointError: on missing entries (strict) or shape mismatches
        """
        missing = []
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, param in targets.items():
            if name not in state:
                missing.append(name)
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != {param.shape}")
            param.data = value.astype(param.dtype, copy=True)
        for name, buf in buffers.items():
            if name not in state:
                missing.append(name)
                continue
            value = np.asarray(state[name])
            if value.shape != buf.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != {buf.shape}")
            buf[...] = value
        if strict and missing:
            raise CheckpointError(f"checkpoint lacks {len(missing)} entries, e.g. {missing[0]}")
        return missing

    def fingerprint(self):
        """SHA-256 over every parameter value, in name order."""
        digest = hashlib.sha256()
        for name, p in self.named_parameters():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, groups=1):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.w = Parameter(uniform_init(
            rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in))
        self.b = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def output_size(self, size):
        return F.conv_output_size(size, self.kernel_size, self.stride, self.padding)

    def forward(self, x):
        return F.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding,
                        groups=self.groups)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0,
                 output_padding=0):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        fan_in = in_channels * kernel_size * kernel_size
        self.w = Parameter(uniform_init(
            rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in))
        self.b = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def forward(self, x):
        return F.conv_transpose2d(x, self.w, self.b, stride=self.stride, padding=self.padding,
                                  output_padding=self.output_padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        dtype = get_default_dtype()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self._buffers["mean"] = np.zeros(channels, dtype=dtype)
        self._buffers["var"] = np.ones(channels, dtype=dtype)

    def forward(self, x):
        return F.batch_norm2d(x, self.gamma, self.beta, self._buffers["mean"],
                              self._buffers["var"], self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.w = Parameter(uniform_init(rng, (out_features, in_features), in_features))
        self.b = Parameter(uniform_init(rng, (out_features,), in_features))

    def forward(self, x):
        return F.linear(x, self.w, self.b)
