"""
DistilVAD - Functional layer ops

Convolution, normalization, pooling and loss kernels with their analytic
gradients. Every function takes and returns Tensors in NCHW layout.
"""
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from distilvad.exceptions import ShapeError
from distilvad.tensor import Tensor, make_result

# Configure logger
logger = logging.getLogger(__name__)


def conv_output_size(size, kernel, stride, padding):
    """Spatial output size of a convolution: floor((in + 2p - k) / s) + 1."""
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size, kernel, stride, padding, output_padding=0):
    """Spatial output size of a transposed convolution: (in - 1)s - 2p + k + op."""
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _strided(start, count, stride):
    return slice(start, start + stride * (count - 1) + 1, stride)


def _check_conv_shapes(x, weight, bias, stride, padding, groups):
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}", axis="rank")
    n, c, h, w = x.shape
    out_c, c_per_group, kh, kw = weight.shape
    if c % groups or out_c % groups:
        raise ShapeError(f"{c} input / {out_c} output channels not divisible by groups={groups}",
                         axis="channels")
    if c // groups != c_per_group:
        raise ShapeError(f"weight expects {c_per_group * groups} input channels, got {c}",
                         axis="channels")
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_c} filters", axis="channels")
    if h + 2 * padding < kh:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {h + 2 * padding}",
                         axis="height")
    if w + 2 * padding < kw:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {w + 2 * padding}",
                         axis="width")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}", axis="stride")


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """
    2D cross-correlation.

    ``groups == channels`` gives the depthwise case; a 1x1 kernel with
    ``groups == 1`` is the pointwise case and runs as a per-pixel matmul.

    Args:
        x (Tensor): input of shape (N, C, H, W)
        weight (Tensor): filters of shape (O, C / groups, kh, kw)
        bias (Tensor, optional): shape (O,)
        stride (int): spatial stride
        padding (int): zero padding on every side
        groups (int): channel groups

    Returns:
        Tensor: output of shape (N, O, Ho, Wo)

    Raises:
        ShapeError: naming the offending axis
    """
    _check_conv_shapes(x, weight, bias, stride, padding, groups)
    n, c, h, w = x.shape
    out_c, c_per_group, kh, kw = weight.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    parents = (x, weight) if bias is None else (x, weight, bias)

    if kh == 1 and kw == 1 and groups == 1 and stride == 1 and padding == 0:
        return _pointwise(x, weight, bias, parents)

    xp = _pad(x.data, padding)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :ho, :wo]

    if groups == 1:
        out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        og = out_c // groups
        gw = windows.reshape(n, groups, c_per_group, ho, wo, kh, kw)
        gk = weight.data.reshape(groups, og, c_per_group, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", gw, gk, optimize=True).reshape(n, out_c, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def _backward(g):
        if groups == 1:
            gweight = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        else:
            og = out_c // groups
            gg = g.reshape(n, groups, og, ho, wo)
            gweight = np.einsum("ngohw,ngchwij->gocij", gg,
                                windows.reshape(n, groups, c_per_group, ho, wo, kh, kw),
                                optimize=True).reshape(weight.shape)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                rows, cols = _strided(i, ho, stride), _strided(j, wo, stride)
                if groups == 1:
                    gxp[:, :, rows, cols] += np.einsum("nohw,oc->nchw", g, weight.data[:, :, i, j],
                                                       optimize=True)
                else:
                    og = out_c // groups
                    gg = g.reshape(n, groups, og, ho, wo)
                    kij = weight.data[:, :, i, j].reshape(groups, og, c_per_group)
                    contrib = np.einsum("ngohw,goc->ngchw", gg, kij, optimize=True)
                    gxp[:, :, rows, cols] += contrib.reshape(n, c, ho, wo)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [gx, gweight]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, parents, _backward)


def _pointwise(x, weight, bias, parents):
    n, c, h, w = x.shape
    out_c = weight.shape[0]
    kernel = weight.data.reshape(out_c, c)
    pixels = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    out = pixels @ kernel.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, h, w, out_c).transpose(0, 3, 1, 2))

    def _backward(g):
        g_pixels = g.transpose(0, 2, 3, 1).reshape(-1, out_c)
        gx = (g_pixels @ kernel).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        gweight = (g_pixels.T @ pixels).reshape(weight.shape)
        grads = [gx, gweight]
        if bias is not None:
            grads.append(g_pixels.sum(axis=0))
        return tuple(grads)

    return make_result(out, parents, _backward)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """
    2D transposed convolution (the input-gradient of conv2d).

    Args:
        x (Tensor): input of shape (N, C, H, W)
        weight (Tensor): shape (C, O, kh, kw)
        bias (Tensor, optional): shape (O,)
        stride (int): spatial stride
        padding (int): implicit cropping on every side
        output_padding (int): extra rows/columns added at the bottom/right

    Returns:
        Tensor: output of shape (N, O, (H-1)s - 2p + kh + op, ...)
    """
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects NCHW input, got shape {x.shape}", axis="rank")
    n, c, h, w = x.shape
    in_c, out_c, kh, kw = weight.shape
    if c != in_c:
        raise ShapeError(f"weight expects {in_c} input channels, got {c}", axis="channels")
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_c} filters", axis="channels")
    if output_padding >= max(stride, 1) and output_padding > 0:
        raise ShapeError(f"output_padding {output_padding} must be smaller than stride {stride}",
                         axis="height")
    ho = conv_transpose_output_size(h, kh, stride, padding, output_padding)
    wo = conv_transpose_output_size(w, kw, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed convolution output would be {ho}x{wo}", axis="height")

    full_h = (h - 1) * stride + kh + output_padding
    full_w = (w - 1) * stride + kw + output_padding
    full = np.zeros((n, out_c, full_h, full_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, _strided(i, h, stride), _strided(j, w, stride)] += np.einsum(
                "nchw,co->nohw", x.data, weight.data[:, :, i, j], optimize=True)
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(g):
        gfull = np.zeros_like(full)
        gfull[:, :, padding:padding + ho, padding:padding + wo] = g
        gx = np.zeros_like(x.data)
        gweight = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                window = gfull[:, :, _strided(i, h, stride), _strided(j, w, stride)]
                gx += np.einsum("nohw,co->nchw", window, weight.data[:, :, i, j], optimize=True)
                gweight[:, :, i, j] = np.einsum("nchw,nohw->co", x.data, window, optimize=True)
        grads = [gx, gweight]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, parents, _backward)


def batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """
    Per-channel batch normalization.

    In training mode the batch statistics normalize the input and the
    running statistics (plain numpy buffers) are updated in place with the
    unbiased batch variance. In eval mode the running statistics are used.

    Args:
        x (Tensor): input of shape (N, C, H, W)
        gamma, beta (Tensor): affine parameters of shape (C,)
        running_mean, running_var (np.ndarray): buffers of shape (C,)
        training (bool): use batch statistics
        momentum (float): running-stat update rate
        eps (float): variance floor

    Returns:
        Tensor: normalized output
    """
    channels = x.shape[1]
    for name, param in (("gamma", gamma.data), ("beta", beta.data),
                        ("running_mean", running_mean), ("running_var", running_var)):
        if param.shape != (channels,):
            raise ShapeError(f"{name} has shape {param.shape}, expected ({channels},)",
                             axis="channels")
    g_ = gamma.data.reshape(1, -1, 1, 1)
    b_ = beta.data.reshape(1, -1, 1, 1)
    parents = (x, gamma, beta)

    if not training:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        out = xhat * g_ + b_

        def _backward_eval(g):
            return (g * g_ * inv_std.reshape(1, -1, 1, 1),
                    (g * xhat).sum(axis=(0, 2, 3)),
                    g.sum(axis=(0, 2, 3)))

        return make_result(out.astype(x.dtype, copy=False), parents, _backward_eval)

    count = x.size // channels
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    unbiased = var * (count / (count - 1)) if count > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased

    inv_std = (1.0 / np.sqrt(var + eps)).reshape(1, -1, 1, 1)
    xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv_std
    out = xhat * g_ + b_

    def _backward(g):
        gxhat = g * g_
        gx = inv_std / count * (
            count * gxhat
            - gxhat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result(out.astype(x.dtype, copy=False), parents, _backward)


def adaptive_partition(size, out_size):
    """Region bounds [floor(i*in/out), floor((i+1)*in/out)) for every output cell."""
    return [((i * size) // out_size, ((i + 1) * size) // out_size) for i in range(out_size)]


def adaptive_max_pool2d_array(data, out_h, out_w):
    """
    Adaptive max pooling on a plain array of shape (..., H, W).

    Returns:
        tuple: (pooled values, flat argmax index into H*W for every output cell)
    """
    in_h, in_w = data.shape[-2:]
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"pooled size must be positive, got {out_h}x{out_w}", axis="height")
    if out_h > in_h:
        raise ShapeError(f"cannot pool height {in_h} up to {out_h}", axis="height")
    if out_w > in_w:
        raise ShapeError(f"cannot pool width {in_w} up to {out_w}", axis="width")
    lead = data.shape[:-2]
    flat = data.reshape(-1, in_h, in_w)
    if in_h % out_h == 0 and in_w % out_w == 0:
        kh, kw = in_h // out_h, in_w // out_w
        blocks = flat.reshape(-1, out_h, kh, out_w, kw).transpose(0, 1, 3, 2, 4)
        blocks = blocks.reshape(-1, out_h, out_w, kh * kw)
        local = blocks.argmax(axis=-1)
        pooled = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
        rows = np.arange(out_h)[:, None] * kh + local // kw
        cols = np.arange(out_w)[None, :] * kw + local % kw
        index = rows * in_w + cols
    else:
        pooled = np.empty((flat.shape[0], out_h, out_w), dtype=data.dtype)
        index = np.empty((flat.shape[0], out_h, out_w), dtype=np.int64)
        for i, (r0, r1) in enumerate(adaptive_partition(in_h, out_h)):
            for j, (c0, c1) in enumerate(adaptive_partition(in_w, out_w)):
                region = flat[:, r0:r1, c0:c1].reshape(flat.shape[0], -1)
                local = region.argmax(axis=1)
                pooled[:, i, j] = region[np.arange(flat.shape[0]), local]
                width = c1 - c0
                index[:, i, j] = (r0 + local // width) * in_w + c0 + local % width
    return pooled.reshape(*lead, out_h, out_w), index.reshape(*lead, out_h, out_w)


def adaptive_max_pool2d(x, out_h, out_w):
    """
    Adaptive max pooling to (out_h, out_w); the gradient routes to the argmax.

    Raises:
        ShapeError: when the target is larger than the input
    """
    pooled, index = adaptive_max_pool2d_array(x.data, out_h, out_w)
    in_h, in_w = x.shape[-2:]

    def _backward(g):
        grad = np.zeros((int(np.prod(x.shape[:-2])), in_h * in_w), dtype=g.dtype)
        flat_index = index.reshape(grad.shape[0], -1)
        np.add.at(grad, (np.arange(grad.shape[0])[:, None], flat_index), g.reshape(grad.shape[0], -1))
        return (grad.reshape(x.shape),)

    return make_result(np.ascontiguousarray(pooled), (x,), _backward)


def upsample_nearest2d(x, factor_h, factor_w=None):
    """Nearest-neighbour upsampling by integer factors; the gradient is a block sum."""
    factor_w = factor_h if factor_w is None else factor_w
    if factor_h == 1 and factor_w == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor_h, axis=2), factor_w, axis=3)

    def _backward(g):
        return (g.reshape(n, c, h, factor_h, w, factor_w).sum(axis=(3, 5)),)

    return make_result(out, (x,), _backward)


def linear(x, weight, bias=None):
    """Dense layer ``x @ weight.T + bias`` on (N, in) inputs."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} features, got {x.shape[-1]}",
                         axis="features")
    out = x @ weight.transpose()
    return out if bias is None else out + bias


def mse_loss(pred, target):
    """
    Mean of squared differences over all elements.

    Raises:
        ShapeError: when shapes differ
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}", axis="shape")
    diff = pred.data - target.data
    count = diff.size

    def _backward(g):
        grad = (2.0 / count) * g * diff
        return grad, -grad

    return make_result(np.asarray(np.mean(diff * diff)), (pred, target), _backward)


def bce_with_logits(logit, label):
    """
    Binary cross-entropy on raw logits, averaged over elements.

    Uses ``max(z, 0) - z*y + log(1 + exp(-|z|))`` so that |z| up to and beyond
    100 stays finite.

    Args:
        logit (Tensor): scalar or batch of logits
        label (float or array): target in {0, 1}, broadcast against the logits

    Returns:
        Tensor: scalar loss
    """
    z = logit.data
    y = np.broadcast_to(np.asarray(label, dtype=z.dtype), z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = max(z.size, 1)

    def _backward(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        return (g * (sig - y) / count,)

    return make_result(np.asarray(loss.mean()), (logit,), _backward)
