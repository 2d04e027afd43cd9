"""
DistilVAD - Finite-difference gradient checks

Compares tape gradients with central finite differences. Meant for double
precision; in single precision the differences are dominated by rounding.
"""
import logging
from dataclasses import dataclass

import numpy as np

from distilvad.tensor import Tape, no_grad

# Configure logger
logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    """
    Attributes:
        max_rel_error (float): worst relative error over the checked elements
        worst_index (tuple): element index where it occurred
        worst_name (str): parameter name (whole-model checks) or "x"
        checked (int): number of elements compared
        tol (float): tolerance the report was judged against
    """

    max_rel_error: float
    worst_index: tuple
    worst_name: str
    checked: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def _relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), DENOMINATOR_FLOOR)


def _numeric(f, tensor, index):
    original = tensor.data[index]
    h = 1e-5 * max(1.0, abs(float(original)))
    with no_grad():
        tensor.data[index] = original + h
        plus = float(f().data)
        tensor.data[index] = original - h
        minus = float(f().data)
    tensor.data[index] = original
    return (plus - minus) / (2.0 * h)


def _analytic(f, tensors):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def grad_check(f, x, tol=1e-4):
    """
    Check d f(x) / dx element by element.

    Args:
        f (callable): maps a Tensor to a scalar Tensor
        x (Tensor): input with requires_grad set
        tol (float): relative error threshold

    Returns:
        GradCheckReport: worst relative error and where it occurred
    """
    x.requires_grad = True
    (analytic,) = _analytic(lambda: f(x), [x])
    worst, worst_index = 0.0, ()
    for index in np.ndindex(*x.shape):
        err = _relative_error(analytic[index], _numeric(lambda: f(x), x, index))
        if err > worst:
            worst, worst_index = err, index
    return GradCheckReport(worst, worst_index, "x", x.size, tol)


def grad_check_params(loss_fn, named_params, rng, samples_per_param=6, tol=1e-4):
    """
    Check gradients of a scalar loss with respect to many parameters.

    Large tensors are sampled: ``samples_per_param`` random elements each.

    Args:
        loss_fn (callable): no-argument function returning a scalar Tensor
        named_params (iterable): (name, Parameter) pairs
        rng (np.random.Generator): element sampler
        samples_per_param (int): elements checked per parameter tensor
        tol (float): relative error threshold

    Returns:
        GradCheckReport: worst relative error across all sampled elements
    """
    named_params = list(named_params)
    analytic = _analytic(loss_fn, [p for _, p in named_params])
    worst, worst_index, worst_name, checked = 0.0, (), "", 0
    for (name, param), grad in zip(named_params, analytic):
        count = min(samples_per_param, param.size)
        for flat in rng.choice(param.size, size=count, replace=False):
            index = np.unravel_index(int(flat), param.shape)
            err = _relative_error(grad[index], _numeric(loss_fn, param, index))
            checked += 1
            if err > worst:
                worst, worst_index, worst_name = err, index, name
    if worst >= tol:
        logger.warning(f"Gradient check failed at {worst_name}{worst_index}: rel. error {worst:.3e}")
    return GradCheckReport(worst, worst_index, worst_name, checked, tol)
