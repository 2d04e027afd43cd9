"""
DistilVAD - Losses

Reconstruction, distillation and adversarial distillation losses.

The adversarial objective is the usual GAN cross-entropy: the discriminator
pushes D(teacher) to 1 and D(student) to 0; the generator either minimizes
log(1 - D(student)) (saturating, the literal min-max game) or
-log D(student) (non-saturating). The min-max form is sometimes printed as
"1 - log D"; that reading has no consistent game value, so log(1 - D) is used.
"""
import logging

import numpy as np

from distilvad import functional as F
from distilvad.exceptions import ConfigError, ShapeError
from distilvad.tensor import Tensor

# Configure logger
logger = logging.getLogger(__name__)

SIDES = ("discriminator", "generator")
GAN_FORMS = ("saturating", "non_saturating")


def _zero(dtype=None):
    return Tensor(np.zeros((), dtype=dtype) if dtype else 0.0)


def _as_maps(maps):
    return [m if isinstance(m, Tensor) else Tensor(np.asarray(m)) for m in maps]


def loss_ae(frame, reconstruction):
    """Mean squared reconstruction error over every element."""
    return F.mse_loss(reconstruction, frame)


def loss_kd_single(teacher_maps, student_maps):
    """
    Sum over resolutions of the per-resolution mean squared error.

    Args:
        teacher_maps (list): r target maps (arrays or Tensors)
        student_maps (list): r student maps of matching shapes

    Returns:
        Tensor: scalar loss
    """
    if len(teacher_maps) != len(student_maps):
        raise ShapeError(f"{len(teacher_maps)} teacher maps vs {len(student_maps)} student maps",
                         axis="maps")
    total = None
    for target, pred in zip(_as_maps(teacher_maps), _as_maps(student_maps)):
        term = F.mse_loss(pred, target)
        total = term if total is None else total + term
    return total if total is not None else _zero()


def loss_kd_total(teacher_map_sets, student_maps, weights):
    """
    Weighted sum of the single-teacher distillation losses.

    Teachers with weight 0 are skipped, so their targets never enter the tape.
    """
    if len(weights) != len(teacher_map_sets):
        raise ConfigError(f"{len(weights)} weights for {len(teacher_map_sets)} teachers",
                          key="train.teacher_weights")
    total = None
    for weight, maps in zip(weights, teacher_map_sets):
        if weight == 0:
            continue
        term = loss_kd_single(maps, student_maps)
        term = term if weight == 1 else term * float(weight)
        total = term if total is None else total + term
    return total if total is not None else _zero()


def discriminator_forward(discriminator, maps):
    """Logits of ``discriminator`` on a batch of map sets, shape (N,)."""
    return discriminator(_as_maps(maps))


def loss_akd_single(discriminator, teacher_maps, student_maps, side="generator",
                    gan_form="non_saturating"):
    """
    Adversarial loss of one teacher/discriminator pair.

    Args:
        discriminator (Discriminator): the pair's discriminator
        teacher_maps (list): teacher targets, never differentiated
        student_maps (list): student maps; detached on the discriminator side
        side (str): "discriminator" or "generator"
        gan_form (str): "saturating" or "non_saturating" (generator side only)

    Returns:
        Tensor: scalar loss
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    if gan_form not in GAN_FORMS:
        raise ConfigError(f"must be one of {GAN_FORMS}, got {gan_form!r}", key="train.gan_form")
    if side == "discriminator":
        real = [m.detach() if isinstance(m, Tensor) else m for m in teacher_maps]
        fake = [m.detach() if isinstance(m, Tensor) else m for m in student_maps]
        real_logit = discriminator_forward(discriminator, real)
        fake_logit = discriminator_forward(discriminator, fake)
        return F.bce_with_logits(real_logit, 1.0) + F.bce_with_logits(fake_logit, 0.0)
    fake_logit = discriminator_forward(discriminator, student_maps)
    if gan_form == "non_saturating":
        return F.bce_with_logits(fake_logit, 1.0)
    return -F.bce_with_logits(fake_logit, 0.0)


def loss_akd_total(discriminators, teacher_map_sets, student_maps, side="generator",
                   gan_form="non_saturating"):
    """Sum of the adversarial losses over teacher/discriminator pairs."""
    if len(discriminators) != len(teacher_map_sets):
        raise ConfigError(f"{len(discriminators)} discriminators for {len(teacher_map_sets)} teachers",
                          key="teachers")
    total = None
    for disc, maps in zip(discriminators, teacher_map_sets):
        term = loss_akd_single(disc, maps, student_maps, side=side, gan_form=gan_form)
        total = term if total is None else total + term
    return total if total is not None else _zero()


def loss_total(kd, akd, alpha):
    """
    ``kd + alpha * akd``.

    With ``alpha == 0`` (or no adversarial term) ``kd`` is returned as is, so
    nothing of the adversarial branch reaches the tape.
    """
    if alpha < 0:
        raise ConfigError(f"must be non-negative, got {alpha}", key="train.alpha")
    if akd is None or alpha == 0:
        return kd
    if kd is None:
        return akd * float(alpha)
    return kd + akd * float(alpha)
