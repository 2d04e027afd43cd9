"""
DistilVAD - Training

Phase 1 trains the encoder and decoder to reconstruct the middle frame of a
sequence. Phase 2 drops the decoder, attaches the anomaly heads and trains
the student on teacher maps with the standard and adversarial distillation
losses, alternating discriminator and student updates on every batch.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from distilvad.checkpoint import load_checkpoint, save_checkpoint
from distilvad.discriminator import build_discriminator
from distilvad.exceptions import (
    CheckpointError,
    ConfigError,
    EmptyDatasetError,
    NonFiniteError,
    TeacherResolutionError,
)
from distilvad.losses import (
    GAN_FORMS,
    loss_ae,
    loss_akd_single,
    loss_akd_total,
    loss_kd_total,
    loss_total,
)
from distilvad.models import build_autoencoder, build_student
from distilvad.optim import AdamState, adam_step
from distilvad.teachers import MapNormalizer, downsample_map
from distilvad.tensor import Tape, Tensor, get_default_dtype, no_grad
from distilvad.utils import get_num_workers, show_progress

# Configure logger
logger = logging.getLogger(__name__)

PHASES = ("pretrain", "distill")
LOSS_COLUMNS = ["phase", "epoch", "batch", "l_ae", "l_kd", "l_akd", "l_total", "d1_loss", "d2_loss"]

STUDENT_STREAM, DISCRIMINATOR_STREAM, SHUFFLE_STREAM = 0, 1, 2


@dataclass
class TrainConfig:
    """
    Optimization settings for both phases.

    Attributes:
        epochs (int): distillation epochs
        pretrain_epochs (int): reconstruction pre-training epochs
        batch_size (int): sequences per mini-batch
        lr, weight_decay (float): Adam settings, shared by the student and
            the discriminators
        stride (int): temporal step t between the frames of a sequence
        alpha (float): weight of the adversarial term
        teacher_weights (list): per-teacher weights of the distillation term
        seed (int): master seed of the student, discriminator and shuffling streams
        phase (str): "pretrain" or "distill"
        d_steps_per_s_step (int): discriminator updates per student update;
            0 freezes the discriminators
        gan_form (str): "non_saturating" or "saturating" generator loss
        use_kd, use_akd (bool): enable the standard / adversarial terms
        pretrained (bool): initialize the student from the phase-1 encoder
        distill_split (str): split the student is distilled on
        max_batches_per_epoch (int): cap on batches per epoch, 0 for none
    """

    epochs: int = 35
    pretrain_epochs: int = 35
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-5
    stride: int = 3
    alpha: float = 0.1
    teacher_weights: list = field(default_factory=lambda: [1.0, 1.0])
    seed: int = 0
    phase: str = "distill"
    d_steps_per_s_step: int = 1
    gan_form: str = "non_saturating"
    use_kd: bool = True
    use_akd: bool = True
    pretrained: bool = True
    distill_split: str = "distill"
    max_batches_per_epoch: int = 0

    def validate(self):
        if self.alpha < 0:
            raise ConfigError(f"must be >= 0, got {self.alpha}", key="train.alpha")
        if any(w < 0 for w in self.teacher_weights):
            raise ConfigError(f"weights must be >= 0, got {self.teacher_weights}",
                              key="train.teacher_weights")
        if self.stride < 1:
            raise ConfigError(f"must be >= 1, got {self.stride}", key="train.stride")
        if self.batch_size < 1:
            raise ConfigError(f"must be >= 1, got {self.batch_size}", key="train.batch_size")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0", key="train.epochs")
        if self.d_steps_per_s_step < 0:
            raise ConfigError(f"must be >= 0, got {self.d_steps_per_s_step}",
                              key="train.d_steps_per_s_step")
        if self.gan_form not in GAN_FORMS:
            raise ConfigError(f"must be one of {GAN_FORMS}, got {self.gan_form!r}", key="train.gan_form")
        if self.phase not in PHASES:
            raise ConfigError(f"must be one of {PHASES}, got {self.phase!r}", key="train.phase")
        if self.distill_split not in ("train", "distill"):
            raise ConfigError(f"must be 'train' or 'distill', got {self.distill_split!r}",
                              key="train.distill_split")
        if not (self.use_kd or self.use_akd):
            raise ConfigError("at least one of use_kd / use_akd must be enabled", key="train.use_kd")
        if self.use_kd and not any(w > 0 for w in self.teacher_weights):
            raise ConfigError("at least one teacher weight must be positive", key="train.teacher_weights")
        if not self.use_kd and self.alpha == 0:
            raise ConfigError("adversarial-only training needs alpha > 0", key="train.alpha")
        return self


@dataclass
class LossReport:
    """
    Loss values of one mini-batch. Unused terms are NaN.

    Attributes:
        d_losses (list): discriminator loss per teacher, from the last
            discriminator update of the batch
    """

    phase: str
    epoch: int
    batch: int
    l_ae: float = math.nan
    l_kd: float = math.nan
    l_akd: float = math.nan
    l_total: float = math.nan
    d_losses: list = field(default_factory=list)

    def to_row(self):
        row = {"phase": self.phase, "epoch": self.epoch, "batch": self.batch, "l_ae": self.l_ae,
               "l_kd": self.l_kd, "l_akd": self.l_akd, "l_total": self.l_total}
        for i in range(max(2, len(self.d_losses))):
            row[f"d{i + 1}_loss"] = self.d_losses[i] if i < len(self.d_losses) else math.nan
        return row


def loss_frame(reports):
    """Reports as a DataFrame with the loss CSV columns."""
    rows = [r.to_row() for r in reports]
    df = pd.DataFrame(rows)
    if df.empty:
        return pd.DataFrame(columns=LOSS_COLUMNS)
    extra = [c for c in df.columns if c not in LOSS_COLUMNS]
    return df[LOSS_COLUMNS + extra]


def write_loss_csv(path, reports, phase, keep_until_epoch=0):
    """
    Write the loss stream CSV shared by both phases.

    Rows of the other phase already in ``path`` are kept, as are rows of this
    phase up to ``keep_until_epoch`` (the epoch a resumed run started after).
    """
    df = loss_frame(reports)
    if os.path.exists(path):
        try:
            previous = pd.read_csv(path)
            previous = previous[(previous["phase"] != phase) | (previous["epoch"] <= keep_until_epoch)]
        except (pd.errors.EmptyDataError, pd.errors.ParserError, KeyError) as e:
            logger.warning(f"Replacing unreadable loss file {path}: {e}")
            previous = pd.DataFrame(columns=df.columns)
        df = pd.concat([previous, df], ignore_index=True)
        order = {name: i for i, name in enumerate(PHASES)}
        df = df.sort_values(["phase", "epoch", "batch"], key=lambda col: col.map(order)
                            if col.name == "phase" else col, kind="stable")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"Wrote {len(df)} loss rows to {path}")


# sequence assembly

def frame_offsets(count, stride):
    """Temporal offsets of a sequence, e.g. (-t, 0, t) for three frames."""
    return [(k - count // 2) * stride for k in range(count)]


def valid_centers(length, stride, count=3):
    """Centre indices whose whole sequence lies inside a clip of ``length`` frames."""
    offsets = frame_offsets(count, stride)
    return list(range(-offsets[0], length - offsets[-1]))


def assemble_sequence(frames, center, stride, count=3, clamp=False):
    """
    Stack the frames of one sequence on the channel axis, scaled to [0, 1].

    Args:
        frames (np.ndarray): (L, H, W) or (L, C, H, W) uint8 clip
        center (int): index of the middle frame
        stride (int): temporal step
        count (int): frames per sequence
        clamp (bool): repeat edge frames instead of failing at clip borders

    Returns:
        np.ndarray: (count * C, H, W) in the default dtype
    """
    indices = [center + o for o in frame_offsets(count, stride)]
    if clamp:
        indices = [min(max(i, 0), len(frames) - 1) for i in indices]
    elif indices[0] < 0 or indices[-1] >= len(frames):
        raise IndexError(f"sequence around frame {center} leaves the clip of {len(frames)} frames")
    picked = frames[indices]
    if picked.ndim == 3:
        picked = picked[:, None]
    picked = picked.reshape(-1, *picked.shape[-2:])
    return picked.astype(get_default_dtype()) / 255.0


def sequence_index(clips, stride, count):
    """(clip index, centre) of every valid training sequence."""
    return [(c, i) for c, clip in enumerate(clips) for i in valid_centers(len(clip), stride, count)]


def make_batch(clips, samples, stride, count):
    return np.stack([assemble_sequence(clips[c].frames, i, stride, count) for c, i in samples])


def middle_frames(clips, samples):
    frames = np.stack([clips[c].frames[i] for c, i in samples])
    if frames.ndim == 3:
        frames = frames[:, None]
    return frames.astype(get_default_dtype()) / 255.0


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def batches_for_epoch(sample_count, cfg, epoch):
    """Shuffled index batches of an epoch; the order depends only on (seed, epoch)."""
    order = _stream(cfg.seed, SHUFFLE_STREAM, epoch).permutation(sample_count)
    batches = [order[s:s + cfg.batch_size] for s in range(0, sample_count, cfg.batch_size)]
    if cfg.max_batches_per_epoch:
        batches = batches[:cfg.max_batches_per_epoch]
    return batches


def _check_finite(value, what, epoch, batch):
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} became {value} at epoch {epoch}, batch {batch}")


def _checkpoint_epoch(tensors, path):
    if "train.epoch" not in tensors:
        raise CheckpointError(f"{path} is not a training checkpoint: no train.epoch entry")
    return int(tensors["train.epoch"][0])


# teacher targets

def build_targets(clips, samples, teachers, resolutions, workers=None):
    """
    Teacher map sets for every sample, normalized per teacher over the split.

    Teachers are frozen, so their maps are computed once, in parallel.

    Returns:
        list: per teacher, a list of (S, 1, h, w) arrays, one per resolution
    """
    workers = workers or get_num_workers()
    dtype = get_default_dtype()
    targets = []
    for teacher in teachers:
        normalizer = MapNormalizer()

        def pooled(sample):
            c, i = sample
            full = teacher(clips[c], i).full_map
            return float(full.min()), float(full.max()), downsample_map(full, resolutions)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(pooled, samples))
        for low, high, _ in results:
            normalizer.update(np.array([low, high]))
        per_head = []
        for k in range(len(resolutions)):
            stacked = np.stack([maps[k] for _, _, maps in results])[:, None]
            per_head.append(normalizer.transform(stacked).astype(dtype))
        targets.append(per_head)
        logger.info(f"Teacher {teacher.name}: {len(samples)} targets, raw range "
                    f"[{normalizer.low:.3f}, {normalizer.high:.3f}]")
    return targets


def check_teacher_resolution(clips, teachers, resolutions):
    """
    Fail before training when a teacher's maps are coarser than a head.

    Raises:
        TeacherResolutionError
    """
    clip = clips[0]
    for teacher in teachers:
        height, width = teacher(clip, 0).full_map.shape
        for h, w in resolutions:
            if h > height or w > width:
                raise TeacherResolutionError(
                    f"teacher {teacher.name} emits {height}x{width} maps, head needs {h}x{w}")


# phase 1

@dataclass
class PretrainResult:
    encoder: object
    decoder: object
    state: AdamState
    reports: list


def _ae_state_tensors(encoder, decoder, state, epoch):
    tensors = dict(encoder.state_dict())
    tensors.update({f"dec.{k}": v for k, v in decoder.state_dict().items()})
    tensors.update(state.state_arrays("adam"))
    tensors["train.epoch"] = np.array([epoch], dtype=np.float32)
    return tensors


def _ae_params(encoder, decoder):
    params = dict(encoder.named_parameters())
    params.update(decoder.named_parameters(prefix="dec."))
    return params


def pretrain_ae(clips, model_cfg, cfg, resume=None, checkpoint_path=None, loss_csv=None):
    """
    Reconstruction pre-training of the encoder and decoder.

    Args:
        clips (list): normal-only training clips
        model_cfg (ModelConfig): architecture
        cfg (TrainConfig): optimization settings (``pretrain_epochs`` epochs)
        resume (str, optional): checkpoint written by a previous run
        checkpoint_path (str, optional): written at every epoch boundary;
            holds the encoder, ``dec.*`` decoder entries, Adam moments and
            the epoch counter
        loss_csv (str, optional): loss stream output

    Returns:
        PretrainResult

    Raises:
        EmptyDatasetError: no complete sequence in ``clips``
        NonFiniteError: the loss diverged
    """
    cfg.validate()
    samples = sequence_index(clips, cfg.stride, model_cfg.input_frames)
    if not samples:
        raise EmptyDatasetError("no complete frame sequence in the training clips")
    encoder, decoder = build_autoencoder(model_cfg, _stream(cfg.seed, STUDENT_STREAM))
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    start = 0
    if resume:
        tensors = load_checkpoint(resume)
        encoder.load_state_dict(tensors)
        decoder.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("dec.")})
        state.load_arrays(tensors, "adam")
        start = _checkpoint_epoch(tensors, resume)
        logger.info(f"Resuming pre-training from {resume} after epoch {start}")

    params = _ae_params(encoder, decoder)
    reports = []
    for epoch in range(start + 1, cfg.pretrain_epochs + 1):
        encoder.train()
        decoder.train()
        batches = batches_for_epoch(len(samples), cfg, epoch)
        losses = []
        for b, idx in enumerate(tqdm(batches, desc=f"pretrain {epoch}/{cfg.pretrain_epochs}",
                                     disable=not show_progress(), leave=False)):
            chosen = [samples[i] for i in idx]
            x = Tensor(make_batch(clips, chosen, cfg.stride, model_cfg.input_frames))
            target = Tensor(middle_frames(clips, chosen))
            with Tape() as tape:
                loss = loss_ae(target, decoder(encoder(x)))
            value = loss.item()
            _check_finite(value, "reconstruction loss", epoch, b)
            encoder.zero_grad()
            decoder.zero_grad()
            tape.backward(loss)
            adam_step(params, state)
            reports.append(LossReport("pretrain", epoch, b, l_ae=value, l_total=value))
            losses.append(value)
            logger.debug(f"pretrain epoch {epoch} batch {b}: l_ae={value:.6f}")
        logger.info(f"Pre-training epoch {epoch}: mean l_ae={np.mean(losses):.6f}")
        if checkpoint_path:
            save_checkpoint(checkpoint_path, _ae_state_tensors(encoder, decoder, state, epoch))
    if loss_csv:
        write_loss_csv(loss_csv, reports, "pretrain", keep_until_epoch=start)
    encoder.eval()
    decoder.eval()
    return PretrainResult(encoder, decoder, state, reports)


# phase 2

@dataclass
class DistillResult:
    student: object
    discriminators: list
    student_state: AdamState
    discriminator_states: list
    reports: list


def discriminator_update(discriminator, state, teacher_maps, student_maps, gan_form="non_saturating",
                         what="discriminator loss", epoch=0, batch=0):
    """
    One Adam step of a discriminator on a batch; student maps enter as constants.

    Returns:
        float: the discriminator loss before the step

    Raises:
        NonFiniteError: when the loss is not finite; the weights are left untouched
    """
    tape, loss = _discriminator_loss(discriminator, teacher_maps, student_maps, gan_form, what, epoch, batch)
    tape.backward(loss)
    adam_step(discriminator.named_parameters(), state)
    return loss.item()


def _discriminator_loss(discriminator, teacher_maps, student_maps, gan_form, what, epoch, batch):
    discriminator.zero_grad()
    with Tape() as tape:
        loss = loss_akd_single(discriminator, teacher_maps, student_maps, side="discriminator",
                               gan_form=gan_form)
    _check_finite(loss.item(), what, epoch, batch)
    return tape, loss


def distill_step(student, discriminators, s_state, d_states, x, targets, cfg, epoch=0, batch=0):
    """
    One distillation batch: the student forward pass, ``d_steps_per_s_step``
    updates of every discriminator on the detached student maps, then the
    student update on ``kd + alpha * akd``.

    Args:
        x (Tensor): (B, frames * C, H, W) input sequences
        targets (list): per teacher, one (B, 1, h, w) array per head

    Returns:
        tuple: (l_kd, l_akd, l_total, d_losses) as floats

    Raises:
        NonFiniteError: before the first update that a non-finite loss would reach
    """
    tape = Tape()
    with tape:
        maps = student(x)
        kd = loss_kd_total(targets, maps, cfg.teacher_weights) if cfg.use_kd else None
    l_kd = kd.item() if kd is not None else math.nan
    if kd is not None:
        _check_finite(l_kd, "KD loss", epoch, batch)

    d_losses = []
    if cfg.use_akd:
        for _ in range(cfg.d_steps_per_s_step):
            fake = [m.detach() for m in maps]
            pending = [_discriminator_loss(d, t, fake, cfg.gan_form, f"discriminator {i + 1} loss", epoch, batch)
                       for i, (d, t) in enumerate(zip(discriminators, targets))]
            d_losses = []
            for d, st, (d_tape, loss) in zip(discriminators, d_states, pending):
                d_tape.backward(loss)
                adam_step(d.named_parameters(), st)
                d_losses.append(loss.item())

    akd = None
    l_akd = math.nan
    if cfg.use_akd and cfg.alpha > 0:
        with tape:
            akd = loss_akd_total(discriminators, targets, maps, side="generator", gan_form=cfg.gan_form)
        l_akd = akd.item()
    elif cfg.use_akd:
        with no_grad():
            l_akd = loss_akd_total(discriminators, targets, [m.detach() for m in maps],
                                   side="generator", gan_form=cfg.gan_form).item()
    with tape:
        total = loss_total(kd, akd, cfg.alpha)
    l_total = total.item()
    _check_finite(l_total, "distillation loss", epoch, batch)

    student.zero_grad()
    for d in discriminators:
        d.zero_grad()
    tape.backward(total)
    adam_step(student.named_parameters(), s_state)
    return l_kd, l_akd, l_total, d_losses


def load_pretrained_encoder(student, source):
    """
    Copy phase-1 encoder weights into a student.

    Args:
        source (str or dict): checkpoint path or name -> array mapping

    Raises:
        CheckpointError: when an encoder entry is missing
    """
    tensors = load_checkpoint(source) if isinstance(source, str) else source
    missing = student.load_state_dict(tensors, strict=False)
    absent = [name for name in missing if not name.startswith("head")]
    if absent:
        raise CheckpointError(f"pre-trained checkpoint lacks {len(absent)} encoder entries, "
                              f"e.g. {absent[0]}")


def _distill_state_tensors(student, discriminators, s_state, d_states, epoch):
    tensors = dict(student.state_dict())
    for i, (d, st) in enumerate(zip(discriminators, d_states)):
        tensors.update({f"disc{i}.{k}": v for k, v in d.state_dict().items()})
        tensors.update(st.state_arrays(f"adam.disc{i}"))
    tensors.update(s_state.state_arrays("adam.student"))
    tensors["train.epoch"] = np.array([epoch], dtype=np.float32)
    return tensors


def distill_train(clips, teachers, model_cfg, cfg, pretrained=None, resume=None,
                  checkpoint_path=None, loss_csv=None, targets=None):
    """
    Adversarial multi-teacher distillation.

    Args:
        clips (list): distillation clips (frames only are used)
        teachers (list): frozen Teacher instances, one discriminator each
        model_cfg (ModelConfig): student architecture
        cfg (TrainConfig): optimization settings
        pretrained (str or dict, optional): phase-1 encoder weights, used
            when ``cfg.pretrained`` is set
        resume (str, optional): checkpoint of a previous distillation run
        checkpoint_path (str, optional): written at every epoch boundary
        loss_csv (str, optional): loss stream output
        targets (list, optional): precomputed ``build_targets`` output

    Returns:
        DistillResult
    """
    cfg.validate()
    if len(cfg.teacher_weights) != len(teachers):
        raise ConfigError(f"{len(cfg.teacher_weights)} weights for {len(teachers)} teachers",
                          key="train.teacher_weights")
    samples = sequence_index(clips, cfg.stride, model_cfg.input_frames)
    if not samples:
        raise EmptyDatasetError("no complete frame sequence in the distillation clips")
    resolutions = model_cfg.head_resolutions
    check_teacher_resolution(clips, teachers, resolutions)

    student = build_student(model_cfg, _stream(cfg.seed, STUDENT_STREAM))
    discriminators = [build_discriminator(resolutions, _stream(cfg.seed, DISCRIMINATOR_STREAM, i))
                      for i in range(len(teachers))]
    s_state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    d_states = [AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay) for _ in teachers]

    start = 0
    if resume:
        tensors = load_checkpoint(resume)
        student.load_state_dict(tensors)
        s_state.load_arrays(tensors, "adam.student")
        for i, (d, st) in enumerate(zip(discriminators, d_states)):
            d.load_state_dict({k[len(f"disc{i}."):]: v for k, v in tensors.items()
                               if k.startswith(f"disc{i}.")})
            st.load_arrays(tensors, f"adam.disc{i}")
        start = _checkpoint_epoch(tensors, resume)
        logger.info(f"Resuming distillation from {resume} after epoch {start}")
    elif cfg.pretrained:
        if pretrained is None:
            raise CheckpointError("distillation from a pre-trained encoder needs its checkpoint")
        load_pretrained_encoder(student, pretrained)

    if targets is None:
        targets = build_targets(clips, samples, teachers, resolutions)

    reports = []
    for epoch in range(start + 1, cfg.epochs + 1):
        student.train()
        for d in discriminators:
            d.train()
        batches = batches_for_epoch(len(samples), cfg, epoch)
        epoch_totals = []
        for b, idx in enumerate(tqdm(batches, desc=f"distill {epoch}/{cfg.epochs}",
                                     disable=not show_progress(), leave=False)):
            x = Tensor(make_batch(clips, [samples[i] for i in idx], cfg.stride, model_cfg.input_frames))
            batch_targets = [[head[idx] for head in per_teacher] for per_teacher in targets]
            l_kd, l_akd, l_total, d_losses = distill_step(student, discriminators, s_state, d_states,
                                                          x, batch_targets, cfg, epoch=epoch, batch=b)
            reports.append(LossReport("distill", epoch, b, l_kd=l_kd, l_akd=l_akd, l_total=l_total,
                                      d_losses=d_losses))
            epoch_totals.append(l_total)
            logger.debug(f"distill epoch {epoch} batch {b}: l_kd={l_kd:.6f} l_akd={l_akd:.6f} "
                         f"l_total={l_total:.6f}")
        logger.info(f"Distillation epoch {epoch}: mean l_total={np.mean(epoch_totals):.6f}")
        if checkpoint_path:
            save_checkpoint(checkpoint_path,
                            _distill_state_tensors(student, discriminators, s_state, d_states, epoch))
    if loss_csv:
        write_loss_csv(loss_csv, reports, "distill", keep_until_epoch=start)
    student.eval()
    for d in discriminators:
        d.eval()
    return DistillResult(student, discriminators, s_state, d_states, reports)
