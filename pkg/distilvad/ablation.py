"""
DistilVAD - Ablation runner

Each axis expands into a list of cases that differ from the base run in one
respect. Every case trains and evaluates on the same dataset under the same
seed; encoders are pre-trained once per architecture and teacher targets are
computed once per (frames, heads) layout.

    losses      AE, KD, AKD, AE+KD, AE+AKD, KD+AKD, AE+KD+AKD
    teachers    T1, T2, T1+T2
    alpha       0.0 .. 0.7
    heads       1x1, 4x4, 16x16, full, 1x1+4x4, 1x1+4x4+16x16
    frames      input frames per sequence
    ffn         pointwise, dense
    blocks      transformer blocks (m)
    attn_heads  attention heads per block (s)
"""
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from functools import partial

import pandas as pd

from distilvad.config import ABLATION_AXES
from distilvad.evaluation import score_autoencoder, score_clips, score_student
from distilvad.exceptions import UnknownAxisError
from distilvad.metrics import macro_auc, micro_auc
from distilvad.training import build_targets, distill_train, pretrain_ae, sequence_index

# Configure logger
logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ["axis", "config", "micro_auc", "macro_auc"]

LOSS_COMBINATIONS = (
    ("AE", dict(ae_only=True)),
    ("KD", dict(use_kd=True, use_akd=False, pretrained=False)),
    ("AKD", dict(use_kd=False, use_akd=True, pretrained=False)),
    ("AE+KD", dict(use_kd=True, use_akd=False, pretrained=True)),
    ("AE+AKD", dict(use_kd=False, use_akd=True, pretrained=True)),
    ("KD+AKD", dict(use_kd=True, use_akd=True, pretrained=False)),
    ("AE+KD+AKD", dict(use_kd=True, use_akd=True, pretrained=True)),
)
ALPHAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
FRAME_COUNTS = (1, 3, 5)
DEPTHS = (3, 4, 5, 6, 7)
DEFAULT_ALPHA = 0.1


@dataclass
class AblationCase:
    """
    Attributes:
        axis (str): ablation axis
        name (str): value along the axis, as written to the report
        model (ModelConfig): student architecture
        train (TrainConfig): optimization settings
        teachers (list): indices of the teachers distilled from
        ae_only (bool): score with the pre-trained auto-encoder instead of a student
    """

    axis: str
    name: str
    model: object
    train: object
    teachers: list = field(default_factory=list)
    ae_only: bool = False


def _head_sets(model_cfg):
    full = tuple(model_cfg.input_resolution)
    return [
        ("1x1", [(1, 1)]),
        ("4x4", [(4, 4)]),
        ("16x16", [(16, 16)]),
        ("full", [full]),
        ("1x1+4x4", [(1, 1), (4, 4)]),
        ("1x1+4x4+16x16", [(1, 1), (4, 4), (16, 16)]),
    ]


def _case(cfg, axis, name, model=None, train=None, teachers=None, ae_only=False):
    teachers = list(range(len(cfg.teachers))) if teachers is None else teachers
    train = dataclasses.replace(cfg.train, **(train or {}))
    if len(train.teacher_weights) != len(teachers):
        train.teacher_weights = [cfg.train.teacher_weights[i] for i in teachers]
    return AblationCase(axis, name, dataclasses.replace(cfg.model, **(model or {})), train, teachers, ae_only)


def ablation_configs(cfg, axis):
    """
    Expand one axis into its cases.

    Raises:
        UnknownAxisError: for axes outside ABLATION_AXES
    """
    if axis not in ABLATION_AXES:
        raise UnknownAxisError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    alpha = cfg.train.alpha or DEFAULT_ALPHA
    if axis == "losses":
        cases = []
        for name, flags in LOSS_COMBINATIONS:
            if flags.get("ae_only"):
                cases.append(_case(cfg, axis, name, ae_only=True))
            else:
                cases.append(_case(cfg, axis, name, train=dict(flags, alpha=alpha)))
        return cases
    if axis == "teachers":
        count = len(cfg.teachers)
        cases = [_case(cfg, axis, f"T{i + 1}", teachers=[i]) for i in range(count)]
        if count > 1:
            cases.append(_case(cfg, axis, "+".join(f"T{i + 1}" for i in range(count))))
        return cases
    if axis == "alpha":
        return [_case(cfg, axis, f"{a:.1f}", train=dict(alpha=a, use_kd=True, use_akd=True)) for a in ALPHAS]
    if axis == "heads":
        return [_case(cfg, axis, name, model=dict(head_resolutions=res)) for name, res in _head_sets(cfg.model)]
    if axis == "frames":
        return [_case(cfg, axis, str(n), model=dict(input_frames=n)) for n in FRAME_COUNTS
                if (n - 1) * cfg.train.stride + 1 <= cfg.scene.clip_length]
    if axis == "ffn":
        return [_case(cfg, axis, kind, model=dict(ffn_kind=kind)) for kind in ("pointwise", "dense")]
    if axis == "blocks":
        return [_case(cfg, axis, str(m), model=dict(blocks=m)) for m in DEPTHS]
    return [_case(cfg, axis, str(s), model=dict(attn_heads=s)) for s in DEPTHS]


def _score_ae(ae, clip, stride, batch):
    return score_autoencoder(ae.encoder, ae.decoder, clip, stride, batch)


def _score_student(student, clip, stride, batch):
    return score_student(student, clip, stride, batch)


class AblationRunner:
    """Runs cases on one dataset, sharing pre-trained encoders and teacher targets."""

    def __init__(self, cfg, dataset, teachers):
        self.cfg = cfg
        self.dataset = dataset
        self.teachers = teachers
        self._encoders = {}
        self._targets = {}

    def _encoder_key(self, model_cfg):
        spec = dataclasses.asdict(model_cfg)
        spec.pop("head_resolutions")
        return json.dumps(spec, sort_keys=True, default=list)

    def pretrained(self, model_cfg):
        key = self._encoder_key(model_cfg)
        if key not in self._encoders:
            logger.info(f"Pre-training encoder for {key}")
            self._encoders[key] = pretrain_ae(self.dataset.train, model_cfg, self.cfg.train)
        return self._encoders[key]

    def targets(self, model_cfg, train_cfg, indices):
        clips = self.dataset.split(train_cfg.distill_split)
        key = (model_cfg.input_frames, tuple(model_cfg.head_resolutions))
        if key not in self._targets:
            samples = sequence_index(clips, train_cfg.stride, model_cfg.input_frames)
            self._targets[key] = build_targets(clips, samples, self.teachers, model_cfg.head_resolutions)
        return [self._targets[key][i] for i in indices]

    def run(self, case):
        """
        Train and score one case on the test split.

        Returns:
            dict: one report row
        """
        cfg = self.cfg
        stride, batch = case.train.stride, cfg.eval.batch_size
        ae = self.pretrained(case.model) if case.ae_only or case.train.pretrained else None
        if case.ae_only:
            fn = partial(_score_ae, ae, stride=stride, batch=batch)
        else:
            clips = self.dataset.split(case.train.distill_split)
            result = distill_train(
                clips, [self.teachers[i] for i in case.teachers], case.model, case.train,
                pretrained=ae.encoder.state_dict() if ae else None,
                targets=self.targets(case.model, case.train, case.teachers),
            )
            fn = partial(_score_student, result.student, stride=stride, batch=batch)
        series = score_clips(self.dataset.test, fn)
        row = {"axis": case.axis, "config": case.name, "micro_auc": micro_auc(series).auc,
               "macro_auc": macro_auc(series).auc}
        logger.info(f"Ablation {case.axis}={case.name}: micro {row['micro_auc']:.4f}, "
                    f"macro {row['macro_auc']:.4f}")
        return row


def run_ablation(cfg, dataset, teachers, axes=None, path=None):
    """
    Run every case of the requested axes.

    Args:
        cfg (RunConfig): base run
        dataset (SyntheticDataset): generated data
        teachers (list): Teacher instances of the base run
        axes (list, optional): defaults to ``cfg.ablation.axes``
        path (str, optional): CSV output

    Returns:
        DataFrame with ``axis,config,micro_auc,macro_auc``
    """
    axes = list(axes or cfg.ablation.axes)
    cases = [case for axis in axes for case in ablation_configs(cfg, axis)]
    runner = AblationRunner(cfg, dataset, teachers)
    rows = [runner.run(case) for case in cases]
    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        table.to_csv(path, index=False, float_format="%.6f")
        logger.info(f"Wrote {len(table)} ablation rows to {path}")
    return table
