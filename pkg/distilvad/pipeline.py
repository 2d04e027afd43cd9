"""
DistilVAD - Pipeline stages

Each stage reads the artifacts of the previous one from the run directory:

    gen        data/<split>/<video>/{<t>.pgm, labels.csv}, data/masks/
    pretrain   encoder.ckpt (+ pretrain rows of losses.csv)
    distill    student.ckpt (+ distill rows of losses.csv)
    eval       eval_report.csv, frame_scores.csv
"""
import logging
import os

from distilvad.checkpoint import load_checkpoint
from distilvad.evaluation import (
    parse_scorer,
    score_autoencoder,
    score_clips,
    score_student,
    score_teacher,
)
from distilvad.exceptions import EmptyDatasetError
from distilvad.metrics import write_frame_scores, write_report
from distilvad.models import build_autoencoder, build_student
from distilvad.synthvid import generate_dataset, load_dataset, save_dataset
from distilvad.teachers import build_teacher
from distilvad.training import distill_train, pretrain_ae

# Configure logger
logger = logging.getLogger(__name__)


def generate(cfg):
    """Generate the synthetic dataset and write it to the data directory."""
    dataset = generate_dataset(cfg.scene)
    save_dataset(dataset, cfg.paths.data)
    cfg.save(cfg.paths.artifact("config.json"))
    return dataset


def load_data(cfg, splits=None):
    """
    Load the dataset of a run.

    Raises:
        EmptyDatasetError: when ``gen`` has not been run
    """
    root = cfg.paths.data
    if not os.path.isdir(root):
        raise EmptyDatasetError(f"no dataset at {root}; run the gen stage first")
    return load_dataset(root, splits) if splits else load_dataset(root)


def build_teachers(cfg):
    return [build_teacher(spec, i) for i, spec in enumerate(cfg.teachers)]


def pretrain(cfg, dataset, resume=None):
    """Phase 1 on the normal-only training split."""
    return pretrain_ae(dataset.train, cfg.model, cfg.train, resume=resume,
                       checkpoint_path=cfg.paths.encoder_checkpoint, loss_csv=cfg.paths.loss_csv)


def distill(cfg, dataset, teachers=None, resume=None):
    """Phase 2 on the configured distillation split."""
    teachers = teachers or build_teachers(cfg)
    pretrained = cfg.paths.encoder_checkpoint if cfg.train.pretrained and not resume else None
    return distill_train(dataset.split(cfg.train.distill_split), teachers, cfg.model, cfg.train,
                         pretrained=pretrained, resume=resume,
                         checkpoint_path=cfg.paths.student_checkpoint, loss_csv=cfg.paths.loss_csv)


def load_student(cfg, path=None):
    """Student weights from a distillation checkpoint, in eval mode."""
    student = build_student(cfg.model, cfg.train.seed)
    student.load_state_dict(load_checkpoint(path or cfg.paths.student_checkpoint))
    return student.eval()


def load_autoencoder(cfg, path=None):
    """Encoder and decoder from a pre-training checkpoint, in eval mode."""
    tensors = load_checkpoint(path or cfg.paths.encoder_checkpoint)
    encoder, decoder = build_autoencoder(cfg.model, cfg.train.seed)
    encoder.load_state_dict(tensors)
    decoder.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("dec.")})
    return encoder.eval(), decoder.eval()


def scorer_fn(cfg, teachers=None):
    """Per-clip scoring function selected by ``cfg.eval.scorer``."""
    teachers = teachers if teachers is not None else build_teachers(cfg)
    kind, index = parse_scorer(cfg.eval.scorer, len(teachers))
    stride, batch = cfg.train.stride, cfg.eval.batch_size
    if kind == "student":
        student = load_student(cfg)
        return lambda clip: score_student(student, clip, stride, batch)
    if kind == "ae":
        encoder, decoder = load_autoencoder(cfg)
        return lambda clip: score_autoencoder(encoder, decoder, clip, stride, batch)
    teacher = teachers[index]
    return lambda clip: score_teacher(teacher, clip, cfg.model.head_resolutions)


def evaluate(cfg, dataset, teachers=None):
    """
    Score the test split and write the AUC report and per-frame scores.

    Returns:
        tuple: (micro RocResult, macro RocResult)
    """
    series = score_clips(dataset.test, scorer_fn(cfg, teachers))
    write_frame_scores(cfg.paths.frame_scores_csv, series)
    return write_report(cfg.paths.report_csv, series)
