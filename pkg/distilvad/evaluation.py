"""
DistilVAD - Scoring test videos

Every frame of every clip gets a score; sequences at the clip borders
repeat the edge frames. Three scorers exist:
    student      mean of the head maxima of the distilled student
    ae           reconstruction error of the phase-1 auto-encoder
    teacher:<i>  the i-th teacher's own maps (upper bound for the student)
"""
import logging

import numpy as np

from distilvad.exceptions import ConfigError
from distilvad.metrics import ScoreSeries, frame_scores
from distilvad.teachers import downsample_map
from distilvad.tensor import Tensor, no_grad
from distilvad.training import assemble_sequence, middle_frames

# Configure logger
logger = logging.getLogger(__name__)


def clip_sequences(clip, stride, count):
    """(L, count * C, H, W) sequences centred on every frame, borders clamped."""
    return np.stack([assemble_sequence(clip.frames, t, stride, count, clamp=True)
                     for t in range(len(clip))])


def _chunks(length, batch_size):
    for start in range(0, length, batch_size):
        yield slice(start, min(start + batch_size, length))


def score_student(student, clip, stride, batch_size=64):
    """Per-frame student scores of one clip."""
    student.eval()
    sequences = clip_sequences(clip, stride, student.cfg.input_frames)
    scores = []
    with no_grad():
        for chunk in _chunks(len(sequences), batch_size):
            scores.append(frame_scores(student(Tensor(sequences[chunk]))))
    return np.concatenate(scores)


def score_autoencoder(encoder, decoder, clip, stride, batch_size=64):
    """Per-frame mean squared reconstruction error of the middle frame."""
    encoder.eval()
    decoder.eval()
    sequences = clip_sequences(clip, stride, encoder.cfg.input_frames)
    targets = middle_frames([clip], [(0, t) for t in range(len(clip))])
    scores = []
    with no_grad():
        for chunk in _chunks(len(sequences), batch_size):
            recon = decoder(encoder(Tensor(sequences[chunk]))).data
            diff = (recon - targets[chunk]).reshape(recon.shape[0], -1)
            scores.append(np.mean(diff * diff, axis=1))
    return np.concatenate(scores)


def score_teacher(teacher, clip, resolutions):
    """Per-frame scores of a teacher's maps, pooled like the student's heads."""
    scores = np.empty(len(clip))
    for t in range(len(clip)):
        maps = downsample_map(teacher(clip, t).full_map[None], resolutions)
        scores[t] = frame_scores(maps)[0]
    return scores


def parse_scorer(name, teacher_count):
    """
    Split a scorer name into (kind, teacher index).

    Raises:
        ConfigError: for unknown scorers or teacher indices out of range
    """
    if name in ("student", "ae"):
        return name, None
    if name.startswith("teacher:"):
        try:
            index = int(name.split(":", 1)[1])
        except ValueError as e:
            raise ConfigError(f"bad teacher index in {name!r}", key="eval.scorer") from e
        if not 1 <= index <= teacher_count:
            raise ConfigError(f"teacher {index} of {teacher_count}", key="eval.scorer")
        return "teacher", index - 1
    raise ConfigError(f"unknown scorer {name!r}", key="eval.scorer")


def score_clips(clips, score_fn):
    """
    Apply a per-clip scoring function to every clip.

    Args:
        clips (list): labeled clips
        score_fn (callable): clip -> (L,) scores

    Returns:
        list of ScoreSeries
    """
    series = []
    for clip in clips:
        series.append(ScoreSeries(clip.video_id, score_fn(clip), clip.labels))
        logger.debug(f"Scored {clip.video_id}: {len(clip)} frames")
    return series
