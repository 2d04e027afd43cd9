"""
DistilVAD - Frame-level evaluation

Frame scores are the mean over heads of each anomaly map's maximum. ROC AUC
is the Mann-Whitney statistic on average ranks, so ties earn half credit.
Micro AUC pools every test frame; macro AUC averages per-video AUCs and
skips videos that contain a single class.
"""
import logging
import os
from io import StringIO
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from distilvad.exceptions import LabelFileError, ShapeError, UndefinedAUCError

# Configure logger
logger = logging.getLogger(__name__)


@dataclass
class ScoreSeries:
    """
    Attributes:
        video_id (str): source video
        scores (np.ndarray): one anomaly score per frame
        labels (np.ndarray): one {0, 1} label per frame
    """

    video_id: str
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1).astype(np.int64)
        if len(self.scores) != len(self.labels):
            raise ShapeError(f"{self.video_id}: {len(self.scores)} scores for {len(self.labels)} labels",
                             axis="frames")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError(f"{self.video_id}: labels must be 0 or 1")

    def __len__(self):
        return len(self.scores)

    @property
    def positives(self):
        return int(self.labels.sum())


@dataclass
class RocResult:
    """
    Attributes:
        auc (float): area under the ROC curve, in [0, 1]
        positives, negatives (int): class counts behind the value
        excluded (list): video ids left out (macro AUC only)
    """

    auc: float
    positives: int
    negatives: int
    excluded: list = field(default_factory=list)


def _map_max(m):
    data = getattr(m, "data", m)
    return np.asarray(data).reshape(np.asarray(data).shape[0], -1).max(axis=1)


def frame_score(maps):
    """
    Mean over heads of each map's maximum.

    Args:
        maps (list): the r maps of one frame (any shape)

    Returns:
        float
    """
    if len(maps) == 0:
        raise ValueError("frame_score needs at least one map")
    return float(np.mean([np.max(np.asarray(getattr(m, "data", m))) for m in maps]))


def frame_scores(maps):
    """Batched ``frame_score``: maps of shape (N, ...) give an (N,) score array."""
    if len(maps) == 0:
        raise ValueError("frame_scores needs at least one map")
    return np.mean(np.stack([_map_max(m) for m in maps]), axis=0)


def _auc(scores, labels):
    positives = int(labels.sum())
    negatives = int(len(labels) - positives)
    if positives == 0 or negatives == 0:
        raise UndefinedAUCError(
            f"AUC undefined with {positives} positive and {negatives} negative frames")
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    u = ranks[labels == 1].sum() - positives * (positives + 1) / 2.0
    return RocResult(float(u / (positives * negatives)), positives, negatives)


def roc_auc(series):
    """
    ROC AUC of one video.

    Raises:
        UndefinedAUCError: when the labels hold a single class
    """
    return _auc(series.scores, series.labels)


def micro_auc(all_series):
    """AUC over all frames of all videos concatenated."""
    if not all_series:
        raise UndefinedAUCError("no videos to evaluate")
    scores = np.concatenate([s.scores for s in all_series])
    labels = np.concatenate([s.labels for s in all_series])
    return _auc(scores, labels)


def macro_auc(all_series):
    """
    Mean of the per-video AUCs. Single-class videos are excluded and listed.

    Raises:
        UndefinedAUCError: when no video holds both classes
    """
    values, excluded = [], []
    positives = negatives = 0
    for series in all_series:
        try:
            result = roc_auc(series)
        except UndefinedAUCError:
            excluded.append(series.video_id)
            continue
        values.append(result.auc)
        positives += result.positives
        negatives += result.negatives
    if excluded:
        logger.warning(f"Excluded {len(excluded)} single-class videos from macro AUC: "
                       f"{', '.join(excluded)}")
    if not values:
        raise UndefinedAUCError("no video contains both normal and anomalous frames")
    return RocResult(float(np.mean(values)), positives, negatives, excluded)


# CSV interfaces

def write_labels(path, labels):
    """Write a ``frame_index,label`` CSV."""
    pd.DataFrame({"frame_index": np.arange(len(labels)), "label": np.asarray(labels, dtype=int)}) \
        .to_csv(path, index=False)


def read_labels(path):
    """Read a ``frame_index,label`` CSV into a label array ordered by frame index."""
    try:
        df = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        logger.error(f"Label file {path} is unreadable: {e}")
        raise LabelFileError(f"{path} is unreadable: {e}") from e
    missing = {"frame_index", "label"} - set(df.columns)
    if missing:
        logger.error(f"Label file {path} lacks columns {sorted(missing)}")
        raise LabelFileError(f"{path} lacks columns {sorted(missing)}")
    try:
        return df.sort_values("frame_index")["label"].to_numpy(dtype=np.uint8)
    except (TypeError, ValueError) as e:
        raise LabelFileError(f"{path} has non-integer labels") from e


def evaluation_report(all_series):
    """
    Per-video AUC table plus the micro/macro summary.

    Returns:
        tuple: (DataFrame with video_id, auc, frames, positives;
                micro RocResult; macro RocResult)
    """
    rows = []
    for series in all_series:
        try:
            auc = roc_auc(series).auc
        except UndefinedAUCError:
            auc = np.nan
        rows.append({"video_id": series.video_id, "auc": auc, "frames": len(series),
                     "positives": series.positives})
    table = pd.DataFrame(rows, columns=["video_id", "auc", "frames", "positives"])
    return table, micro_auc(all_series), macro_auc(all_series)


def write_report(path, all_series):
    """
    Write ``video_id,auc,frames,positives`` rows followed by ``micro,<v>`` and
    ``macro,<v>`` summary lines.

    Returns:
        tuple: (micro RocResult, macro RocResult)
    """
    table, micro, macro = evaluation_report(all_series)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    table.to_csv(path, index=False, float_format="%.6f")
    with open(path, "a") as f:
        f.write(f"micro,{micro.auc:.6f}\n")
        f.write(f"macro,{macro.auc:.6f}\n")
    logger.info(f"Wrote evaluation report to {path}: micro {micro.auc:.4f}, macro {macro.auc:.4f}")
    return micro, macro


def read_report(path):
    """
    Read a report written by ``write_report``.

    Returns:
        tuple: (per-video DataFrame, {"micro": float, "macro": float})
    """
    with open(path) as f:
        lines = f.read().strip().splitlines()
    summary = {}
    while lines and lines[-1].split(",")[0] in ("micro", "macro"):
        name, value = lines.pop().split(",")
        summary[name] = float(value)
    table = pd.read_csv(StringIO("\n".join(lines)))
    return table, summary


def score_frame_table(all_series):
    """Per-frame ``video_id,frame,score,label`` table for score-curve plots."""
    frames = [pd.DataFrame({"video_id": s.video_id, "frame": np.arange(len(s)), "score": s.scores,
                            "label": s.labels}) for s in all_series]
    if not frames:
        return pd.DataFrame(columns=["video_id", "frame", "score", "label"])
    return pd.concat(frames, ignore_index=True)


def write_frame_scores(path, all_series):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    score_frame_table(all_series).to_csv(path, index=False, float_format="%.6f")
