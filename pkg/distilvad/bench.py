"""
DistilVAD - Throughput benchmark

Measures eval-mode forward throughput of student variants on the CPU. Every
repetition runs ``measured_frames`` sequences after an untimed warm-up; the
reported numbers are medians over repetitions. Model FPS counts forward time
only, end-to-end FPS adds uint8 to float conversion and sequence assembly.
"""
import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from distilvad.models import build_student
from distilvad.tensor import no_grad
from distilvad.training import assemble_sequence

# Configure logger
logger = logging.getLogger(__name__)

STAGES = ("downsample", "transformer", "heads")
BENCH_COLUMNS = ["variant", "ffn_kind", "blocks", "attn_heads", "batch_size", "replicas", "frames",
                 "wall_time", "fps", "e2e_fps", "downsample_ms", "transformer_ms", "heads_ms"]

BENCH_CLIP_LENGTH = 32


@dataclass
class BenchReport:
    """
    Attributes:
        variant (str): ``<ffn_kind>-m<blocks>-s<attn_heads>``
        frames (int): frames processed per repetition over all replicas
        wall_time (float): median seconds spent in forward passes
        fps (float): frames / wall_time
        e2e_fps (float): frames per second including preprocessing
        stage_ms (dict): median per-frame milliseconds of each stage
    """

    variant: str
    ffn_kind: str
    blocks: int
    attn_heads: int
    batch_size: int
    replicas: int
    frames: int
    wall_time: float
    fps: float
    e2e_fps: float
    stage_ms: dict

    def to_row(self):
        row = {k: getattr(self, k) for k in BENCH_COLUMNS if hasattr(self, k)}
        for stage in STAGES:
            row[f"{stage}_ms"] = self.stage_ms.get(stage, float("nan"))
        return row


def variant_name(cfg):
    return f"{cfg.ffn_kind}-m{cfg.blocks}-s{cfg.attn_heads}"


def variant_config(base, overrides):
    """A copy of ``base`` with ModelConfig field overrides applied."""
    return dataclasses.replace(base, **overrides).validate()


def bench_clip(cfg, seed=0):
    """Random uint8 frames shaped like the model's input frames."""
    rng = np.random.default_rng(seed)
    shape = (BENCH_CLIP_LENGTH, *cfg.input_resolution)
    if cfg.frame_channels > 1:
        shape = (BENCH_CLIP_LENGTH, cfg.frame_channels, *cfg.input_resolution)
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


def _stream_pass(model, frames, count, batch_size, stride, offset):
    """Run ``count`` sequences; returns (preprocess seconds, forward seconds, stage seconds)."""
    timings = {}
    prep = forward = 0.0
    done = 0
    with no_grad():
        while done < count:
            size = min(batch_size, count - done)
            start = time.perf_counter()
            batch = np.stack([assemble_sequence(frames, (offset + done + i) % len(frames), stride,
                                                model.cfg.input_frames, clamp=True) for i in range(size)])
            mid = time.perf_counter()
            model(batch, timings=timings)
            end = time.perf_counter()
            prep += mid - start
            forward += end - mid
            done += size
    return prep, forward, timings


def measure(model, frames, count, batch_size=1, replicas=1, stride=3):
    """
    One timed repetition: ``replicas`` workers each push ``count`` sequences
    through the shared frozen model.

    Returns:
        tuple: (wall seconds of forward work, wall seconds end to end, stage seconds)
    """
    if replicas == 1:
        prep, forward, timings = _stream_pass(model, frames, count, batch_size, stride, 0)
        return forward, prep + forward, timings
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=replicas) as pool:
        results = list(pool.map(lambda r: _stream_pass(model, frames, count, batch_size, stride,
                                                       r * 7), range(replicas)))
    wall = time.perf_counter() - start
    prep = sum(r[0] for r in results)
    forward = sum(r[1] for r in results)
    timings = {}
    for _, _, t in results:
        for stage, seconds in t.items():
            timings[stage] = timings.get(stage, 0.0) + seconds
    # forward share of the parallel wall time
    share = forward / (prep + forward) if prep + forward > 0 else 1.0
    return wall * share, wall, {k: v / replicas for k, v in timings.items()}


def run_benchmark(model, bench_cfg, stride=3, seed=0):
    """
    Benchmark one model.

    Args:
        model (StudentModel): switched to eval mode, never modified
        bench_cfg (BenchConfig): frame counts, repetitions, batch size, replicas

    Returns:
        BenchReport
    """
    model.eval()
    cfg = model.cfg
    frames = bench_clip(cfg, seed)
    if bench_cfg.warmup_frames:
        _stream_pass(model, frames, bench_cfg.warmup_frames, bench_cfg.batch_size, stride, 0)

    walls, ends, stages = [], [], {s: [] for s in STAGES}
    for rep in range(bench_cfg.repetitions):
        wall, end_to_end, timings = measure(model, frames, bench_cfg.measured_frames,
                                            bench_cfg.batch_size, bench_cfg.replicas, stride)
        walls.append(wall)
        ends.append(end_to_end)
        for stage in STAGES:
            stages[stage].append(1000.0 * timings.get(stage, 0.0) / bench_cfg.measured_frames)
        logger.debug(f"{variant_name(cfg)} repetition {rep}: {wall:.3f}s forward, {end_to_end:.3f}s total")

    total_frames = bench_cfg.measured_frames * bench_cfg.replicas
    wall = float(np.median(walls))
    end_to_end = float(np.median(ends))
    report = BenchReport(
        variant=variant_name(cfg), ffn_kind=cfg.ffn_kind, blocks=cfg.blocks, attn_heads=cfg.attn_heads,
        batch_size=bench_cfg.batch_size, replicas=bench_cfg.replicas, frames=total_frames,
        wall_time=wall, fps=total_frames / wall, e2e_fps=total_frames / end_to_end,
        stage_ms={s: float(np.median(v)) for s, v in stages.items()},
    )
    logger.info(f"Benchmark {report.variant}: {report.fps:.1f} FPS model, {report.e2e_fps:.1f} FPS end to end")
    return report


def bench_variants(base_cfg, bench_cfg, seed=0, stride=3, state=None):
    """
    Benchmark every configured variant of ``base_cfg``.

    Args:
        state (dict, optional): trained student weights, loaded into every
            variant whose architecture matches them

    Returns:
        list of BenchReport
    """
    reports = []
    for overrides in bench_cfg.variants:
        cfg = variant_config(base_cfg, overrides)
        model = build_student(cfg, seed)
        if state is not None and cfg == base_cfg:
            model.load_state_dict(state)
            logger.info(f"Benchmarking {variant_name(cfg)} with trained weights")
        reports.append(run_benchmark(model, bench_cfg, stride=stride, seed=seed))
    return reports


def bench_frame(reports):
    rows = [r.to_row() for r in reports]
    if not rows:
        return pd.DataFrame(columns=BENCH_COLUMNS)
    return pd.DataFrame(rows)[BENCH_COLUMNS]


def write_bench_csv(path, reports):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    bench_frame(reports).to_csv(path, index=False, float_format="%.6f")
    logger.info(f"Wrote {len(reports)} benchmark rows to {path}")
