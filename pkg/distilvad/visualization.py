"""
DistilVAD - Visualization
Plotly figure builders for the results dashboard
"""
import logging
import os

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from distilvad.metrics import read_report

# Configure logger
logger = logging.getLogger(__name__)

PRIMARY = "#1E88E5"
ACCENT = "#FFA000"
GOOD = "#4CAF50"
ANOMALY = "#E53935"

RUN_FILES = {
    "losses": "losses.csv",
    "report": "eval_report.csv",
    "frame_scores": "frame_scores.csv",
    "bench": "bench.csv",
    "ablation": "ablation.csv",
}


def _legend():
    return dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1)


def load_run_reports(run_dir):
    """
    Read every CSV report present in a run directory.

    Returns:
        dict: name -> DataFrame, plus "summary" -> {"micro", "macro"} when
            the evaluation report exists; absent reports are left out
    """
    reports = {}
    for name, filename in RUN_FILES.items():
        path = os.path.join(run_dir, filename)
        if not os.path.exists(path):
            continue
        try:
            if name == "report":
                reports["report"], reports["summary"] = read_report(path)
            else:
                reports[name] = pd.read_csv(path)
        except (OSError, ValueError, pd.errors.ParserError) as e:
            logger.error(f"Could not read {path}: {e}")
    logger.debug(f"Loaded {sorted(reports)} from {run_dir}")
    return reports


def create_loss_chart(losses, phase, smooth=0):
    """Loss terms of one phase against the batch counter."""
    df = losses[losses["phase"] == phase].reset_index(drop=True)
    columns = ["l_ae"] if phase == "pretrain" else ["l_kd", "l_akd", "l_total", "d1_loss", "d2_loss"]
    colors = [PRIMARY, ACCENT, GOOD, "#8E24AA", "#6D4C41"]
    fig = go.Figure()
    for column, color in zip(columns, colors):
        if column not in df or df[column].isna().all():
            continue
        values = df[column].rolling(window=smooth, min_periods=1).mean() if smooth > 1 else df[column]
        fig.add_trace(go.Scatter(x=df.index, y=values, mode="lines", name=column,
                                 line=dict(color=color, width=2)))
    fig.update_layout(
        title=f"{phase.capitalize()} losses",
        xaxis_title="Batch",
        yaxis_title="Loss",
        hovermode="x unified",
        template="plotly_white",
        legend=_legend(),
    )
    return fig


def create_score_curve(frame_scores, video_id):
    """
    Per-frame anomaly score of one test video with the anomalous frames shaded.
    """
    df = frame_scores[frame_scores["video_id"] == video_id].sort_values("frame")
    fig = go.Figure()
    top = float(df["score"].max()) if len(df) else 1.0
    fig.add_trace(go.Bar(x=df["frame"], y=df["label"] * top, name="Ground truth",
                         marker=dict(color=ANOMALY), opacity=0.2))
    fig.add_trace(go.Scatter(x=df["frame"], y=df["score"], mode="lines", name="Anomaly score",
                             line=dict(color=PRIMARY, width=3)))
    fig.update_layout(
        title=f"{video_id} - frame scores",
        xaxis_title="Frame",
        yaxis_title="Score",
        bargap=0,
        hovermode="x unified",
        template="plotly_white",
        legend=_legend(),
    )
    return fig


def create_auc_chart(report, summary=None):
    """Per-video AUC bars with the micro and macro values as reference lines."""
    df = report.dropna(subset=["auc"])
    fig = px.bar(df, x="video_id", y="auc", labels={"video_id": "Video", "auc": "AUC"},
                 title="Per-video AUC", color_discrete_sequence=[PRIMARY])
    for name, color in (("micro", ACCENT), ("macro", GOOD)):
        if summary and name in summary:
            fig.add_hline(y=summary[name], line_dash="dash", line_color=color,
                          annotation_text=f"{name} {summary[name]:.3f}")
    fig.update_layout(template="plotly_white", yaxis_range=[0, 1.05])
    return fig


def create_fps_chart(bench):
    """Model and end-to-end FPS of each benchmark variant."""
    melted = pd.melt(bench, id_vars=["variant"], value_vars=["fps", "e2e_fps"])
    fig = px.bar(melted, x="variant", y="value", color="variable", barmode="group",
                 labels={"value": "Frames per second", "variable": "Measure", "variant": "Variant"},
                 title="Throughput", color_discrete_sequence=[PRIMARY, ACCENT])
    fig.update_layout(template="plotly_white")
    return fig


def create_stage_chart(bench):
    """Stacked per-frame latency of the downsampling, transformer and head stages."""
    stages = [c for c in ("downsample_ms", "transformer_ms", "heads_ms") if c in bench]
    melted = pd.melt(bench, id_vars=["variant"], value_vars=stages)
    fig = px.bar(melted, x="variant", y="value", color="variable",
                 labels={"value": "ms per frame", "variable": "Stage", "variant": "Variant"},
                 title="Latency by stage", color_discrete_sequence=px.colors.qualitative.Bold)
    fig.update_layout(template="plotly_white", barmode="stack")
    return fig


def create_ablation_chart(ablation, axis):
    """Micro and macro AUC of every case along one ablation axis."""
    df = ablation[ablation["axis"] == axis]
    melted = pd.melt(df, id_vars=["config"], value_vars=["micro_auc", "macro_auc"])
    fig = px.bar(melted, x="config", y="value", color="variable", barmode="group",
                 labels={"value": "AUC", "variable": "Metric", "config": axis},
                 title=f"Ablation: {axis}", color_discrete_sequence=[PRIMARY, GOOD])
    fig.update_layout(template="plotly_white", yaxis_range=[0, 1.05])
    return fig
