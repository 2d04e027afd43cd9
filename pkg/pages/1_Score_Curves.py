"""
DistilVAD - Score Curves
Per-frame anomaly scores of every test video against the ground truth
"""
import os
import sys

import streamlit as st

# Add the parent directory to the Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from distilvad.utils import get_logger, get_run_dir
from distilvad.utils.style import apply_dashboard_style
from distilvad.visualization import create_score_curve, load_run_reports

module_logger = get_logger("score_curves")

st.set_page_config(page_title="DistilVAD - Score Curves", page_icon="🎥", layout="wide")
apply_dashboard_style()


def main():
    st.markdown('<div class="page-title">Score Curves</div>', unsafe_allow_html=True)
    run_dir = st.session_state.get("run_dir", get_run_dir())
    reports = load_run_reports(run_dir)
    scores = reports.get("frame_scores")
    if scores is None or scores.empty:
        st.warning(f"No frame_scores.csv in {run_dir}. Run the eval stage first.")
        return

    videos = sorted(scores["video_id"].unique())
    anomalous_only = st.sidebar.checkbox("Only videos with anomalies", value=True)
    if anomalous_only:
        positive = scores.groupby("video_id")["label"].max()
        videos = [v for v in videos if positive.get(v, 0) > 0] or videos
    video_id = st.sidebar.selectbox("Test video", videos)

    st.plotly_chart(create_score_curve(scores, video_id), use_container_width=True)
    report = reports.get("report")
    if report is not None:
        row = report[report["video_id"] == video_id]
        if not row.empty and row["auc"].notna().all():
            st.metric("Video AUC", f"{row['auc'].iloc[0]:.3f}")
    module_logger.info(f"Viewed score curve of {video_id}")


if __name__ == "__main__":
    main()
