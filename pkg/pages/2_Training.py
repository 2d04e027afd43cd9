"""
DistilVAD - Training
Loss curves of the pre-training and distillation phases
"""
import os
import sys

import streamlit as st

# Add the parent directory to the Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from distilvad.utils import get_logger, get_run_dir
from distilvad.utils.style import apply_dashboard_style
from distilvad.visualization import create_loss_chart, load_run_reports

module_logger = get_logger("training")

st.set_page_config(page_title="DistilVAD - Training", page_icon="🎥", layout="wide")
apply_dashboard_style()


def main():
    st.markdown('<div class="page-title">Training</div>', unsafe_allow_html=True)
    run_dir = st.session_state.get("run_dir", get_run_dir())
    losses = load_run_reports(run_dir).get("losses")
    if losses is None or losses.empty:
        st.warning(f"No losses.csv in {run_dir}. Run the pretrain or distill stage first.")
        return

    smooth = st.sidebar.slider("Smoothing window (batches)", min_value=1, max_value=50, value=10)
    phases = [p for p in ("pretrain", "distill") if (losses["phase"] == p).any()]
    for tab, phase in zip(st.tabs([p.capitalize() for p in phases]), phases):
        with tab:
            st.plotly_chart(create_loss_chart(losses, phase, smooth=smooth), use_container_width=True)
            per_epoch = losses[losses["phase"] == phase].groupby("epoch").mean(numeric_only=True)
            st.dataframe(per_epoch.drop(columns=["batch"]), use_container_width=True)
    module_logger.info(f"Viewed training curves of {run_dir}")


if __name__ == "__main__":
    main()
