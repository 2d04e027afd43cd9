"""
DistilVAD - Results Dashboard
Main application file - Home page
"""
import os
import sys

import streamlit as st

# Add the project directory to the Python path if running the file directly
if __name__ == "__main__":
    sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from distilvad.utils import get_logger, get_run_dir, setup_logging
from distilvad.utils.style import apply_dashboard_style, metric_card
from distilvad.visualization import create_auc_chart, load_run_reports

# Set up logging
logger = setup_logging()
module_logger = get_logger("app")

st.set_page_config(
    page_title="DistilVAD - Results",
    page_icon="🎥",
    layout="wide",
    initial_sidebar_state="expanded"
)

apply_dashboard_style()


def select_run():
    """Sidebar run directory picker, shared through the session state"""
    default = st.session_state.get("run_dir", get_run_dir())
    run_dir = st.sidebar.text_input("Run directory", value=default)
    st.session_state["run_dir"] = run_dir
    if not os.path.isdir(run_dir):
        st.sidebar.error(f"{run_dir} does not exist")
    return run_dir


def main():
    st.markdown('<div class="page-title">🎥 DistilVAD</div>', unsafe_allow_html=True)
    st.markdown("Frame-level anomaly detection with a compact student distilled from frozen teachers. "
                "Pick a run directory in the sidebar; the pages read its CSV reports.")

    run_dir = select_run()
    reports = load_run_reports(run_dir)
    if not reports:
        st.warning("No reports found. Run `python -m distilvad gen|pretrain|distill|eval --out "
                   f"{run_dir}` first.")
        return

    summary = reports.get("summary", {})
    bench = reports.get("bench")
    losses = reports.get("losses")
    cards = [
        ("Micro AUC", f"{summary['micro']:.3f}" if "micro" in summary else "-"),
        ("Macro AUC", f"{summary['macro']:.3f}" if "macro" in summary else "-"),
        ("Best FPS", f"{bench['fps'].max():.0f}" if bench is not None and len(bench) else "-"),
        ("Training batches", f"{len(losses)}" if losses is not None else "-"),
    ]
    for col, (label, value) in zip(st.columns(4), cards):
        with col:
            st.markdown(metric_card(label, value), unsafe_allow_html=True)

    if "report" in reports:
        st.markdown('<div class="section-title">Evaluation</div>', unsafe_allow_html=True)
        st.plotly_chart(create_auc_chart(reports["report"], summary), use_container_width=True)
        st.dataframe(reports["report"], use_container_width=True)

    st.markdown("<div class='footer'>DistilVAD</div>", unsafe_allow_html=True)
    module_logger.info(f"Viewed home page for {run_dir}")


if __name__ == "__main__":
    main()
