"""
DistilVAD - Benchmark & Ablation
Throughput of the student variants and AUC along each ablation axis
"""
import os
import sys

import streamlit as st

# Add the parent directory to the Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from distilvad.utils import get_logger, get_run_dir
from distilvad.utils.style import apply_dashboard_style
from distilvad.visualization import (
    create_ablation_chart,
    create_fps_chart,
    create_stage_chart,
    load_run_reports,
)

module_logger = get_logger("bench_ablation")

st.set_page_config(page_title="DistilVAD - Benchmark & Ablation", page_icon="🎥", layout="wide")
apply_dashboard_style()


def main():
    st.markdown('<div class="page-title">Benchmark & Ablation</div>', unsafe_allow_html=True)
    run_dir = st.session_state.get("run_dir", get_run_dir())
    reports = load_run_reports(run_dir)

    st.markdown('<div class="section-title">Throughput</div>', unsafe_allow_html=True)
    bench = reports.get("bench")
    if bench is None or bench.empty:
        st.info(f"No bench.csv in {run_dir}. Run `python -m distilvad bench`.")
    else:
        col1, col2 = st.columns(2)
        with col1:
            st.plotly_chart(create_fps_chart(bench), use_container_width=True)
        with col2:
            st.plotly_chart(create_stage_chart(bench), use_container_width=True)
        st.dataframe(bench, use_container_width=True)

    st.markdown('<div class="section-title">Ablation</div>', unsafe_allow_html=True)
    ablation = reports.get("ablation")
    if ablation is None or ablation.empty:
        st.info(f"No ablation.csv in {run_dir}. Run `python -m distilvad ablate`.")
    else:
        axis = st.selectbox("Axis", list(dict.fromkeys(ablation["axis"])))
        st.plotly_chart(create_ablation_chart(ablation, axis), use_container_width=True)
        st.dataframe(ablation[ablation["axis"] == axis], use_container_width=True)
    module_logger.info(f"Viewed benchmark and ablation results of {run_dir}")


if __name__ == "__main__":
    main()
