"""
DistilVAD - Style Utilities
Shared CSS for the dashboard pages
"""


def get_dashboard_css():
    """Return the CSS shared by every dashboard page"""
    return """
<style>
    :root {
        --primary-color: #1E88E5 !important;
        --font: "Source Sans Pro", sans-serif !important;
    }
    .page-title {
        font-size: 2rem;
        font-weight: bold;
        color: #1E88E5;
        margin-bottom: 1rem;
    }
    .section-title {
        font-size: 1.5rem;
        font-weight: bold;
        color: #424242;
        margin-top: 1rem;
        margin-bottom: 0.5rem;
    }
    .metric-card {
        text-align: center;
        padding: 1rem;
        border-radius: 5px;
        background-color: #f5f5f5;
        box-shadow: 0 2px 4px rgba(0, 0, 0, 0.05);
    }
    .metric-value {
        font-size: 1.8rem;
        font-weight: bold;
        color: #1E88E5;
    }
    .metric-label {
        font-size: 0.9rem;
        color: #616161;
    }
    .js-plotly-plot, .plotly .main-svg {
        background-color: white !important;
    }
    .footer {
        text-align: center;
        padding: 20px;
        font-size: 0.8rem;
        color: #9e9e9e;
    }
</style>
"""


def metric_card(label, value):
    """HTML for one headline number"""
    return (f'<div class="metric-card"><div class="metric-value">{value}</div>'
            f'<div class="metric-label">{label}</div></div>')


def apply_dashboard_style():
    """Apply the shared CSS to the current Streamlit page"""
    import streamlit as st
    st.markdown(get_dashboard_css(), unsafe_allow_html=True)
