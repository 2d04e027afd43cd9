#!/usr/bin/env python3
"""
DistilVAD Dashboard Runner
This script launches the results dashboard for a run directory.
"""
import argparse
import os
import subprocess
import sys

# Add the current directory to the path so we can import distilvad modules
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from distilvad.utils import setup_logging

# Set up logging
logger = setup_logging()

DEFAULT_ENV = """# DistilVAD Environment Configuration
LOG_LEVEL=INFO
DEBUG=False
DISTILVAD_PRECISION=float32
DISTILVAD_PROGRESS=true
DISTILVAD_RUN_DIR=runs/default
"""


def check_dependencies():
    """Check if the dashboard dependencies are installed."""
    try:
        import numpy
        import pandas
        import plotly
        import streamlit
        logger.info("All dashboard dependencies are installed.")
        return True
    except ImportError as e:
        logger.error(f"Missing dependency: {e}")
        logger.info("Please run: pip install -r requirements.txt")
        return False


def check_environment():
    """Create a default .env file if one doesn't exist."""
    env_file = os.path.join(os.path.dirname(os.path.abspath(__file__)), ".env")
    if not os.path.exists(env_file):
        logger.warning(".env file not found. Creating a default .env file.")
        with open(env_file, "w") as f:
            f.write(DEFAULT_ENV)
        logger.info(f"Created default .env file at: {env_file}")
    return True


def run_app(run_dir, port=8501, debug=False):
    """Run the Streamlit dashboard on ``run_dir``."""
    app_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "app.py")
    cmd = ["streamlit", "run", app_path, "--server.port", str(port)]
    if debug:
        cmd.append("--logger.level=debug")

    env = dict(os.environ, DISTILVAD_RUN_DIR=run_dir)
    logger.info(f"Starting DistilVAD dashboard on port {port} for {run_dir}")
    logger.info(f"Command: {' '.join(cmd)}")
    try:
        subprocess.run(cmd, env=env)
    except KeyboardInterrupt:
        logger.info("Dashboard stopped by user.")
    except Exception as e:
        logger.error(f"Error running Streamlit dashboard: {e}")
        sys.exit(1)


def main():
    """Main function to run the dashboard."""
    parser = argparse.ArgumentParser(description="Run the DistilVAD results dashboard")
    parser.add_argument("--run-dir", default=os.getenv("DISTILVAD_RUN_DIR", os.path.join("runs", "default")),
                        help="Run directory to display")
    parser.add_argument("--port", type=int, default=8501, help="Port to run the dashboard on")
    parser.add_argument("--debug", action="store_true", help="Run in debug mode")
    args = parser.parse_args()

    if not check_dependencies():
        sys.exit(1)
    check_environment()
    if not os.path.isdir(args.run_dir):
        logger.warning(f"Run directory {args.run_dir} does not exist yet.")
    run_app(args.run_dir, port=args.port, debug=args.debug)


if __name__ == "__main__":
    main()
