"""
Utility modules for the DistilVAD toolkit.
"""
from distilvad.utils.env_utils import (
    load_environment,
    is_debug_mode,
    get_log_level,
    get_precision,
    get_num_workers,
    show_progress,
    get_run_dir
)

from distilvad.utils.log_utils import (
    setup_logging,
    get_logger
)

# Load environment variables when the utils package is imported
load_environment()
