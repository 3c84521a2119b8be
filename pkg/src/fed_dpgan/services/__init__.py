"""Services for fed-dpgan."""

from .experiment import config_hash, parse_config, run_experiment, sweep
from .reports import compare_runs, load_report
from .update_store import UpdateStore

__all__ = [
    "UpdateStore",
    "compare_runs",
    "config_hash",
    "load_report",
    "parse_config",
    "run_experiment",
    "sweep",
]
