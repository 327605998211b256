from .config import Config, PlatoonConfig, load_config
from .report_utils import execute_with_validation, print_execution_summary, save_json

__all__ = [
    'Config',
    'PlatoonConfig',
    'load_config',
    'execute_with_validation',
    'print_execution_summary',
    'save_json',
]
