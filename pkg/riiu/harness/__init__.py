from .config import RunConfig, load_run_config
from .verify import VerifyConfig, SuiteResult, run_verification, format_report
from .experiments import *
