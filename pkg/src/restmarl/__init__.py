"""Multi-agent reinforcement learning for black-box REST API testing."""
from .report import CoverageSummary, FailureRecord
from .session import Session, SessionConfig, run_ablation, run_repeated, run_session

__all__ = [
    "CoverageSummary",
    "FailureRecord",
    "Session",
    "SessionConfig",
    "run_ablation",
    "run_repeated",
    "run_session",
]
__version__ = "0.1.0"
