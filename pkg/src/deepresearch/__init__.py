"""Controlled deep-research orchestration engine."""

__version__ = "0.1.0"

from .config import RankWeights, RunConfig
from .engine import ResearchRun, RunResult, StopSignal, replay_run, resume_run, run_episode

__all__ = [
    "RankWeights",
    "RunConfig",
    "ResearchRun",
    "RunResult",
    "StopSignal",
    "replay_run",
    "resume_run",
    "run_episode",
    "__version__",
]
