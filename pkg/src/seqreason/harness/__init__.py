"""Experiment orchestration: suites, ablations, sessions, and reports."""
from .profiles import PROFILES, ExperimentProfile, Scale, derive_seed, load_profile, make_profile
from .runner import ConditionRun, ProblemRow, SuiteResult, run_condition, run_suite
from .sessions import CrystallizationResult, Schedule, ScheduleResult, run_crystallization, run_schedule

__all__ = [
    "PROFILES",
    "ConditionRun",
    "CrystallizationResult",
    "ExperimentProfile",
    "ProblemRow",
    "Scale",
    "Schedule",
    "ScheduleResult",
    "SuiteResult",
    "derive_seed",
    "load_profile",
    "make_profile",
    "run_condition",
    "run_crystallization",
    "run_schedule",
    "run_suite",
]
