"""Discrete-event lab for an overloaded two-class loss network.

H jobs pay more than L jobs; the question is which L jobs to admit.  The
package provides a replayable sample path, the event engine, the offline
(PFI) and windowed (SSS) lookahead rules, trunk-reservation baselines with
exact birth-death oracles, and regenerative gap estimators.
"""
from .analytic import (
    best_threshold,
    fluid_reward,
    race_probability,
    sss_window,
    sufficient_window_constant,
    threshold_reward,
    threshold_rewards,
    transient_absorption,
)
from .engine import PolicyContractError, SystemState, TrajectoryStats, init, run, step
from .estimators import (
    GapEstimate,
    decomposition_report,
    detect_pfi_epochs,
    detect_sss_epochs,
    gap_estimate,
    idleness_ratio,
    regenerative_gap,
)
from .model import Decision, InvalidParams, JobClass, ModelParams, reference_params
from .policies import (
    PFI,
    SSS,
    AcceptAll,
    CompositeAE,
    CompositeRE,
    CouplingStats,
    Threshold,
    coupled_run,
    decide,
    parse_policy,
)
from .samplepath import SamplePath, StreamId, new_sample_path

__version__ = "0.1.0"

__all__ = [
    "AcceptAll", "CompositeAE", "CompositeRE", "CouplingStats", "Decision", "GapEstimate",
    "InvalidParams", "JobClass", "ModelParams", "PFI", "PolicyContractError", "SSS", "SamplePath",
    "StreamId", "SystemState", "Threshold", "TrajectoryStats", "best_threshold", "coupled_run",
    "decide", "decomposition_report", "detect_pfi_epochs", "detect_sss_epochs", "fluid_reward",
    "gap_estimate", "idleness_ratio", "init", "new_sample_path", "parse_policy", "race_probability",
    "reference_params", "regenerative_gap", "run", "sss_window", "step", "sufficient_window_constant",
    "threshold_reward", "threshold_rewards", "transient_absorption",
]
