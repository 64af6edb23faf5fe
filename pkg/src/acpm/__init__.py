"""Artificial continuous prediction markets: agents with online learners trade
predictions of a real-valued target; the market maker aggregates and settles."""

__version__ = "0.1.0"

from .agents import Action, Agent, Strategy
from .data import Record, StreamSpec, load_csv, load_preset, synth_generate
from .harness import ExperimentSpec, RunReport, compare_paired, compute_mae, run_experiment
from .learners import make_learner
from .market import Bid, CapitalLedger, CutoffPolicy, MarketConfig, integrate, reward_multiplier, run_market

__all__ = [
    "Action", "Agent", "Bid", "CapitalLedger", "CutoffPolicy", "ExperimentSpec", "MarketConfig",
    "Record", "RunReport", "Strategy", "StreamSpec", "compare_paired", "compute_mae", "integrate",
    "load_csv", "load_preset", "make_learner", "reward_multiplier", "run_experiment", "run_market",
    "synth_generate",
]
