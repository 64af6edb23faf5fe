"""Standard experiment layouts and the statistical checks run on their reports."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .harness import ExperimentSpec, RunReport, action_popularity, compare_paired
from .learners import SHIPPED_LEARNERS

# with 100 correlated inputs the default step size of 0.01 is past the stability limit
SET2_PARAMS = {"sgd_linear": {"learning_rate": 0.005}}


def set1_spec(preset: str, strategy: str = "q_learning", seed: int = 0, learner: str = "sgd_linear",
              params: dict | None = None) -> ExperimentSpec:
    """One agent per stream, all sharing a learner and a strategy; 60% quantile cutoff."""
    return ExperimentSpec.from_dict({
        "name": f"set1-{preset}-{strategy}",
        "seed": seed,
        "dataset": {"preset": preset},
        "market": {"rounds": 2, "max_rpt": 0.9, "min_rpt": 0.001, "reward_p": 7.0, "reward_beta": 4.0,
                   "cutoff": "quantile:0.6"},
        "agents": [{"learner": learner, "params": params or {}, "streams": "each", "strategy": strategy}],
    })


def set2_spec(seed: int = 0, preset: str = "type4", learners: Sequence[str] = SHIPPED_LEARNERS,
              params: dict | None = None) -> ExperimentSpec:
    """One Q-learning agent per learner over every stream, maximum-error cutoff, with
    standalone baselines of the same learners."""
    params = SET2_PARAMS if params is None else params
    return ExperimentSpec.from_dict({
        "name": f"set2-{preset}",
        "seed": seed,
        "dataset": {"preset": preset},
        "market": {"rounds": 2, "max_rpt": 0.9, "min_rpt": 0.001, "reward_p": 7.0, "reward_beta": 4.0,
                   "cutoff": "max_error"},
        "agents": [{"learner": l, "params": params.get(l, {}), "streams": "all", "strategy": "q_learning"}
                   for l in learners],
        "baselines": [{"learner": l, "params": params.get(l, {})} for l in learners],
    })


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def check_h1(reports: Sequence[RunReport], tolerance: float = 1.02, min_strict: int = 7) -> CheckResult:
    """Mean system MAE over seeds within ``tolerance`` of the mean best-agent
    base-prediction MAE, and strictly below it in at least ``min_strict`` seeds."""
    system = np.array([r.system_mae()[0] for r in reports])
    best = np.array([r.agent_base_mae().min() for r in reports])
    ratios = system / best
    overall = float(system.mean() / best.mean())
    strict = int(np.sum(ratios < 1.0))
    passed = overall <= tolerance and strict >= min_strict
    detail = (f"mean ratio {overall:.4f}, worst seed {ratios.max():.4f}, "
              f"strictly lower in {strict}/{len(ratios)}")
    return CheckResult("H1", passed, detail, {"ratios": ratios.tolist(), "overall": overall, "strict": strict})


def check_h3(q_reports: Sequence[RunReport], c_reports: Sequence[RunReport], min_wins: int = 7) -> CheckResult:
    """Q-learning system MAE at most the constant-strategy MAE in at least ``min_wins`` seeds."""
    q = np.array([r.system_mae()[0] for r in q_reports])
    c = np.array([r.system_mae()[0] for r in c_reports])
    wins = int(np.sum(q <= c))
    return CheckResult("H3", wins >= min_wins, f"q <= constant in {wins}/{len(q)} seeds",
                       {"q": q.tolist(), "constant": c.tolist(), "wins": wins})


def check_h4_h5(reports: Sequence[RunReport], min_gap: float = 0.10) -> CheckResult:
    """Low-tier agents change more often than high-tier ones, and high-tier agents
    mostly preserve."""
    low, high, high_pres = [], [], []
    for r in reports:
        tiers = {a: t for a, t in zip(r.agent_ids, r.agent_tiers) if t is not None}
        pop = action_popularity(r, tiers)
        low.append(pop["low"][1])
        high.append(pop["high"][1])
        high_pres.append(pop["high"][0])
    gap = float(np.mean(low) - np.mean(high))
    plurality = float(np.mean(high_pres)) > float(np.mean(high))
    detail = (f"change(low) - change(high) = {gap:.4f}; high tier preserve {np.mean(high_pres):.4f} "
              f"vs change {np.mean(high):.4f}")
    return CheckResult("H4/H5", gap >= min_gap and plurality, detail,
                       {"gap": gap, "high_preserve": float(np.mean(high_pres)), "h4": gap >= min_gap,
                        "h5": plurality})


def check_h6(reports: Sequence[RunReport], tolerance: float = 1.02, min_wins: int = 7) -> CheckResult:
    """System MAE within ``tolerance`` of the best standalone baseline in ``min_wins`` seeds."""
    ratios = np.array([r.system_mae()[0] / r.baseline_mae().min() for r in reports])
    wins = int(np.sum(ratios <= tolerance))
    return CheckResult("H6", wins >= min_wins,
                       f"ratios {np.round(ratios, 4).tolist()}, within {tolerance} in {wins}/{len(ratios)}",
                       {"ratios": ratios.tolist(), "wins": wins})


def check_h7(reports: Sequence[RunReport], n_boot: int = 10_000, seed: int = 0,
             min_learners: int = 3) -> CheckResult:
    """Per learner, pool seeds and bootstrap the in-market agent's submitted errors
    against the same learner's standalone errors."""
    first = reports[0]
    improved, diffs = [], {}
    for k, learner in enumerate(first.baseline_ids):
        if learner not in first.agent_ids:
            continue
        j = first.agent_ids.index(learner)
        a = np.concatenate([np.abs(r.prediction[:, j] - r.truth) for r in reports])
        b = np.concatenate([np.abs(r.baseline_predictions[:, k] - r.truth) for r in reports])
        d, lo, hi = compare_paired(a, b, n_boot=n_boot, seed=seed)
        diffs[learner] = (d, lo, hi)
        if hi < 0.0:
            improved.append(learner)
    detail = ", ".join(f"{l} {d:+.4f} [{lo:+.4f}, {hi:+.4f}]" for l, (d, lo, hi) in diffs.items())
    return CheckResult("H7", len(improved) >= min_learners,
                       f"{len(improved)} learners improved: {detail}", {"improved": improved})
