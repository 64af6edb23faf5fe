"""Market maker: bid integration, reward function, cutoff selection and settlement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

logger = logging.getLogger(__name__)

CUTOFF_EPS = 1e-9
INITIAL_CAPITAL = 100.0


class NoParticipantsError(ValueError):
    pass


@dataclass(frozen=True)
class CutoffPolicy:
    """How the reward cutoff ``C`` is chosen for each market.

    ``kind`` is ``"quantile"`` (with ``q`` in (0, 1]) or ``"max_error"``.
    """

    kind: str
    q: Optional[float] = None

    def __post_init__(self):
        if self.kind == "quantile":
            if self.q is None or not 0.0 < self.q <= 1.0:
                raise ValueError(f"quantile cutoff needs q in (0, 1], got {self.q!r}")
        elif self.kind == "max_error":
            if self.q is not None:
                raise ValueError("max_error cutoff takes no q")
        else:
            raise ValueError(f"unknown cutoff policy {self.kind!r}")

    @classmethod
    def quantile(cls, q: float) -> "CutoffPolicy":
        return cls("quantile", float(q))

    @classmethod
    def max_error(cls) -> "CutoffPolicy":
        return cls("max_error")

    @classmethod
    def parse(cls, text: str) -> "CutoffPolicy":
        """Parse ``"max_error"`` or ``"quantile:0.6"``."""
        if text == "max_error":
            return cls.max_error()
        kind, _, value = text.partition(":")
        if kind != "quantile" or not value:
            raise ValueError(f"cannot parse cutoff policy {text!r}")
        return cls.quantile(float(value))

    def __str__(self) -> str:
        return "max_error" if self.kind == "max_error" else f"quantile:{self.q:g}"


@dataclass(frozen=True)
class MarketConfig:
    rounds: int = 2
    max_rpt: float = 0.9
    min_rpt: float = 0.001
    reward_p: float = 7.0
    reward_beta: float = 4.0
    cutoff_policy: CutoffPolicy = field(default_factory=lambda: CutoffPolicy.quantile(0.6))

    def __post_init__(self):
        problems = []
        if not isinstance(self.rounds, int) or self.rounds < 1:
            problems.append(f"rounds must be a positive integer, got {self.rounds!r}")
        if not 0.0 < self.min_rpt <= self.max_rpt <= 1.0:
            problems.append(
                f"need 0 < min_rpt <= max_rpt <= 1, got min_rpt={self.min_rpt}, max_rpt={self.max_rpt}"
            )
        if not self.reward_p > 0:
            problems.append(f"reward_p must be positive, got {self.reward_p}")
        if not self.reward_beta > 0:
            problems.append(f"reward_beta must be positive, got {self.reward_beta}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True, slots=True)
class Bid:
    agent_id: str
    prediction: float
    stake: float

    def __post_init__(self):
        if not math.isfinite(self.prediction):
            raise ValueError(f"bid from {self.agent_id} has non-finite prediction {self.prediction}")
        if not self.stake >= 0.0:
            raise ValueError(f"bid from {self.agent_id} has negative stake {self.stake}")


@dataclass(frozen=True)
class RoundOutcome:
    round_index: int
    bids: tuple
    market_prediction: float


@dataclass(frozen=True, slots=True)
class Settlement:
    """One agent's line in a settled market."""

    agent_id: str
    bid: Bid
    error: float
    reward_multiplier: float
    revenue: float
    net_revenue: float


@dataclass(frozen=True)
class MarketOutcome:
    record_id: int
    final_prediction: float
    true_value: float
    cutoff_c: float
    reward_p: float
    reward_beta: float
    rounds: tuple
    per_agent: tuple

    def settlement_for(self, agent_id: str) -> Optional[Settlement]:
        for s in self.per_agent:
            if s.agent_id == agent_id:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "final_prediction": self.final_prediction,
            "true_value": self.true_value,
            "cutoff_c": self.cutoff_c,
            "rounds": [
                {
                    "round_index": r.round_index,
                    "market_prediction": r.market_prediction,
                    "bids": [[b.agent_id, b.prediction, b.stake] for b in r.bids],
                }
                for r in self.rounds
            ],
            "per_agent": [
                {
                    "agent_id": s.agent_id,
                    "prediction": s.bid.prediction,
                    "stake": s.bid.stake,
                    "error": s.error,
                    "reward_multiplier": s.reward_multiplier,
                    "revenue": s.revenue,
                    "net_revenue": s.net_revenue,
                }
                for s in self.per_agent
            ],
        }


class CapitalLedger:
    """Capital per agent. Settlement goes through :meth:`apply_net`."""

    def __init__(self, agent_ids: Iterable[str] = (), initial_capital: float = INITIAL_CAPITAL):
        if initial_capital < 0:
            raise ValueError("initial capital must be nonnegative")
        self.initial_capital = float(initial_capital)
        self._capital = {a: self.initial_capital for a in agent_ids}

    def __getitem__(self, agent_id: str) -> float:
        return self._capital[agent_id]

    def __contains__(self, agent_id: str) -> bool:
        return agent_id in self._capital

    def __len__(self) -> int:
        return len(self._capital)

    def add_agent(self, agent_id: str, capital: Optional[float] = None) -> None:
        if agent_id in self._capital:
            raise ValueError(f"agent {agent_id!r} already in ledger")
        self._capital[agent_id] = self.initial_capital if capital is None else float(capital)

    def apply_net(self, agent_id: str, net: float) -> float:
        new = self._capital[agent_id] + net
        if new < 0.0:
            raise ValueError(f"settlement would make capital of {agent_id!r} negative ({new})")
        self._capital[agent_id] = new
        return new

    def as_dict(self) -> dict:
        return dict(self._capital)


class AgentHandle(Protocol):
    agent_id: str

    def bid(self, features, round_index: int, prev_market_prediction: Optional[float],
            capital: float) -> Optional[Bid]:
        ...

    def notify(self, true_value: float, outcome: MarketOutcome) -> None:
        ...


def integrate(bids: Sequence[Bid]) -> float:
    """Stake-weighted mean of bid predictions.

    Falls back to the plain mean of predictions when no stake was put up.
    """
    if not bids:
        raise NoParticipantsError("no participants")
    total = 0.0
    for b in bids:
        total += b.stake
    if total > 0.0:
        # normalized weights keep a lone bid exact (weight 1.0)
        out = 0.0
        for b in bids:
            out += b.prediction * (b.stake / total)
        return out
    return math.fsum(b.prediction for b in bids) / len(bids)


def reward_multiplier(error: float, c: float, p: float, beta: float) -> float:
    """Revenue per unit staked for a given absolute error.

    ``beta`` at zero error, decreasing to exactly zero at the cutoff ``c``
    and flat zero beyond it. ``p`` sets the curvature.
    """
    if not (c > 0 and p > 0 and beta > 0):
        raise ValueError(f"reward parameters must be positive, got c={c}, p={p}, beta={beta}")
    if error < 0:
        raise ValueError(f"error must be nonnegative, got {error}")
    if error >= c:
        return 0.0
    # beta * (-1/c**p) * error**p + beta, with the ratio taken first so tiny c cannot underflow
    value = beta - beta * (error / c) ** p
    return value if value > 0.0 else 0.0


def select_cutoff(errors: Sequence[float], policy: CutoffPolicy) -> float:
    if not len(errors):
        raise NoParticipantsError("no participants")
    if policy.kind == "max_error":
        c = max(errors)
    else:
        s = sorted(errors)
        n = len(s)
        # guard against q*n landing a hair above an integer
        k = max(1, math.ceil(policy.q * n - 1e-9))
        c = s[-1]
        if k < n:
            floor = s[k - 1]
            for e in s[k:]:
                if e > floor:
                    c = e
                    break
    return c if c > 0.0 else CUTOFF_EPS


def collect_bids(agents: Sequence[AgentHandle], features, round_index: int,
                 prev_market: Optional[float], ledger: CapitalLedger,
                 abstained: set) -> list:
    bids = []
    for agent in agents:
        if agent.agent_id in abstained:
            continue
        try:
            b = agent.bid(features, round_index, prev_market, ledger[agent.agent_id])
        except Exception:
            logger.warning("agent %s failed to bid; abstaining", agent.agent_id, exc_info=True)
            b = None
        if b is None:
            abstained.add(agent.agent_id)
            continue
        if b.stake > ledger[agent.agent_id]:
            raise ValueError(f"agent {agent.agent_id!r} staked more than its capital")
        bids.append(b)
    return bids


def run_rounds(features, agents: Sequence[AgentHandle], config: MarketConfig,
               ledger: CapitalLedger) -> tuple:
    """Run every bidding round and return ``(rounds, sealed_bids)``.

    Nothing is settled here; only the last round's bids are binding.
    """
    abstained: set = set()
    rounds = []
    prev_market = None
    bids: list = []
    for r in range(1, config.rounds + 1):
        bids = collect_bids(agents, features, r, prev_market, ledger, abstained)
        prev_market = integrate(bids)
        rounds.append(RoundOutcome(r, tuple(bids), prev_market))
    return tuple(rounds), bids


def settle(record_id, sealed: Sequence[Bid], true_value: float, config: MarketConfig,
           ledger: CapitalLedger) -> tuple:
    """Compute errors, cutoff and rewards for the sealed bids and update the ledger."""
    errors = [abs(true_value - b.prediction) for b in sealed]
    c = select_cutoff(errors, config.cutoff_policy)
    p, beta = config.reward_p, config.reward_beta
    lines = []
    for b, err in zip(sealed, errors):
        mult = reward_multiplier(err, c, p, beta)
        revenue = mult * b.stake
        lines.append(Settlement(b.agent_id, b, err, mult, revenue, revenue - b.stake))
    # all stakes leave before any revenue arrives; one combined update keeps
    # the ledger consistent with the reported net revenues
    for s in lines:
        ledger.apply_net(s.agent_id, s.net_revenue)
    return c, tuple(lines)


def run_market(record, agents: Sequence[AgentHandle], config: MarketConfig,
               ledger: CapitalLedger) -> MarketOutcome:
    """Run one market for ``record``: bid rounds, sealing, settlement, notification."""
    if not agents:
        raise NoParticipantsError("no participants")
    for a in agents:
        if a.agent_id not in ledger:
            raise KeyError(f"agent {a.agent_id!r} has no ledger entry")
    rounds, sealed = run_rounds(record.features, agents, config, ledger)
    true_value = record.true_value
    c, lines = settle(record.record_id, sealed, true_value, config, ledger)
    outcome = MarketOutcome(
        record_id=record.record_id,
        final_prediction=rounds[-1].market_prediction,
        true_value=true_value,
        cutoff_c=c,
        reward_p=config.reward_p,
        reward_beta=config.reward_beta,
        rounds=rounds,
        per_agent=lines,
    )
    for a in agents:
        a.notify(true_value, outcome)
    return outcome
