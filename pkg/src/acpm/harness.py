"""Experiment driver: specs, the per-record market loop, baselines, metrics and reports."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .agents import Action, Agent, Strategy
from .data import PRESET_NAMES, TIERS, load_csv, load_preset
from .learners import LEARNERS, make_learner
from .market import CapitalLedger, CutoffPolicy, MarketConfig, run_market

SIG_DIGITS = 9


class SpecError(ValueError):
    """Invalid experiment spec; ``problems`` lists every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid experiment spec:\n  - " + "\n  - ".join(self.problems))


@dataclass
class AgentGroup:
    """One roster entry. ``streams`` is ``"each"`` (one agent per stream),
    ``"all"`` (one agent seeing every stream) or a list of stream names."""

    learner: str
    streams: object = "all"
    strategy: str = "q_learning"
    params: dict = field(default_factory=dict)
    name: Optional[str] = None
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentSpec:
    name: str
    dataset: dict
    agents: list
    market: MarketConfig = field(default_factory=MarketConfig)
    initial_capital: float = 100.0
    baselines: list = field(default_factory=list)
    seed: int = 0
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        problems = []
        name = d.get("name", "experiment")
        dataset = d.get("dataset")
        if not isinstance(dataset, dict):
            problems.append("dataset: section missing")
            dataset = {}
        elif ("preset" in dataset) == ("csv" in dataset):
            problems.append("dataset: give exactly one of 'preset' or 'csv'")
        elif "csv" in dataset and "target" not in dataset:
            problems.append("dataset: csv source needs a 'target' column")
        elif "preset" in dataset:
            p = dataset["preset"]
            if p not in PRESET_NAMES and not Path(str(p)).is_file():
                problems.append(f"dataset.preset: {p!r} is neither a shipped preset {PRESET_NAMES} nor a file")

        m = dict(d.get("market", {}))
        market = None
        try:
            if "cutoff" in m:
                m["cutoff_policy"] = CutoffPolicy.parse(m.pop("cutoff"))
            initial_capital = float(m.pop("initial_capital", 100.0))
            market = MarketConfig(**m)
        except (TypeError, ValueError) as exc:
            problems.append(f"market: {exc}")
            initial_capital = 100.0
        if initial_capital <= 0:
            problems.append("market.initial_capital must be positive")

        agents = []
        raw_agents = d.get("agents") or []
        if not raw_agents:
            problems.append("agents: roster is empty")
        for i, a in enumerate(raw_agents):
            problems += _check_group(a, f"agents[{i}]", with_strategy=True)
            agents.append(_group(a))
        baselines = []
        for i, b in enumerate(d.get("baselines") or []):
            problems += _check_group(b, f"baselines[{i}]", with_strategy=False)
            baselines.append(_group(b))

        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            problems.append(f"seed: must be an integer, got {seed!r}")
        if problems:
            raise SpecError(problems)
        return cls(name=name, dataset=dataset, agents=agents, market=market,
                   initial_capital=initial_capital, baselines=baselines, seed=seed,
                   output_dir=d.get("output_dir"))

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read spec {path}: {exc}") from exc
        spec = cls.from_dict(json.loads(text))
        # relative dataset paths resolve against the spec file
        for key in ("csv", "preset"):
            v = spec.dataset.get(key)
            if v and v not in PRESET_NAMES and not Path(v).is_absolute():
                candidate = path.parent / v
                if candidate.exists():
                    spec.dataset[key] = str(candidate)
        return spec

    def to_dict(self) -> dict:
        m = self.market
        return {
            "name": self.name,
            "seed": self.seed,
            "dataset": self.dataset,
            "market": {
                "rounds": m.rounds, "max_rpt": m.max_rpt, "min_rpt": m.min_rpt,
                "reward_p": m.reward_p, "reward_beta": m.reward_beta,
                "cutoff": str(m.cutoff_policy), "initial_capital": self.initial_capital,
            },
            "agents": [_group_dict(g) for g in self.agents],
            "baselines": [_group_dict(g) for g in self.baselines],
        }

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return ExperimentSpec(self.name, dict(self.dataset), list(self.agents), self.market,
                              self.initial_capital, list(self.baselines), seed, self.output_dir)

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _check_group(g, where, with_strategy) -> list:
    if not isinstance(g, dict):
        return [f"{where}: must be a mapping"]
    problems = []
    if g.get("learner") not in LEARNERS:
        problems.append(f"{where}.learner: unknown learner {g.get('learner')!r}; known: {sorted(LEARNERS)}")
    streams = g.get("streams", "all")
    if not (streams in ("each", "all") or (isinstance(streams, list) and streams)):
        problems.append(f"{where}.streams: expected 'each', 'all' or a nonempty list of names")
    if with_strategy and g.get("strategy", "q_learning") not in {s.value for s in Strategy}:
        problems.append(f"{where}.strategy: expected 'q_learning' or 'constant'")
    if g.get("learner") in LEARNERS:
        try:
            make_learner(g["learner"], **g.get("params", {}))
        except TypeError as exc:
            problems.append(f"{where}.params: {exc}")
    return problems


def _group(g) -> AgentGroup:
    if not isinstance(g, dict):
        return AgentGroup(learner="?")
    return AgentGroup(learner=g.get("learner"), streams=g.get("streams", "all"),
                      strategy=g.get("strategy", "q_learning"), params=dict(g.get("params", {})),
                      name=g.get("name"), options=dict(g.get("options", {})))


def _group_dict(g: AgentGroup) -> dict:
    return {"learner": g.learner, "streams": g.streams, "strategy": g.strategy,
            "params": g.params, "name": g.name, "options": g.options}


@dataclass
class Dataset:
    records: list
    stream_names: list
    tiers: dict  # stream name -> tier, empty when unknown


def load_dataset(spec: ExperimentSpec) -> Dataset:
    ds = spec.dataset
    if "preset" in ds:
        preset = load_preset(ds["preset"])
        records = preset.generate(spec.seed, ds.get("n_records"))
        return Dataset(records, [s.stream_id for s in preset.streams], preset.tier_map())
    path = Path(ds["csv"])
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    features = ds.get("features") or [c for c in header if c not in (ds["target"], ds.get("timestamp"))]
    records = load_csv(path, ds["target"], features, ds.get("timestamp"))
    return Dataset(records, list(features), dict(ds.get("tiers", {})))


def build_agents(spec: ExperimentSpec, dataset: Dataset) -> tuple:
    """Instantiate the roster. Returns ``(agents, tiers)`` with one tier (or None) per agent."""
    names = dataset.stream_names
    index = {s: j for j, s in enumerate(names)}
    problems = []
    agents, tiers = [], []
    seen = set()
    for gi, g in enumerate(spec.agents):
        if g.streams == "each":
            selections = [[s] for s in names]
        elif g.streams == "all":
            selections = [list(names)]
        else:
            missing = [s for s in g.streams if s not in index]
            if missing:
                problems.append(f"agents[{gi}].streams: not in dataset: {missing}")
                continue
            selections = [list(g.streams)]
        for sel in selections:
            base = g.name or g.learner
            agent_id = f"{base}@{sel[0]}" if g.streams == "each" else base
            k = 2
            while agent_id in seen:
                agent_id = f"{base}#{k}"
                k += 1
            seen.add(agent_id)
            agents.append(Agent(agent_id, make_learner(g.learner, **g.params), [index[s] for s in sel],
                                g.strategy, spec.market, **g.options))
            tiers.append(dataset.tiers.get(sel[0]) if len(sel) == 1 else None)
    if problems:
        raise SpecError(problems)
    return agents, tiers


@dataclass
class RunReport:
    """Everything logged by one run. Per-agent arrays are (n_records, n_agents)."""

    name: str
    seed: int
    spec_hash: str
    market: MarketConfig
    initial_capital: float
    record_ids: np.ndarray
    truth: np.ndarray
    market_prediction: np.ndarray
    agent_ids: list
    agent_learners: list
    agent_strategies: list
    agent_tiers: list
    base: np.ndarray
    prediction: np.ndarray
    stake: np.ndarray
    error: np.ndarray
    revenue: np.ndarray
    net_revenue: np.ndarray
    capital: np.ndarray
    actions: list  # per record, per agent: tuple of Action values taken in rounds >= 2
    cutoff: np.ndarray
    baseline_ids: list = field(default_factory=list)
    baseline_predictions: np.ndarray = None
    version: str = __version__

    @property
    def n_records(self) -> int:
        return len(self.truth)

    def system_mae(self) -> tuple:
        return compute_mae(self.market_prediction, self.truth) if self.agent_ids else (math.nan, math.nan)

    def agent_base_mae(self) -> np.ndarray:
        return np.nanmean(np.abs(self.base - self.truth[:, None]), axis=0)

    def agent_submitted_mae(self) -> np.ndarray:
        return np.nanmean(np.abs(self.prediction - self.truth[:, None]), axis=0)

    def baseline_mae(self) -> np.ndarray:
        if not self.baseline_ids:
            return np.array([])
        return np.mean(np.abs(self.baseline_predictions - self.truth[:, None]), axis=0)

    def final_capital(self) -> np.ndarray:
        return self.capital[-1] if self.n_records else np.full(len(self.agent_ids), self.initial_capital)

    def ledger_audit(self) -> float:
        """Largest |final capital - (initial + sum of net revenues)| over agents.

        The replay adds net revenues in record order exactly as settlement did.
        """
        worst = 0.0
        for k in range(len(self.agent_ids)):
            c = self.initial_capital
            for v in self.net_revenue[:, k]:
                if v == v:
                    c = c + v
            worst = max(worst, abs(c - self.final_capital()[k]))
        return worst

    def summary(self) -> dict:
        mae, se = self.system_mae()
        base = self.agent_base_mae()
        sub = self.agent_submitted_mae()
        out = {
            "experiment": self.name,
            "n_records": self.n_records,
            "system": {"mae": mae, "standard_error": se},
        }
        if self.agent_ids:
            b = int(np.argmin(base))
            s = int(np.argmin(sub))
            out["best_agent_base"] = {"agent_id": self.agent_ids[b], "mae": base[b]}
            out["best_agent_submitted"] = {"agent_id": self.agent_ids[s], "mae": sub[s]}
        cap = self.final_capital()
        out["agents"] = [
            {
                "agent_id": a,
                "learner": self.agent_learners[k],
                "strategy": self.agent_strategies[k],
                "tier": self.agent_tiers[k],
                "base_mae": base[k],
                "submitted_mae": sub[k],
                "final_capital": cap[k],
            }
            for k, a in enumerate(self.agent_ids)
        ]
        out["baselines"] = [
            {"learner": b, "mae": m, "standard_error": compute_mae(self.baseline_predictions[:, j], self.truth)[1]}
            for j, (b, m) in enumerate(zip(self.baseline_ids, self.baseline_mae()))
        ]
        tiers = {a: t for a, t in zip(self.agent_ids, self.agent_tiers) if t is not None}
        out["action_popularity"] = {
            t: {"PreservePr": fp, "ChangePr": fc} for t, (fp, fc) in action_popularity(self, tiers).items()
        }
        c = self.market
        out["market"] = {"rounds": c.rounds, "max_rpt": c.max_rpt, "min_rpt": c.min_rpt,
                         "reward_p": c.reward_p, "reward_beta": c.reward_beta,
                         "cutoff": str(c.cutoff_policy), "initial_capital": self.initial_capital}
        out["provenance"] = {"spec_hash": self.spec_hash, "seed": self.seed, "version": self.version}
        return out

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records_csv(self, out / "records.csv")
        if self.baseline_ids:
            write_baselines_csv(self, out / "baselines.csv")
        (out / "summary.json").write_text(dumps(self.summary()) + "\n", encoding="utf-8")
        return out


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if x != x else format(x, f".{SIG_DIGITS}g")


def _round_floats(obj):
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if x != x else float(format(x, f".{SIG_DIGITS}g"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_round_floats(obj), indent=2)


AGENT_COLUMNS = ("base", "prediction", "stake", "error", "revenue", "net_revenue", "action", "capital")


def write_records_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["record_id", "truth", "market_prediction"]
        for a in report.agent_ids:
            header += [f"{a}.{c}" for c in AGENT_COLUMNS]
        w.writerow(header)
        for i in range(report.n_records):
            row = [int(report.record_ids[i]), fmt(report.truth[i]), fmt(report.market_prediction[i])]
            for k in range(len(report.agent_ids)):
                row += [fmt(report.base[i, k]), fmt(report.prediction[i, k]), fmt(report.stake[i, k]),
                        fmt(report.error[i, k]), fmt(report.revenue[i, k]), fmt(report.net_revenue[i, k]),
                        "|".join(a.value for a in report.actions[i][k]), fmt(report.capital[i, k])]
            w.writerow(row)


def write_baselines_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "truth", *report.baseline_ids])
        for i in range(report.n_records):
            w.writerow([int(report.record_ids[i]), fmt(report.truth[i]),
                        *[fmt(v) for v in report.baseline_predictions[i]]])


def build_baselines(spec: ExperimentSpec) -> tuple:
    ids, models = [], []
    for g in spec.baselines:
        base = g.name or g.learner
        bid, k = base, 2
        while bid in ids:
            bid, k = f"{base}#{k}", k + 1
        ids.append(bid)
        models.append(make_learner(g.learner, **g.params))
    return ids, models


def run_experiment(spec: ExperimentSpec, dataset: Optional[Dataset] = None,
                   with_agents: bool = True) -> RunReport:
    """Run every record through a market (and the baselines) in order.

    Each record is predicted by every participant before its target is used
    for settlement or training.
    """
    if dataset is None:
        dataset = load_dataset(spec)
    if with_agents:
        agents, tiers = build_agents(spec, dataset)
    else:
        agents, tiers = [], []
    baseline_ids, baselines = build_baselines(spec)
    config = spec.market
    ledger = CapitalLedger([a.agent_id for a in agents], spec.initial_capital)

    records = dataset.records
    n, A = len(records), len(agents)
    nan_row = [math.nan] * A
    cols = {c: [] for c in ("base", "prediction", "stake", "error", "revenue", "net", "capital")}
    market_pred, cutoffs, actions, base_preds = [], [], [], []

    for rec in records:
        features = rec.features
        bpred = [m.predict_one(features) for m in baselines]
        if agents:
            outcome = run_market(rec, agents, config, ledger)
            lines = {s.agent_id: s for s in outcome.per_agent}
            row = {c: list(nan_row) for c in cols}
            for k, a in enumerate(agents):
                s = lines.get(a.agent_id)
                row["capital"][k] = ledger[a.agent_id]
                if s is None:
                    continue
                row["base"][k] = a.base_prediction
                row["prediction"][k] = s.bid.prediction
                row["stake"][k] = s.bid.stake
                row["error"][k] = s.error
                row["revenue"][k] = s.revenue
                row["net"][k] = s.net_revenue
            for c in cols:
                cols[c].append(row[c])
            actions.append([tuple(a.actions) if a.agent_id in lines else () for a in agents])
            market_pred.append(outcome.final_prediction)
            cutoffs.append(outcome.cutoff_c)
        y = rec.true_value
        for m in baselines:
            m.train(features, y)
        base_preds.append(bpred)

    def arr(c):
        return np.array(cols[c], dtype=float).reshape(n if A else 0, A) if A else np.empty((n, 0))

    return RunReport(
        name=spec.name, seed=spec.seed, spec_hash=spec.hash(), market=config,
        initial_capital=spec.initial_capital,
        record_ids=np.array([r.record_id for r in records]),
        truth=np.array([r.true_value for r in records], dtype=float),
        market_prediction=np.array(market_pred, dtype=float) if A else np.full(n, math.nan),
        agent_ids=[a.agent_id for a in agents],
        agent_learners=[type(a.learner).__name__ for a in agents],
        agent_strategies=[a.strategy.value for a in agents],
        agent_tiers=tiers,
        base=arr("base"), prediction=arr("prediction"), stake=arr("stake"), error=arr("error"),
        revenue=arr("revenue"), net_revenue=arr("net"), capital=arr("capital"),
        actions=actions if A else [[] for _ in range(n)],
        cutoff=np.array(cutoffs, dtype=float) if A else np.full(n, math.nan),
        baseline_ids=baseline_ids,
        baseline_predictions=np.array(base_preds, dtype=float).reshape(n, len(baselines)),
    )


def run_benchmarks(spec: ExperimentSpec) -> RunReport:
    """Baselines only, no market."""
    return run_experiment(spec, with_agents=False)


def _run_seed(args):
    spec, seed = args
    return run_experiment(spec.with_seed(seed))


def run_seeds(spec: ExperimentSpec, seeds: Sequence[int], workers: int = 1) -> list:
    """Independent replicates, one per seed; optionally in worker processes."""
    jobs = [(spec, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_seed, jobs))
    return [_run_seed(j) for j in jobs]


def cross_seed_summary(reports: Sequence[RunReport]) -> dict:
    rows = []
    for r in reports:
        mae, se = r.system_mae()
        row = {"seed": r.seed, "system_mae": mae, "system_se": se}
        if r.agent_ids:
            row["best_agent_base_mae"] = float(np.min(r.agent_base_mae()))
        if r.baseline_ids:
            row["best_baseline_mae"] = float(np.min(r.baseline_mae()))
        rows.append(row)
    maes = np.array([row["system_mae"] for row in rows])
    return {
        "experiment": reports[0].name if reports else None,
        "n_seeds": len(rows),
        "system_mae_mean": float(np.mean(maes)) if len(maes) else math.nan,
        "system_mae_sd": float(np.std(maes, ddof=1)) if len(maes) > 1 else 0.0,
        "per_seed": rows,
    }


def compute_mae(predictions, truths) -> tuple:
    """Mean absolute error and its standard error (sample std / sqrt(n))."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(truths, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {y.shape} truths")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    err = np.abs(p - y)
    se = float(np.std(err, ddof=1) / math.sqrt(err.size)) if err.size > 1 else 0.0
    return float(err.mean()), se


def compare_paired(errors_a, errors_b, n_boot: int = 10_000, seed=0) -> tuple:
    """Paired bootstrap of mean(|e_a| - |e_b|) with a percentile 95% interval."""
    a = np.abs(np.asarray(errors_a, dtype=float))
    b = np.abs(np.asarray(errors_b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 10:
        raise ValueError("need at least 10 paired errors")
    d = a - b
    mean_diff = float(d.mean())
    rng = np.random.default_rng(seed)
    n = d.size
    means = np.empty(n_boot)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, n_boot, chunk):
        stop = min(n_boot, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        means[start:stop] = d[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return mean_diff, float(lo), float(hi)


def action_popularity(report: RunReport, tier_map: dict) -> dict:
    """Per tier, the fractions of round >= 2 decisions that were PreservePr and ChangePr.

    ``tier_map`` maps agent ids to tiers; agents not in it are ignored.
    """
    counts = {}
    for k, a in enumerate(report.agent_ids):
        tier = tier_map.get(a)
        if tier is None or report.agent_strategies[k] != Strategy.Q_LEARNING.value:
            continue
        c = counts.setdefault(tier, [0, 0])
        for per_record in report.actions:
            for act in per_record[k]:
                c[act is Action.CHANGE] += 1
    out = {}
    for tier in [t for t in TIERS if t in counts] + sorted(set(counts) - set(TIERS)):
        p, ch = counts[tier]
        total = p + ch
        if total:
            out[tier] = (p / total, ch / total)
    return out
