"""Seeded trial farms with confidence-interval stopping and CSV reports.

A config names an experiment kind, generator parameters, protocol
parameters and a sweep over one of them.  Each sweep point runs trials
(seeded from the master seed, the point index and the trial index) in
batches until the Student-t half-width of the primary metric drops below
the relative target, or the trial budget runs out.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, NamedTuple, Optional

import numpy as np
from scipy import stats

from . import oracle, scenarios
from .errors import InsufficientSamples, NoFeasibleAssignment
from .model import cloud_weights, e1_instance, idle_clouds, social_cost, utilization
from .protocol import HarmonicSteps, ProtocolConfig, run, run_controlled
from .regularize import RegFn

KINDS = ("convergence", "poa", "balance", "energy", "dynamics", "cost")
PRIMARY_METRIC = {
    "convergence": "rounds",
    "poa": "poa",
    "balance": "util_std",
    "energy": "idle",
    "dynamics": "rounds",
    "cost": "migrations",
}
FIXTURES = ("e1", "oscillating")
_GEN_FIELDS = ("m", "n", "tau_range", "gamma_range", "d_range", "p", "mean_degree", "delta")
_PROTO_FIELDS = ("eta", "a", "max_rounds", "jitter", "estimate_rule", "cost_variant", "beta",
                 "cost_coeff", "step_scale", "step_power")
_REGEN_ATTEMPTS = 100

TRIALS_HEADER = ["experiment", "sweep_value", "trial", "seed", "metric", "value"]
SUMMARY_HEADER = ["experiment", "sweep_value", "n", "mean", "sd", "ci_half_width",
                  "min", "q25", "q50", "q75", "max"]


# -- config -------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolParams:
    """JSON-friendly mirror of ProtocolConfig (the regularizer is given by its shift a)."""

    eta: float = 0.9
    a: float = 9.0
    max_rounds: Optional[int] = None
    jitter: float = 0.0
    estimate_rule: str = "literal"
    cost_variant: str = "none"
    beta: float = 0.9
    cost_coeff: float = 10.0
    step_scale: float = 1.0
    step_power: float = 1.0

    def build(self) -> ProtocolConfig:
        return ProtocolConfig(eta=self.eta, reg=RegFn(self.a), max_rounds=self.max_rounds,
                              step_schedule=HarmonicSteps(self.step_scale, self.step_power),
                              jitter=self.jitter, estimate_rule=self.estimate_rule,
                              cost_variant=self.cost_variant, beta=self.beta,
                              cost_coeff=self.cost_coeff)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    gen: scenarios.GenParams
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    sweep_variable: str = "n"
    sweep_values: tuple = ()
    trial_budget: int = 2000
    min_trials: int = 10
    batch: int = 10
    # fixed trial count per point; disables CI stopping
    trials: Optional[int] = None
    confidence: float = 0.95
    rel_half_width: float = 0.1
    master_seed: int = 0
    # a named built-in instance used by every trial instead of generated ones
    fixture: Optional[str] = None
    oracle_budget: int = oracle.DEFAULT_BUDGET
    workers: int = 1
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.sweep_values:
            raise ValueError("sweep values must be non-empty")
        if self.sweep_variable not in _GEN_FIELDS + _PROTO_FIELDS:
            raise ValueError(f"cannot sweep {self.sweep_variable!r}")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence level must lie in (0, 1)")
        if not self.rel_half_width > 0:
            raise ValueError("half-width target must be positive")
        if self.min_trials < 2 or self.batch < 1 or self.trial_budget < self.min_trials:
            raise ValueError("need min_trials >= 2, batch >= 1 and budget >= min_trials")
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be positive")
        if self.fixture is not None and self.fixture not in FIXTURES:
            raise ValueError(f"unknown fixture {self.fixture!r}")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))

    @property
    def label(self) -> str:
        return self.name or self.kind

    def point(self, value):
        """(GenParams, ProtocolConfig) at one sweep value."""
        var = self.sweep_variable
        gen, proto = self.gen, self.protocol
        if var in _GEN_FIELDS:
            gen = replace(gen, **{var: value})
        else:
            proto = replace(proto, **{var: value})
        return gen, proto.build()


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = asdict(config)
    doc["gen"].pop("seed", None)
    doc["sweep"] = {"variable": doc.pop("sweep_variable"), "values": list(doc.pop("sweep_values"))}
    return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    gen = dict(doc.pop("gen", {}))
    for key in ("tau_range", "gamma_range", "d_range"):
        if key in gen:
            gen[key] = tuple(gen[key])
    sweep = doc.pop("sweep", None) or {}
    proto = ProtocolParams(**doc.pop("protocol", {}))
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "m" not in gen or "n" not in gen:
        raise ValueError("gen must set m and n")
    return ExperimentConfig(gen=scenarios.GenParams(**gen), protocol=proto,
                            sweep_variable=sweep.get("variable", doc.pop("sweep_variable", "n")),
                            sweep_values=tuple(sweep.get("values", doc.pop("sweep_values", ()))),
                            **doc)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")


# -- statistics ---------------------------------------------------------------

class Summary(NamedTuple):
    n: int
    mean: float
    sd: float
    half_width: float
    quartiles: tuple
    lo: float
    hi: float


def quartiles(values) -> tuple:
    v = np.asarray(values, dtype=float)
    if v.size < 1:
        raise InsufficientSamples("quartiles need at least one sample")
    return tuple(float(q) for q in np.percentile(v, [25, 50, 75]))


def summarize(values, confidence: float = 0.95) -> Summary:
    """Mean, sample sd, Student-t half-width t_{(1+c)/2, n-1} sd / sqrt(n), quartiles."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 2:
        raise InsufficientSamples(f"a confidence interval needs >= 2 samples, got {v.size}")
    if not 0 < confidence < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    n = v.size
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1))
    t = float(stats.t.ppf((1 + confidence) / 2, n - 1))
    return Summary(n, mean, sd, t * sd / math.sqrt(n), quartiles(v), float(v[0]), float(v[-1]))


# -- trials -------------------------------------------------------------------

def trial_seed(master_seed: int, point: int, trial: int) -> int:
    ss = np.random.SeedSequence([master_seed, point, trial])
    return int(ss.generate_state(1, np.uint64)[0])


def _fixture(name: str):
    if name == "e1":
        return e1_instance(), None
    return scenarios.oscillating_instance()


def _build(kind: str, gen: scenarios.GenParams, seed: int):
    if kind == "balance":
        return scenarios.preset_load_balancing(gen.with_seed(seed))
    if kind == "energy":
        return scenarios.preset_energy(gen.with_seed(seed))
    return scenarios.gen_random_instance(gen.with_seed(seed))


def trial_instance(config: ExperimentConfig, point: int, trial: int):
    """(instance, initial outcome, seed) of one trial, regenerating infeasible draws."""
    seed = trial_seed(config.master_seed, point, trial)
    gen, _ = config.point(config.sweep_values[point])
    if config.fixture is not None:
        inst, start = _fixture(config.fixture)
        if start is None:
            start = scenarios.initial_assignment(inst, np.random.default_rng([seed, 0]))
        return inst, tuple(start), seed
    for attempt in range(_REGEN_ATTEMPTS):
        inst = _build(config.kind, gen, (seed + attempt) % 2 ** 64)
        try:
            start = scenarios.initial_assignment(inst, np.random.default_rng([seed, attempt]))
        except NoFeasibleAssignment:
            continue
        return inst, start, seed
    raise NoFeasibleAssignment(f"no feasible instance after {_REGEN_ATTEMPTS} draws")


class TrialResult(NamedTuple):
    trial: int
    seed: int
    metrics: Dict[str, float]
    violations: List[str]


def _std(x) -> float:
    return float(np.std(x))


def run_trial(config: ExperimentConfig, point: int, trial: int) -> TrialResult:
    inst, start, seed = trial_instance(config, point, trial)
    _, proto = config.point(config.sweep_values[point])
    rng = np.random.default_rng([seed, 1])
    kind = config.kind
    out: Dict[str, float] = {}
    bad: List[str] = []
    where = f"point {point} trial {trial}"

    if kind == "dynamics":
        tr = run_controlled(inst, start, proto, rng)
        ratios = [rec.max_increment / rec.step for rec in tr.rounds]
        out["rounds"] = tr.num_rounds
        out["terminated"] = float(tr.converged)
        out["max_increment"] = max((rec.max_increment for rec in tr.rounds), default=0.0)
        out["max_increment_ratio"] = max(ratios, default=0.0)
        if proto.estimate_rule == "literal" and out["max_increment_ratio"] > 1 + 1e-12:
            bad.append(f"{where}: estimate increment exceeds b_k")
        return TrialResult(trial, seed, out, bad)

    tr = run(inst, start, proto, rng)
    out["rounds"] = tr.num_rounds
    out["converged"] = float(tr.converged)
    out["migrations"] = len(tr.migrations)
    out["cost_increases"] = len(tr.cost_increases())

    if kind == "poa":
        opt = oracle.brute_force_optimum(inst, proto.reg, config.oracle_budget)
        ne_cost = social_cost(inst, tr.final, proto.reg)
        poa = oracle.price_of_anarchy(inst, tr.final, proto.reg, optimum=opt)
        w = np.concatenate([cloud_weights(inst, tr.final), cloud_weights(inst, opt.best_outcome)])
        w = w[w > 0]
        out["poa"] = poa
        out["ne_cost"] = ne_cost
        out["opt_cost"] = opt.best_cost
        out["w_min"] = float(w.min()) if w.size else 0.0
        out["w_max"] = float(w.max()) if w.size else 0.0
        out["nash_eta"] = float(oracle.verify_nash(inst, tr.final, proto.reg, proto.eta))
        out["nash_exact"] = float(oracle.verify_nash(inst, tr.final, proto.reg, 1.0))
        if poa < 1 - 1e-9:
            bad.append(f"{where}: PoA {poa!r} below 1")
        if tr.converged and not out["nash_eta"]:
            bad.append(f"{where}: converged outcome fails the equilibrium check")
    elif kind == "balance":
        u0, u1 = utilization(inst, start), utilization(inst, tr.final)
        ideal = scenarios.ideal_balanced_utilization(inst)
        out["util_std"] = _std(u1)
        out["util_std_initial"] = _std(u0)
        out["ideal_deviation"] = float(np.max(np.abs(u1 - ideal)))
        if out["util_std"] > out["util_std_initial"] + 1e-12:
            bad.append(f"{where}: utilization spread grew")
    elif kind == "energy":
        ideal = scenarios.ideal_idle_clouds(inst)
        out["idle"] = idle_clouds(inst, tr.final)
        out["idle_initial"] = idle_clouds(inst, start)
        out["idle_ideal"] = ideal.idle
        out["ideal_exact"] = float(ideal.exact)
        out["idle_gap"] = ideal.idle - out["idle"]
        if out["idle"] < out["idle_initial"]:
            bad.append(f"{where}: fewer idle clouds than initially")
    elif kind == "cost":
        first, second = tr.migrations_by_half()
        out["first_half"] = first
        out["second_half"] = second
        out["damped"] = float(second <= first)
        if tr.rounds and tr.rounds[-1].R is not None:
            Rs = np.array([rec.R for rec in tr.rounds])
            out["max_R"] = float(Rs.max())
            out["min_eta"] = float(np.exp(-Rs.max()))
            if Rs.min() < 0 or Rs.max() > 1:
                bad.append(f"{where}: forgetting value left [0, 1]")
    return TrialResult(trial, seed, out, bad)


# -- report -------------------------------------------------------------------

@dataclass
class PointReport:
    sweep_value: Any
    trials: List[TrialResult]
    summary: Optional[Summary]
    budget_exhausted: bool

    def values(self, metric: str) -> np.ndarray:
        return np.array([t.metrics[metric] for t in self.trials if metric in t.metrics])


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    points: List[PointReport]
    violations: List[str] = field(default_factory=list)

    @property
    def metric(self) -> str:
        return PRIMARY_METRIC[self.config.kind]

    def values(self, metric: Optional[str] = None) -> Dict[Any, np.ndarray]:
        metric = metric or self.metric
        return {p.sweep_value: p.values(metric) for p in self.points}

    @property
    def exhausted_points(self) -> list:
        """Sweep values whose CI target was not met within the trial budget."""
        return [p.sweep_value for p in self.points if p.budget_exhausted]

    def write_csv(self, outdir) -> None:
        import os
        os.makedirs(outdir, exist_ok=True)
        label = self.config.label
        with open(os.path.join(outdir, "trials.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRIALS_HEADER)
            for p in self.points:
                for t in p.trials:
                    for key in sorted(t.metrics):
                        w.writerow([label, _fmt(p.sweep_value), t.trial, t.seed, key,
                                    _fmt(t.metrics[key])])
        with open(os.path.join(outdir, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for p in self.points:
                s = p.summary
                if s is None:
                    # a single sample: no spread or interval
                    vals = p.values(self.metric)
                    v = _fmt(float(vals[0])) if len(vals) else ""
                    w.writerow([label, _fmt(p.sweep_value), len(vals), v, "", "", v, v, v, v, v])
                    continue
                w.writerow([label, _fmt(p.sweep_value), s.n, _fmt(s.mean), _fmt(s.sd),
                            _fmt(s.half_width), _fmt(s.lo), *(_fmt(q) for q in s.quartiles),
                            _fmt(s.hi)])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return str(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)
    return str(v)


def _ci_met(values, config: ExperimentConfig) -> bool:
    s = summarize(values, config.confidence)
    return s.half_width <= config.rel_half_width * abs(s.mean)


def _trial_job(args):
    config, point, trial = args
    return run_trial(config, point, trial)


def run_experiment(config: ExperimentConfig, progress=None) -> ExperimentReport:
    """Run every sweep point; samples are sorted before summarization."""
    metric = PRIMARY_METRIC[config.kind]
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    points, violations = [], []
    try:
        for pi, value in enumerate(config.sweep_values):
            results: List[TrialResult] = []
            target = config.trials or config.min_trials
            cap = config.trials or config.trial_budget
            exhausted = False
            while True:
                todo = [(config, pi, t) for t in range(len(results), target)]
                batch = list(pool.map(_trial_job, todo)) if pool else [_trial_job(j) for j in todo]
                results.extend(batch)
                if config.trials is not None:
                    break
                if _ci_met([r.metrics[metric] for r in results], config):
                    break
                if len(results) >= cap:
                    exhausted = True
                    break
                target = min(cap, len(results) + config.batch)
            for r in results:
                violations.extend(r.violations)
            vals = sorted(r.metrics[metric] for r in results)
            summary = summarize(vals, config.confidence) if len(vals) >= 2 else None
            points.append(PointReport(value, results, summary, exhausted))
            if progress is not None:
                progress(value, summary, exhausted)
    finally:
        if pool is not None:
            pool.shutdown()
    return ExperimentReport(config, points, violations)


def default_config(kind: str, **overrides) -> ExperimentConfig:
    """Desk-scale configurations for each kind."""
    base = {
        "convergence": dict(gen=scenarios.GenParams(m=37, n=8, mean_degree=3.5),
                            protocol=ProtocolParams(eta=0.9), sweep_variable="n",
                            sweep_values=(8, 16, 32, 64)),
        "poa": dict(gen=scenarios.GenParams(m=5, n=8), protocol=ProtocolParams(eta=0.99),
                    sweep_variable="eta", sweep_values=(0.7, 0.99), trials=500),
        "balance": dict(gen=scenarios.GenParams(m=20, n=20), protocol=ProtocolParams(eta=0.9),
                        sweep_variable="n", sweep_values=(20, 60, 100, 150)),
        "energy": dict(gen=scenarios.GenParams(m=20, n=6), protocol=ProtocolParams(eta=1.0),
                       sweep_variable="n", sweep_values=(4, 6, 8, 10)),
        "dynamics": dict(gen=scenarios.GenParams(m=5, n=8),
                         protocol=ProtocolParams(eta=0.99, jitter=0.1),
                         sweep_variable="eta", sweep_values=(0.9, 0.99)),
        "cost": dict(gen=scenarios.GenParams(m=5, n=8), protocol=ProtocolParams(eta=1.0),
                     sweep_variable="cost_variant",
                     sweep_values=("none", "penalty", "adaptive-eta"), trials=50),
    }[kind]
    base.update(overrides)
    return ExperimentConfig(kind=kind, **base)
