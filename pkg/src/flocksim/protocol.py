"""Flock round engine, equilibrium scan and the controlled (estimate-based) variant.

"Do in parallel" is realised as a uniformly random sequential order per
round with every accepted move applied immediately, so each test sees the
outcome as mutated so far.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from . import cost as mcost
from .model import (Instance, check_outcome, cloud_loads, delays_from_loads, moved,
                    utilities_from_delays)
from .regularize import RegFn


@dataclass(frozen=True)
class HarmonicSteps:
    """Step sizes b_k = scale / k**power for k >= 1."""

    scale: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        if not self.scale > 0 or not 0 < self.power <= 1:
            raise ValueError("need scale > 0 and 0 < power <= 1")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ValueError("step sizes are defined for k >= 1")
        return self.scale / k ** self.power


@dataclass(frozen=True)
class ProtocolConfig:
    eta: float = 0.9
    reg: RegFn = field(default_factory=RegFn)
    max_rounds: Optional[int] = None      # None -> 10 * n * m
    step_schedule: HarmonicSteps = field(default_factory=HarmonicSteps)
    jitter: float = 0.0                   # relative band of the per-round tau noise
    estimate_rule: str = "literal"        # "literal" | "innovation" (controlled variant)
    cost_variant: str = "none"            # "none" | "penalty" | "adaptive-eta"
    beta: float = 0.9
    cost_coeff: float = 10.0
    stop_at_equilibrium: bool = True

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter band must lie in [0, 1)")
        if self.estimate_rule not in ("literal", "innovation"):
            raise ValueError(f"unknown estimate rule {self.estimate_rule!r}")
        if self.cost_variant not in mcost.VARIANTS:
            raise ValueError(f"unknown cost variant {self.cost_variant!r}")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")

    def round_cap(self, instance: Instance) -> int:
        if self.max_rounds is not None:
            return self.max_rounds
        return max(1, 10 * instance.num_vms * instance.num_clouds)


class Decision(NamedTuple):
    accept: bool
    lhs: float
    rhs: float
    reason: str  # "accept", "reject", "infeasible", "same", "not-allowed", "inert"


@dataclass(frozen=True)
class Migration:
    round: int
    vm: int
    src: int
    dst: int
    cost_before: float
    cost_after: float


@dataclass
class RoundRecord:
    k: int
    migrations: List[Migration]
    social_cost: float
    weights: np.ndarray
    step: float = float("nan")
    max_increment: float = 0.0
    R: Optional[np.ndarray] = None


@dataclass
class Trace:
    initial: tuple
    final: tuple = ()
    rounds: List[RoundRecord] = field(default_factory=list)
    status: str = "running"  # "equilibrium" | "round_cap" | "horizon"
    scans: int = 0
    initial_cost: float = float("nan")
    exchanges: int = 0
    estimates: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return self.status == "equilibrium"

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    @property
    def migrations(self) -> List[Migration]:
        return [mig for rec in self.rounds for mig in rec.migrations]

    @property
    def final_cost(self) -> float:
        return self.rounds[-1].social_cost if self.rounds else self.initial_cost

    def cost_increases(self, tol: float = 1e-9) -> List[Migration]:
        """Accepted migrations after which the social cost rose by more than ``tol``."""
        return [mig for mig in self.migrations if mig.cost_after - mig.cost_before > tol]

    def migrations_by_half(self):
        half = (self.num_rounds + 1) // 2  # odd middle round counts toward the first half
        first = sum(len(r.migrations) for r in self.rounds[:half])
        second = sum(len(r.migrations) for r in self.rounds[half:])
        return first, second

    def write_csv(self, path, with_R: bool = False) -> None:
        """One row per accepted migration plus a terminal row whose ``vm`` field is the status."""
        header = ["round", "vm", "from_cloud", "to_cloud", "social_cost"]
        if with_R:
            header.append("R")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for rec in self.rounds:
                for mig in rec.migrations:
                    row = [rec.k, mig.vm, mig.src, mig.dst, repr(mig.cost_after)]
                    if with_R:
                        row.append(repr(float(rec.R[mig.vm])) if rec.R is not None else "")
                    w.writerow(row)
            row = [self.num_rounds, self.status, "", "", repr(self.final_cost)]
            if with_R:
                row.append("")
            w.writerow(row)


class _View:
    """Derived quantities of one outcome: loads, delays, utilities, weights, cost."""

    __slots__ = ("a", "loads", "rho", "u", "w", "cost")

    def __init__(self, instance: Instance, a: np.ndarray, reg):
        self.a = a
        self.loads = cloud_loads(instance, a)
        self.rho = delays_from_loads(instance, self.loads)
        if instance.num_vms:
            self.u = utilities_from_delays(instance, a, self.rho)
        else:
            self.u = np.zeros(0)
        self.w = np.bincount(a, weights=self.u, minlength=instance.num_clouds)
        self.cost = float(np.sum(self.w * reg(self.w)))


def _target_utilities(instance: Instance, view: _View, i: int, ys: np.ndarray):
    """Anticipated u_i(y) for each candidate y, with i moved off its cloud.

    Returns ``(u, feasible)``; ``u`` is meaningless where ``feasible`` is False.
    Round tests and equilibrium scans both go through here, so they agree
    bit for bit.
    """
    x = int(view.a[i])
    D = instance.loads[i]
    gamma, delta = instance.gamma, instance.delta
    Ly = view.loads[ys] + D
    feasible = Ly < gamma[ys]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_y = np.where(feasible, delta * Ly / (gamma[ys] - Ly), np.inf)
    Lx = view.loads[x] - D
    rho_x = delta * Lx / (gamma[x] - Lx)
    P = instance.peer_demand[i]
    if P == 0:
        return (rho_y if D > 0 else np.zeros(ys.size)), feasible
    peers = np.nonzero(instance.demand[i])[0]
    aj = view.a[peers]
    R = np.broadcast_to(view.rho, (ys.size, view.rho.size)).copy()
    R[:, x] = rho_x
    R[np.arange(ys.size), ys] = rho_y
    lat = instance.tau[np.ix_(ys, aj)] + (rho_y[:, None] + R[:, aj])
    return (lat * instance.demand[i, peers]).sum(axis=1) / P, feasible


def _tests(instance: Instance, view: _View, reg, eta: float, i: int, ys: np.ndarray,
           u_current: float, penalty: float = 0.0):
    """Vectorised migration test of VM i against candidate clouds ys."""
    x = int(view.a[i])
    u_y, feasible = _target_utilities(instance, view, i, ys)
    u_y = u_y + penalty
    with np.errstate(invalid="ignore"):
        lhs = np.where(feasible, u_y * reg(view.w[ys] + u_y), np.inf)
    rhs = eta * u_current * float(reg(max(view.w[x] - u_current, 0.0)))
    ok = feasible & ((lhs < rhs) | ((lhs == rhs) & (eta == 1.0)))
    return ok, lhs, rhs, feasible


def _decide(instance: Instance, view: _View, reg, eta: float, i: int, y: int,
            u_current: float, penalty: float = 0.0) -> Decision:
    x = int(view.a[i])
    if y == x:
        return Decision(False, np.nan, np.nan, "same")
    if y not in instance.strategy_sets[i]:
        return Decision(False, np.nan, np.nan, "not-allowed")
    if instance.inert[i]:
        return Decision(False, 0.0, 0.0, "inert")
    ok, lhs, rhs, feasible = _tests(instance, view, reg, eta, i, np.array([y]), u_current,
                                    penalty)
    if not feasible[0]:
        return Decision(False, np.inf, rhs, "infeasible")
    return Decision(bool(ok[0]), float(lhs[0]), rhs, "accept" if ok[0] else "reject")


def accepts(lhs: float, rhs: float, eta: float) -> bool:
    """lhs <= rhs, except that an exact tie only passes when eta == 1."""
    return lhs < rhs or (lhs == rhs and eta == 1.0)


def _eta_for(config: ProtocolConfig, cstate, i: int) -> float:
    if config.cost_variant == "adaptive-eta" and cstate is not None:
        return mcost.adaptive_eta(cstate, i)
    return config.eta


def _penalty_for(config: ProtocolConfig, instance: Instance, cstate, i: int) -> float:
    if config.cost_variant == "penalty" and cstate is not None:
        return mcost.utility_penalty(instance, cstate, i)
    return 0.0


def migration_test(instance: Instance, sigma, config: ProtocolConfig, i: int, y: int,
                   cost_state=None) -> Decision:
    """Accept iff u_i(y) f(w_y + u_i(y)) <= eta u_i(x) f(w_x - u_i(x)).

    u_i(y) is evaluated on the outcome with ``i`` moved to ``y``; u_i(x),
    w_x and w_y on the current outcome.  Moves that would overload ``y`` are
    rejected with reason ``"infeasible"``.
    """
    a = check_outcome(instance, sigma)
    view = _View(instance, a, config.reg)
    return _decide(instance, view, config.reg, _eta_for(config, cost_state, i), i=int(i),
                   y=int(y), u_current=float(view.u[i]),
                   penalty=_penalty_for(config, instance, cost_state, i))


def is_eta_nash(instance: Instance, sigma, config: ProtocolConfig, cost_state=None,
                estimates=None):
    """Full deviation scan; returns ``(True, None)`` or ``(False, (i, y))``."""
    a = check_outcome(instance, sigma)
    view = _View(instance, a, config.reg)
    return _scan(instance, view, config, cost_state, estimates)


def _scan(instance, view, config, cost_state=None, estimates=None):
    for i in range(instance.num_vms):
        if instance.inert[i]:
            continue
        x = int(view.a[i])
        ys = np.array([y for y in instance.strategy_sets[i] if y != x], dtype=np.intp)
        if ys.size == 0:
            continue
        u_cur = float(view.u[i]) if estimates is None else float(estimates[i])
        ok, _, _, _ = _tests(instance, view, config.reg, _eta_for(config, cost_state, i), i, ys,
                             u_cur, _penalty_for(config, instance, cost_state, i))
        if ok.any():
            return False, (i, int(ys[np.argmax(ok)]))
    return True, None


def _jittered(instance: Instance, band: float, rng) -> Instance:
    m = instance.num_clouds
    noise = rng.uniform(1.0 - band, 1.0 + band, size=(m, m))
    noise = np.triu(noise, 1)
    noise = noise + noise.T
    return instance.with_tau(instance.tau * noise)


def _one_round(instance, view, config, rng, k, cstate=None, estimates=None, step=None,
               log=None):
    """Visit every VM once in random order. Returns (view, migrations, migrated flags, max increment)."""
    n = instance.num_vms
    reg = config.reg
    migs = []
    flags = np.zeros(n, dtype=bool)
    max_inc = 0.0
    for i in rng.permutation(n):
        i = int(i)
        if instance.inert[i]:
            continue
        x = int(view.a[i])
        choices = [y for y in instance.strategy_sets[i] if y != x]
        u_cur = float(view.u[i]) if estimates is None else float(estimates[i])
        u_new = None
        if choices:
            y = choices[int(rng.integers(len(choices)))]
            pen = _penalty_for(config, instance, cstate, i)
            if log is not None and pen:
                log["exchanges"] += int(np.count_nonzero(instance.demand[i]))
            d = _decide(instance, view, reg, _eta_for(config, cstate, i), i, y, u_cur, pen)
            if d.accept:
                before = view.cost
                new_view = _View(instance, moved(view.a, i, y), reg)
                migs.append(Migration(k, i, x, y, before, new_view.cost))
                flags[i] = True
                # measured target-side utility, reused by the controlled estimate
                u_new = float(new_view.u[i])
                view = new_view
        if estimates is not None:
            base = u_new if u_new is not None else float(estimates[i])
            xi = int(view.a[i])
            if config.estimate_rule == "literal":
                inc = step * float(reg(view.w[xi]))
            else:
                inc = step * (float(view.u[i]) - base)
            estimates[i] = base + inc
            max_inc = max(max_inc, abs(inc))
    return view, migs, flags, max_inc


def _run(instance, initial, config, rng, controlled: bool, estimates=None) -> Trace:
    a = check_outcome(instance, initial).copy()
    reg = config.reg
    base_view = _View(instance, a, reg)
    trace = Trace(initial=tuple(int(x) for x in a), initial_cost=base_view.cost)
    cstate = None
    if config.cost_variant != "none":
        cstate = mcost.CostState.fresh(instance.num_vms, config.beta, config.cost_coeff)
    if controlled:
        estimates = (np.array(base_view.u, dtype=float) if estimates is None
                     else np.array(estimates, dtype=float))
    log = {"exchanges": 0}
    view = base_view
    cap = config.round_cap(instance)
    status = "round_cap" if config.stop_at_equilibrium else "horizon"
    stateless = not controlled and cstate is None
    failed_scan_at = None
    for k in range(1, cap + 1):
        inst_k = instance
        if controlled and config.jitter > 0:
            inst_k = _jittered(instance, config.jitter, rng)
        if inst_k is not instance:
            view = _View(inst_k, view.a, reg)
        step = config.step_schedule(k) if controlled else float("nan")
        view, migs, flags, max_inc = _one_round(inst_k, view, config, rng, k, cstate,
                                                estimates if controlled else None, step, log)
        if cstate is not None:
            cstate = mcost.update_R(cstate, flags)
        trace.rounds.append(RoundRecord(k, migs, view.cost, view.w.copy(), step, max_inc,
                                        None if cstate is None else cstate.R.copy()))
        if migs:
            failed_scan_at = None
        elif config.stop_at_equilibrium:
            # a plain run whose outcome has not moved since a failed scan would fail it again
            if stateless and failed_scan_at is not None:
                continue
            trace.scans += 1
            ok, _ = _scan(inst_k, view, config, cstate, estimates if controlled else None)
            if ok:
                status = "equilibrium"
                break
            failed_scan_at = k
    trace.status = status
    trace.final = tuple(int(x) for x in view.a)
    trace.exchanges = log["exchanges"]
    if controlled:
        trace.estimates = estimates
    return trace


def run(instance: Instance, initial, config: ProtocolConfig, rng) -> Trace:
    """Iterate rounds until a quiet round is confirmed by a full scan, or the cap."""
    return _run(instance, initial, config, rng, controlled=False)


def run_controlled(instance: Instance, initial, config: ProtocolConfig, rng,
                   estimates=None) -> Trace:
    """Controlled variant: the incumbent side uses per-VM estimates updated with b_k.

    Estimates start at the measured utilities of ``initial`` unless given.
    When ``config.jitter`` is set, tau is perturbed (symmetric, multiplicative,
    uniform within the band around the base values) at the start of each round.
    """
    return _run(instance, initial, config, rng, controlled=True, estimates=estimates)


def flock_round(instance: Instance, sigma, config: ProtocolConfig, rng):
    """One plain round; returns ``(new_assignment, migrations)``."""
    a = check_outcome(instance, sigma)
    view = _View(instance, a, config.reg)
    view, migs, _, _ = _one_round(instance, view, config, rng, k=1)
    return tuple(int(x) for x in view.a), migs


class UtilityState(NamedTuple):
    estimates: np.ndarray
    k: int


def controlled_round(instance: Instance, sigma, config: ProtocolConfig, state: UtilityState, rng):
    """One controlled round at step ``state.k``; returns ``(new_assignment, new_state, migrations)``."""
    if state.k < 1:
        raise ValueError("round counter must be >= 1")
    inst_k = _jittered(instance, config.jitter, rng) if config.jitter > 0 else instance
    a = check_outcome(inst_k, sigma)
    view = _View(inst_k, a, config.reg)
    est = np.array(state.estimates, dtype=float)
    view, migs, _, _ = _one_round(inst_k, view, config, rng, state.k, estimates=est,
                                  step=config.step_schedule(state.k))
    return tuple(int(x) for x in view.a), UtilityState(est, state.k + 1), migs
