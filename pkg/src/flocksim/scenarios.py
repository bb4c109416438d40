"""Random instances, feasible initial placements and the load-balancing / energy presets."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import NoFeasibleAssignment
from .model import Instance

TAU_BIG = 1e6


@dataclass(frozen=True)
class GenParams:
    m: int
    n: int
    tau_range: Tuple[float, float] = (10.0, 100.0)
    gamma_range: Tuple[float, float] = (50.0, 100.0)
    d_range: Tuple[float, float] = (1.0, 10.0)
    p: float = 0.5
    # when set, overrides p with mean_degree / (n - 1) (capped at 1)
    mean_degree: Optional[float] = None
    delta: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.m < 1 or self.n < 0:
            raise ValueError("need m >= 1 and n >= 0")
        for name in ("tau_range", "gamma_range", "d_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must be ordered and non-negative")
        if self.gamma_range[0] <= 0 or self.d_range[0] <= 0:
            raise ValueError("capacities and demands must be positive")
        if not 0 <= self.p <= 1:
            raise ValueError("edge probability must lie in [0, 1]")
        if self.mean_degree is not None and self.mean_degree < 0:
            raise ValueError("mean_degree must be non-negative")

    @property
    def edge_prob(self) -> float:
        if self.mean_degree is None:
            return self.p
        return min(1.0, self.mean_degree / max(self.n - 1, 1))

    def with_seed(self, seed) -> "GenParams":
        return replace(self, seed=seed)


def _sym_uniform(rng, size, lo, hi):
    upper = np.triu(rng.uniform(lo, hi, size=(size, size)), 1)
    return upper + upper.T


def gen_random_instance(params: GenParams) -> Instance:
    """Complete cloud graph with uniform tau and gamma; binomial VM graph with uniform demands."""
    rng = np.random.default_rng(params.seed)
    m, n = params.m, params.n
    tau = _sym_uniform(rng, m, *params.tau_range)
    gamma = rng.uniform(*params.gamma_range, size=m)
    edges = np.triu(rng.random((n, n)) < params.edge_prob, 1)
    weights = rng.uniform(*params.d_range, size=(n, n))
    upper = np.where(edges, weights, 0.0)
    demand = upper + upper.T
    return Instance(tau=tau, gamma=gamma, demand=demand, delta=params.delta,
                    name=f"random-m{m}-n{n}-s{params.seed}")


def initial_assignment(instance: Instance, rng, retries: int = 100):
    """Random-order first fit onto uniformly random feasible clouds.

    Falls back to first-fit-decreasing after ``retries`` failed permutations.
    """
    n, gamma, D = instance.num_vms, instance.gamma, instance.loads
    for _ in range(retries):
        loads = np.zeros(instance.num_clouds)
        a = np.zeros(n, dtype=np.intp)
        for i in rng.permutation(n):
            ok = [x for x in instance.strategy_sets[i] if loads[x] + D[i] < gamma[x]]
            if not ok:
                break
            x = ok[int(rng.integers(len(ok)))]
            a[i] = x
            loads[x] += D[i]
        else:
            return tuple(int(x) for x in a)
    return first_fit_decreasing(instance)


def first_fit_decreasing(instance: Instance):
    """Largest VM first onto the first cloud (largest capacity first) with room."""
    gamma, D = instance.gamma, instance.loads
    loads = np.zeros(instance.num_clouds)
    a = np.zeros(instance.num_vms, dtype=np.intp)
    clouds = sorted(range(instance.num_clouds), key=lambda x: (-gamma[x], x))
    for i in sorted(range(instance.num_vms), key=lambda i: (-D[i], i)):
        for x in clouds:
            if x in instance.strategy_sets[i] and loads[x] + D[i] < gamma[x]:
                a[i] = x
                loads[x] += D[i]
                break
        else:
            raise NoFeasibleAssignment(f"first-fit-decreasing could not place VM {i}")
    return tuple(int(x) for x in a)


# -- presets ------------------------------------------------------------------

def preset_load_balancing(params: GenParams) -> Instance:
    """tau = 0, no peers; each VM carries a uniform self demand, so u_i(x) = rho(x)."""
    rng = np.random.default_rng(params.seed)
    m, n = params.m, params.n
    gamma = rng.uniform(*params.gamma_range, size=m)
    self_demand = rng.uniform(*params.d_range, size=n)
    return Instance(tau=np.zeros((m, m)), gamma=gamma, demand=np.zeros((n, n)),
                    delta=params.delta, self_demand=self_demand,
                    name=f"balance-m{m}-n{n}-s{params.seed}")


def preset_energy(params: GenParams, tau_big: float = TAU_BIG) -> Instance:
    """Every VM talks to every other with unit demand; distinct clouds are tau_big apart."""
    rng = np.random.default_rng(params.seed)
    m, n = params.m, params.n
    gamma = rng.uniform(*params.gamma_range, size=m)
    tau = np.full((m, m), float(tau_big))
    np.fill_diagonal(tau, 0.0)
    demand = np.ones((n, n))
    np.fill_diagonal(demand, 0.0)
    return Instance(tau=tau, gamma=gamma, demand=demand, delta=params.delta,
                    name=f"energy-m{m}-n{n}-s{params.seed}")


def ideal_balanced_utilization(instance: Instance) -> np.ndarray:
    """Total load over total capacity, repeated for every cloud."""
    level = float(np.sum(instance.loads)) / float(np.sum(instance.gamma))
    return np.full(instance.num_clouds, level)


class IdleClouds(NamedTuple):
    idle: int
    # False when computed by first-fit-decreasing: then ``idle`` may undercount
    exact: bool


EXACT_PACKING_MAX_VMS = 10


def min_clouds_exact(loads, gamma) -> int:
    """Fewest clouds that can host all loads (strict capacity), by DP over VM subsets."""
    loads = np.asarray(loads, dtype=float)
    n = loads.size
    if n == 0:
        return 0
    masks = np.arange(1 << n)
    bits = (masks[:, None] >> np.arange(n)) & 1
    mask_load = bits @ loads
    INF = n + 1
    dp = np.full(1 << n, INF)
    dp[0] = 0
    for cap in gamma:
        new = dp.copy()
        reachable = dp < INF
        for s in np.nonzero((mask_load < cap))[0][1:]:
            src = masks[reachable & ((masks & s) == 0)]
            tgt = src | s
            np.minimum.at(new, tgt, dp[src] + 1)
        dp = new
    best = dp[-1]
    if best >= INF:
        raise NoFeasibleAssignment("loads cannot be packed into the clouds")
    return int(best)


def min_clouds_ffd(loads, gamma) -> int:
    caps = sorted(gamma, reverse=True)
    used = np.zeros(len(caps))
    opened = set()
    for load in sorted(loads, reverse=True):
        for x, cap in enumerate(caps):
            if used[x] + load < cap:
                used[x] += load
                opened.add(x)
                break
        else:
            raise NoFeasibleAssignment("first-fit-decreasing could not pack the loads")
    return len(opened)


def ideal_idle_clouds(instance: Instance) -> IdleClouds:
    """m minus the fewest clouds able to host every VM's load.

    Exact (subset DP) for at most EXACT_PACKING_MAX_VMS VMs; otherwise
    first-fit-decreasing, which can only use too many clouds, so the idle
    count returned is then a lower bound on the ideal.
    """
    m, loads = instance.num_clouds, instance.loads
    if loads.size <= EXACT_PACKING_MAX_VMS:
        return IdleClouds(m - min_clouds_exact(loads, instance.gamma), True)
    return IdleClouds(m - min_clouds_ffd(loads, instance.gamma), False)


def oscillating_instance() -> Tuple[Instance, tuple]:
    """Two clouds, five VMs, with a start outcome inside a closed cycle of accepted moves at eta = 1.

    VMs 0 and 4 chase each other around the 4-cycle
    (0,1,0,1,0) -> (1,1,0,1,0) -> (1,1,0,1,1) -> (0,1,0,1,1) -> (0,1,0,1,0),
    and no move leaves it, so plain Flock at eta = 1 never reaches an equilibrium from there.
    """
    d = np.zeros((5, 5))
    for i, j, v in [(0, 1, 1.5), (0, 2, 0.33), (0, 3, 0.77), (0, 4, 3.0), (1, 2, 7.7), (1, 3, 7.8)]:
        d[i, j] = d[j, i] = v
    inst = Instance(tau=np.array([[0.0, 11.2], [11.2, 0.0]]), gamma=np.array([43.2, 37.9]),
                    demand=d, self_demand=np.array([0.0, 0.0, 21.65, 0.0, 0.0]),
                    name="oscillating-2x5")
    return inst, (0, 1, 0, 1, 0)
