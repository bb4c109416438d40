"""Problem instance and the latency / utility / cost formulas.

An outcome (assignment) is any integer sequence ``sigma`` of length ``n`` where
``sigma[i]`` is the cloud hosting VM ``i``.  All functions here are pure in
``(instance, sigma)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInstance, InvalidOutcome, OverloadedCloud

FORMAT_NAME = "flocksim-instance"
FORMAT_VERSION = 1


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """Cloud topology, VM demand graph and processing-delay constant.

    ``tau`` is the m x m inter-cloud latency (ms), ``gamma`` the per-cloud
    capacity, ``demand`` the symmetric n x n traffic matrix.  ``self_demand``
    is intrinsic per-VM load used by the peer-less presets.  ``strategy_sets``
    defaults to every cloud for every VM.
    """

    tau: np.ndarray
    gamma: np.ndarray
    demand: np.ndarray
    delta: float = 1.0
    self_demand: Optional[np.ndarray] = None
    strategy_sets: Optional[tuple] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        tau = _frozen(self.tau)
        gamma = _frozen(self.gamma)
        demand = _frozen(self.demand)
        if tau.ndim != 2 or tau.shape[0] != tau.shape[1] or tau.shape[0] < 1:
            raise InvalidInstance("tau must be a non-empty square matrix")
        m = tau.shape[0]
        if gamma.shape != (m,):
            raise InvalidInstance(f"gamma must have length {m}")
        if demand.ndim != 2 or demand.shape[0] != demand.shape[1]:
            raise InvalidInstance("demand must be a square matrix")
        n = demand.shape[0]
        if not np.array_equal(tau, tau.T) or np.any(np.diag(tau) != 0) or np.any(tau < 0):
            raise InvalidInstance("tau must be symmetric, non-negative, zero diagonal")
        if not np.array_equal(demand, demand.T) or np.any(np.diag(demand) != 0) or np.any(demand < 0):
            raise InvalidInstance("demand must be symmetric, non-negative, zero diagonal")
        if np.any(gamma <= 0):
            raise InvalidInstance("capacities must be positive")
        if not self.delta > 0:
            raise InvalidInstance("delta must be positive")
        self_demand = np.zeros(n) if self.self_demand is None else self.self_demand
        self_demand = _frozen(self_demand)
        if self_demand.shape != (n,) or np.any(self_demand < 0):
            raise InvalidInstance(f"self_demand must be a non-negative vector of length {n}")
        if self.strategy_sets is None:
            sets = tuple(tuple(range(m)) for _ in range(n))
        else:
            sets = tuple(tuple(sorted({int(x) for x in s})) for s in self.strategy_sets)
            if len(sets) != n:
                raise InvalidInstance(f"need {n} strategy sets, got {len(sets)}")
            for i, s in enumerate(sets):
                if not s:
                    raise InvalidInstance(f"strategy set of VM {i} is empty")
                if s[0] < 0 or s[-1] >= m:
                    raise InvalidInstance(f"strategy set of VM {i} names an unknown cloud")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "self_demand", self_demand)
        object.__setattr__(self, "strategy_sets", sets)

    @property
    def num_clouds(self) -> int:
        return self.tau.shape[0]

    @property
    def num_vms(self) -> int:
        return self.demand.shape[0]

    @cached_property
    def peer_demand(self) -> np.ndarray:
        """Row sums of the demand matrix (the utility denominator)."""
        out = self.demand.sum(axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def loads(self) -> np.ndarray:
        """Per-VM load contribution: peer demand plus self demand."""
        out = self.peer_demand + self.self_demand
        out.setflags(write=False)
        return out

    @cached_property
    def inert(self) -> np.ndarray:
        """VMs with neither peers nor self demand: zero utility, never migrate."""
        out = self.loads == 0
        out.setflags(write=False)
        return out

    @cached_property
    def full_strategies(self) -> bool:
        m = self.num_clouds
        return all(len(s) == m for s in self.strategy_sets)

    def with_tau(self, tau) -> "Instance":
        return Instance(tau, self.gamma, self.demand, self.delta, self.self_demand,
                        self.strategy_sets, self.name)

    def pairs(self):
        """Communicating pairs (i, j, d_ij) with i < j."""
        ii, jj = np.nonzero(np.triu(self.demand, 1))
        return [(int(i), int(j), float(self.demand[i, j])) for i, j in zip(ii, jj)]

    def same_as(self, other: "Instance") -> bool:
        return (np.array_equal(self.tau, other.tau) and np.array_equal(self.gamma, other.gamma)
                and np.array_equal(self.demand, other.demand) and self.delta == other.delta
                and np.array_equal(self.self_demand, other.self_demand)
                and self.strategy_sets == other.strategy_sets)


# -- outcome helpers ---------------------------------------------------------

def as_assignment(instance: Instance, sigma) -> np.ndarray:
    a = np.asarray(sigma, dtype=np.intp)
    if a.shape != (instance.num_vms,):
        raise InvalidOutcome(f"assignment must have length {instance.num_vms}")
    return a


def check_outcome(instance: Instance, sigma) -> np.ndarray:
    """Validate strategy-set membership and strict feasibility; return the array."""
    a = as_assignment(instance, sigma)
    for i, x in enumerate(a):
        if int(x) not in instance.strategy_sets[i]:
            raise InvalidOutcome(f"VM {i} placed on cloud {x} outside its strategy set")
    L = cloud_loads(instance, a)
    bad = np.nonzero(L >= instance.gamma)[0]
    if bad.size:
        x = int(bad[0])
        raise OverloadedCloud(x, L[x], instance.gamma[x])
    return a


def is_feasible(instance: Instance, sigma) -> bool:
    return bool(np.all(cloud_loads(instance, sigma) < instance.gamma))


# -- loads and delays ---------------------------------------------------------

def total_demand(instance: Instance, i: int) -> float:
    return float(instance.loads[i])


def cloud_loads(instance: Instance, sigma) -> np.ndarray:
    return np.bincount(np.asarray(sigma, dtype=np.intp), weights=instance.loads,
                       minlength=instance.num_clouds).astype(float)


def cloud_load(instance: Instance, sigma, x: int) -> float:
    return float(cloud_loads(instance, sigma)[x])


def delays_from_loads(instance: Instance, loads: np.ndarray) -> np.ndarray:
    """Vector of processing delays; ``inf`` where a cloud is overloaded."""
    gamma = instance.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = instance.delta * loads / (gamma - loads)
    return np.where(loads < gamma, rho, np.inf)


def processing_delay(instance: Instance, sigma, x: int) -> float:
    L = cloud_load(instance, sigma, x)
    g = instance.gamma[x]
    if L >= g:
        raise OverloadedCloud(x, L, g)
    return instance.delta * L / (g - L)


def latency_matrix(instance: Instance, rho: np.ndarray) -> np.ndarray:
    # rho[x] + rho[y] is commutative, which keeps l(x, y) == l(y, x) bit for bit
    return instance.tau + (rho[:, None] + rho[None, :])


def pair_latency(instance: Instance, sigma, x: int, y: int) -> float:
    rx = processing_delay(instance, sigma, x)
    ry = processing_delay(instance, sigma, y)
    return float(instance.tau[x, y] + (rx + ry))


# -- utilities ----------------------------------------------------------------

def _utility(instance: Instance, a: np.ndarray, rho: np.ndarray, i: int, x: int) -> float:
    P = instance.peer_demand[i]
    if P == 0:
        return float(rho[x]) if instance.loads[i] > 0 else 0.0
    lat = instance.tau[x, a] + (rho[x] + rho[a])
    return float(np.sum(instance.demand[i] * lat) / P)


def moved(sigma, i: int, y: int) -> np.ndarray:
    a = np.array(sigma, dtype=np.intp, copy=True)
    a[i] = y
    return a


def vm_utility(instance: Instance, sigma, i: int, x: int, anticipate: bool = False) -> float:
    """Demand-weighted mean latency of VM ``i`` to its peers if hosted on ``x``.

    With ``anticipate`` the delays are those of the outcome where ``i`` has
    moved to ``x``; peers stay put.  A VM without peers gets ``rho(x)``, or 0
    when it carries no load at all (such a VM is inert and never migrates).
    Raises OverloadedCloud if a cloud the VM touches is overloaded.
    """
    a = moved(sigma, i, x) if anticipate else as_assignment(instance, sigma)
    rho = delays_from_loads(instance, cloud_loads(instance, a))
    u = _utility(instance, a, rho, i, x)
    if not np.isfinite(u):
        L = cloud_loads(instance, a)
        x_bad = int(np.nonzero(L >= instance.gamma)[0][0])
        raise OverloadedCloud(x_bad, L[x_bad], instance.gamma[x_bad])
    return u


def utilities_from_delays(instance: Instance, a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """u_i(x_i) for every VM given the delay vector of outcome ``a``."""
    lat = instance.tau[np.ix_(a, a)] + (rho[a][:, None] + rho[a][None, :])
    P = instance.peer_demand
    num = (instance.demand * lat).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fallback = np.where(instance.loads > 0, rho[a], 0.0)
        u = np.where(P > 0, num / np.where(P > 0, P, 1.0), fallback)
    return u


def utilities(instance: Instance, sigma) -> np.ndarray:
    a = check_outcome(instance, sigma)
    rho = delays_from_loads(instance, cloud_loads(instance, a))
    return utilities_from_delays(instance, a, rho)


def cloud_weights(instance: Instance, sigma) -> np.ndarray:
    a = as_assignment(instance, sigma)
    return np.bincount(a, weights=utilities(instance, a), minlength=instance.num_clouds)


def cloud_weight(instance: Instance, sigma, x: int) -> float:
    return float(cloud_weights(instance, sigma)[x])


def cost_from_weights(w: np.ndarray, reg) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.sum(w * reg(w)))


def social_cost(instance: Instance, sigma, reg) -> float:
    """Sum over clouds of w_x f(w_x)."""
    if instance.num_vms == 0:
        return 0.0
    return cost_from_weights(cloud_weights(instance, sigma), reg)


def latency_sum(instance: Instance, sigma) -> float:
    """Unregularized objective: sum of u_i(x_i)."""
    if instance.num_vms == 0:
        return 0.0
    return float(np.sum(utilities(instance, sigma)))


def utilization(instance: Instance, sigma) -> np.ndarray:
    return cloud_loads(instance, sigma) / instance.gamma


def idle_clouds(instance: Instance, sigma) -> int:
    return int(np.sum(cloud_loads(instance, sigma) == 0))


# -- serialization ------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    m = instance.num_clouds
    sets = None if instance.full_strategies else [list(s) for s in instance.strategy_sets]
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": instance.name,
        "num_clouds": m,
        "num_vms": instance.num_vms,
        "delta": instance.delta,
        "gamma": instance.gamma.tolist(),
        "tau_lower": [instance.tau[r, :r].tolist() for r in range(1, m)],
        "demand": [[i, j, d] for i, j, d in instance.pairs()],
        "self_demand": instance.self_demand.tolist(),
        "strategy_sets": sets,
    }


def instance_from_dict(doc: dict) -> Instance:
    if doc.get("format") != FORMAT_NAME:
        raise InvalidInstance(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise InvalidInstance(f"unsupported version {doc.get('version')}")
    m, n = int(doc["num_clouds"]), int(doc["num_vms"])
    tau = np.zeros((m, m))
    rows = doc["tau_lower"]
    if len(rows) != m - 1:
        raise InvalidInstance("tau_lower must have num_clouds - 1 rows")
    for r, row in enumerate(rows, start=1):
        if len(row) != r:
            raise InvalidInstance(f"tau_lower row {r} must have {r} entries")
        tau[r, :r] = row
        tau[:r, r] = row
    demand = np.zeros((n, n))
    for i, j, d in doc.get("demand", []):
        i, j = int(i), int(j)
        if i == j:
            raise InvalidInstance("self-pairs are not allowed in demand")
        demand[i, j] = demand[j, i] = float(d)
    return Instance(tau=tau, gamma=doc["gamma"], demand=demand, delta=doc.get("delta", 1.0),
                    self_demand=doc.get("self_demand"), strategy_sets=doc.get("strategy_sets"),
                    name=doc.get("name", ""))


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=1) + "\n")


def load_instance(path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def e1_instance() -> Instance:
    """Two clouds 10 ms apart, capacity 100 each, two VMs exchanging 5 units."""
    return Instance(tau=[[0.0, 10.0], [10.0, 0.0]], gamma=[100.0, 100.0],
                    demand=[[0.0, 5.0], [5.0, 0.0]], delta=1.0, name="E1")
