"""Exhaustive optimum, exact-Nash verification and price of anarchy.

The enumerator evaluates social cost with its own batched formula rather
than through the protocol engine, so the two can be checked against each
other.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .errors import BudgetExceeded, NoFeasibleAssignment
from .model import (Instance, check_outcome, cloud_loads, cloud_weights, is_feasible, moved,
                    social_cost, vm_utility)

DEFAULT_BUDGET = 10 ** 7
_CHUNK = 1 << 15


class OptimumResult(NamedTuple):
    best_outcome: tuple
    best_cost: float
    feasible_count: int
    enumerated_count: int
    # smallest unregularized latency sum over the same feasible set
    min_latency_sum: float


def feasible_assignments(instance: Instance, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """All feasible assignments in lexicographic order, one per row.

    Mixed-radix expansion VM by VM; a prefix is dropped as soon as some
    cloud's running load reaches its capacity.
    """
    sizes = [len(s) for s in instance.strategy_sets]
    total = math.prod(sizes)
    if total > budget:
        raise BudgetExceeded(f"{total} assignments exceed the enumeration budget {budget}")
    n, m = instance.num_vms, instance.num_clouds
    D, gamma = instance.loads, instance.gamma
    prefixes = np.zeros((1, 0), dtype=np.int8 if m < 128 else np.int32)
    loads = np.zeros((1, m))
    for i in range(n):
        choices = np.asarray(instance.strategy_sets[i], dtype=prefixes.dtype)
        k = choices.size
        rep = np.repeat(np.arange(prefixes.shape[0]), k)
        col = np.tile(choices, prefixes.shape[0])
        new_loads = loads[rep]
        new_loads[np.arange(rep.size), col] += D[i]
        keep = new_loads[np.arange(rep.size), col] < gamma[col]
        prefixes = np.concatenate([prefixes[rep[keep]], col[keep, None]], axis=1)
        loads = new_loads[keep]
    return prefixes


def batch_costs(instance: Instance, A: np.ndarray, reg):
    """Social cost and latency sum for each row of ``A`` (rows must be feasible)."""
    A = np.asarray(A, dtype=np.intp)
    B, n = A.shape
    m = instance.num_clouds
    rows = np.arange(B)
    L = np.zeros((B, m))
    for i in range(n):
        L[rows, A[:, i]] += instance.loads[i]
    rho = instance.delta * L / (instance.gamma - L)
    rho_vm = rho[rows[:, None], A]
    U = np.empty((B, n))
    d = instance.demand
    for i in range(n):
        P = instance.peer_demand[i]
        if P == 0:
            U[:, i] = rho_vm[:, i] if instance.loads[i] > 0 else 0.0
            continue
        acc = np.zeros(B)
        for j in np.nonzero(d[i])[0]:
            acc += d[i, j] * (instance.tau[A[:, i], A[:, j]] + rho_vm[:, j])
        U[:, i] = rho_vm[:, i] + acc / P
    W = np.zeros((B, m))
    for i in range(n):
        W[rows, A[:, i]] += U[:, i]
    return (W * reg(W)).sum(axis=1), U.sum(axis=1)


def brute_force_optimum(instance: Instance, reg, budget: int = DEFAULT_BUDGET) -> OptimumResult:
    """Exact minimiser of the social cost; ties go to the lexicographically smallest assignment."""
    enumerated = math.prod(len(s) for s in instance.strategy_sets)
    if instance.num_vms == 0:
        return OptimumResult((), 0.0, 1, 1, 0.0)
    A = feasible_assignments(instance, budget)
    if A.shape[0] == 0:
        raise NoFeasibleAssignment("no assignment respects every capacity")
    best_cost, best_idx, best_lat = np.inf, -1, np.inf
    for start in range(0, A.shape[0], _CHUNK):
        costs, lat = batch_costs(instance, A[start:start + _CHUNK], reg)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost, best_idx = float(costs[k]), start + k
        best_lat = min(best_lat, float(lat.min()))
    best = tuple(int(x) for x in A[best_idx])
    return OptimumResult(best, best_cost, int(A.shape[0]), enumerated, best_lat)


def nash_deviation(instance: Instance, sigma, reg, eta: float = 1.0):
    """First (i, y) whose migration test accepts, or None.

    Every value comes from the model's scalar functions on explicitly built
    outcomes.
    """
    a = check_outcome(instance, sigma)
    w = cloud_weights(instance, a)
    for i in range(instance.num_vms):
        if instance.inert[i]:
            continue
        x = int(a[i])
        u_x = vm_utility(instance, a, i, x)
        rhs = eta * u_x * float(reg(max(w[x] - u_x, 0.0)))
        for y in instance.strategy_sets[i]:
            if y == x:
                continue
            b = moved(a, i, y)
            if not is_feasible(instance, b):
                continue
            u_y = vm_utility(instance, b, i, y)
            lhs = u_y * float(reg(w[y] + u_y))
            if lhs < rhs or (lhs == rhs and eta == 1.0):
                return i, y
    return None


def verify_nash(instance: Instance, sigma, reg, eta: float = 1.0) -> bool:
    return nash_deviation(instance, sigma, reg, eta) is None


def price_of_anarchy(instance: Instance, ne_outcome, reg,
                     optimum: Optional[OptimumResult] = None,
                     budget: int = DEFAULT_BUDGET) -> float:
    if optimum is None:
        optimum = brute_force_optimum(instance, reg, budget)
    c_ne = social_cost(instance, ne_outcome, reg)
    if optimum.best_cost == 0:
        return 1.0 if c_ne == 0 else math.inf
    return c_ne / optimum.best_cost


def count_feasible_naive(instance: Instance) -> int:
    """Feasible assignment count by plain itertools enumeration (test aid)."""
    import itertools
    return sum(1 for a in itertools.product(*instance.strategy_sets)
               if np.all(cloud_loads(instance, a) < instance.gamma))
