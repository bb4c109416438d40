"""Migration-cost accounting: forgetting averages, latency penalty, adaptive eta."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import Instance, cloud_loads, delays_from_loads, moved

VARIANTS = ("none", "penalty", "adaptive-eta")


@dataclass(frozen=True)
class CostState:
    R: np.ndarray
    beta: np.ndarray
    coeff: np.ndarray

    def __post_init__(self):
        for name in ("R", "beta", "coeff"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.R.shape == self.beta.shape == self.coeff.shape):
            raise ValueError("R, beta and coeff must have equal length")
        if np.any((self.R < 0) | (self.R > 1)) or np.any((self.beta < 0) | (self.beta > 1)):
            raise ValueError("R and beta must lie in [0, 1]")
        if np.any(self.coeff < 0):
            raise ValueError("cost coefficients must be non-negative")

    @classmethod
    def fresh(cls, n: int, beta: float = 0.9, coeff: float = 10.0) -> "CostState":
        return cls(np.zeros(n), np.full(n, beta), np.full(n, coeff))


def update_R(state: CostState, migrated) -> CostState:
    g = np.asarray(migrated, dtype=float)
    R = state.beta * state.R + (1.0 - state.beta) * g
    return replace(state, R=np.clip(R, 0.0, 1.0))


def migration_cost(state: CostState, i: int) -> float:
    """Linear cost c_i * R_i, in ms."""
    return float(state.coeff[i] * state.R[i])


def migration_costs(state: CostState) -> np.ndarray:
    return state.coeff * state.R


def penalized_latency(instance: Instance, sigma, state: CostState, i: int, y: int, j: int) -> float:
    """l(y, x_j) + C_i + C_j evaluated with VM ``i`` moved to ``y``."""
    a = moved(sigma, i, y)
    rho = delays_from_loads(instance, cloud_loads(instance, a))
    xj = a[j]
    base = instance.tau[y, xj] + (rho[y] + rho[xj])
    return float(base + (migration_cost(state, i) + migration_cost(state, j)))


def utility_penalty(instance: Instance, state: CostState, i: int) -> float:
    """Extra target-side utility from penalized latencies: sum_j d_ij (C_i + C_j) / sum_j d_ij."""
    P = instance.peer_demand[i]
    c = migration_costs(state)
    if P == 0:
        return float(c[i])
    return float(np.sum(instance.demand[i] * (c[i] + c)) / P)


def adaptive_eta(state: CostState, i: int) -> float:
    return float(np.exp(-state.R[i]))
