"""Regularization function f(w) = exp(-1/(w + a)) and price-of-anarchy bounds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateBracket, InvalidBound, NegativeWeight


@dataclass(frozen=True)
class RegFn:
    """Monotone map of cloud weight into (alpha, 1), alpha = exp(-1/a).

    Calling the object evaluates f elementwise without argument checks (the
    engine's hot path); ``eval_f`` is the checked scalar entry point.
    Subclass and override ``__call__`` and ``alpha`` to plug in another
    monotone regularization.
    """

    a: float = 9.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("shift constant a must be positive")

    @property
    def alpha(self) -> float:
        return float(np.exp(-1.0 / self.a))

    def __call__(self, w):
        return np.exp(-1.0 / (np.asarray(w, dtype=float) + self.a))


def eval_f(reg: RegFn, w: float) -> float:
    if w < 0:
        raise NegativeWeight(f"weight must be non-negative, got {w}")
    return float(reg(w))


class PoaBound(NamedTuple):
    lam: float
    epsilon: float
    w_min: float
    w_max: float


class ConditionCheck(NamedTuple):
    passed: bool
    # point of largest violation (or smallest slack when passed)
    w: float
    w_star: float
    slack: float


def lemma_grid(w_lo: float, w_max: float, points: int = 400):
    """Log-spaced grid on [w_lo, w_max]; the w axis additionally holds 0."""
    if not 0 < w_lo <= w_max:
        raise ValueError("need 0 < w_lo <= w_max")
    ws = np.geomspace(w_lo, w_max, points)
    return np.concatenate(([0.0], ws)), ws


def check_lemma1_condition(reg, lam: float, epsilon: float, w_max: float,
                           w_lo: float | None = None, points: int = 400,
                           rtol: float = 1e-12) -> ConditionCheck:
    """Check w* f(w + w*) <= lam w* f(w*) + epsilon w f(w) on a grid.

    w runs over {0} and ``points`` log-spaced values in [w_lo, w_max]; w* over
    the same log-spaced values.  ``w_lo`` defaults to ``w_max * 1e-6``.  The
    slack is normalised by the right-hand side; ``rtol`` absorbs round-off
    at points where the inequality is tight.
    """
    if not epsilon < 1:
        raise InvalidBound("epsilon must be < 1")
    if lam <= 1 - epsilon:
        raise InvalidBound(f"need lambda > 1 - epsilon, got lambda={lam}, epsilon={epsilon}")
    if w_lo is None:
        w_lo = w_max * 1e-6
    w_axis, ws_axis = lemma_grid(w_lo, w_max, points)
    W, WS = np.meshgrid(w_axis, ws_axis, indexing="ij")
    lhs = WS * reg(W + WS)
    rhs = lam * WS * reg(WS) + epsilon * W * reg(W)
    slack = (rhs - lhs) / rhs
    k = np.unravel_index(np.argmin(slack), slack.shape)
    worst = float(slack[k])
    return ConditionCheck(worst >= -rtol, float(W[k]), float(WS[k]), worst)


def theorem2_lambda(reg, epsilon: float, w_min: float, w_max: float) -> float:
    """lambda = f(M + m)/f(m) * (1 - eps * M f(M) / (m f(M + m))), m = w_min, M = w_max.

    This is the tight value at the bracket corner (w = M, w* = m).
    """
    if not 0 < w_min <= w_max:
        raise ValueError("need 0 < w_min <= w_max")
    f_sum = float(reg(w_max + w_min))
    bracket = 1.0 - epsilon * w_max * float(reg(w_max)) / (w_min * f_sum)
    if bracket <= 0:
        raise DegenerateBracket(f"bracket factor {bracket:g} <= 0; reduce epsilon")
    return f_sum / float(reg(w_min)) * bracket


def poa_bound(bound: PoaBound) -> float:
    # lambda = 1 - epsilon is admitted here: it is the perfect-efficiency limit
    if not bound.epsilon < 1 or bound.lam < 1 - bound.epsilon:
        raise InvalidBound("need epsilon < 1 and lambda >= 1 - epsilon")
    return bound.lam / (1.0 - bound.epsilon)
