"""Parameter-choice rules as per-iteration Newton updates, plus stopping tests.

The discrepancy principle works in ``beta = 1/alpha`` and takes one Newton step
per GKB iteration on the Gauss lower bound ``G_k(beta) - eps^2``; the iterates
increase monotonically to the root. GCV, quasi-optimality and Reginska take one
safeguarded Newton step on ``d/dalpha P_k = 0`` for a projected functional P_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .quadkernel import (
    PhiId,
    bidiag_qr,
    eval_form,
    gauss_rule,
    gauss_rule_hat,
    gcv_trace_denominator,
    radau_rule,
    radau_rule_hat,
)

DIVISION_GUARD = 1e-30
DEFAULT_TAU = 1e-2
DEFAULT_INIT = 1e-10


class RuleKind(str, Enum):
    DP = "dp"
    GCV = "gcv"
    QO = "qo"
    REG = "reginska"


class StopRule(str, Enum):
    DP_RESIDUAL = "dp-residual"
    DP_AVERAGED = "dp-averaged"
    DP_COMBINED = "dp-combined"
    SC1 = "sc1"
    SC2 = "sc2"


VALID_STOPS = {
    RuleKind.DP: (StopRule.DP_RESIDUAL, StopRule.DP_AVERAGED, StopRule.DP_COMBINED),
    RuleKind.GCV: (StopRule.SC1,),
    RuleKind.QO: (StopRule.SC1, StopRule.SC2),
    RuleKind.REG: (StopRule.SC1, StopRule.SC2),
}

DEFAULT_STOP = {
    RuleKind.DP: StopRule.DP_RESIDUAL,
    RuleKind.GCV: StopRule.SC1,
    RuleKind.QO: StopRule.SC1,
    RuleKind.REG: StopRule.SC1,
}


class RuleError(ValueError):
    """Invalid rule configuration or violated rule hypothesis."""


def check_pairing(kind, stop):
    kind, stop = RuleKind(kind), StopRule(stop)
    if stop not in VALID_STOPS[kind]:
        allowed = ", ".join(s.value for s in VALID_STOPS[kind])
        raise RuleError(f"stop rule {stop.value!r} is not available for {kind.value!r} (allowed: {allowed})")
    return kind, stop


def k_star_for(kind, m, n, log=math.log):
    """First iteration at which Newton updates start.

    GCV waits ``ceil(3 log(min(m, n)))`` iterations (natural log by default);
    the Radau bounds behind QO and Reginska need two GKB steps.
    """
    kind = RuleKind(kind)
    if kind is RuleKind.DP:
        return 1
    if kind is RuleKind.GCV:
        return max(1, math.ceil(3 * log(min(m, n))))
    return 2


class ProjectedRules:
    """All quadrature rules available after k GKB steps, built lazily.

    Parameters
    ----------
    rho, sigma : array_like
        ``rho_1..rho_k`` and ``sigma_2..sigma_{k+1}`` (so ``Bbar_k`` is known).
    bnorm : float
        ``||b||``; the (A A^T, b) rules carry mass ``||b||^2``.
    atb_norm : float
        ``||A^T b||``; the (A^T A, A^T b) rules carry mass ``||A^T b||^2``.
    """

    def __init__(self, rho, sigma, bnorm, atb_norm):
        self.rho = np.array(rho, dtype=float)
        self.sigma = np.array(sigma, dtype=float)
        if self.rho.shape != self.sigma.shape or self.rho.size == 0:
            raise ValueError("need k >= 1 values of rho and sigma")
        self.k = self.rho.size
        self.bnorm = float(bnorm)
        self.atb_norm = float(atb_norm)

    @classmethod
    def from_factorization(cls, fact, atb_norm, k=None):
        k = fact.k if k is None else k
        return cls(fact._rho[:k], fact._sigma[:k], fact.bnorm, atb_norm)

    @cached_property
    def gauss(self):
        """k-point Gauss rule for (A A^T, b), from ``B_k``."""
        return gauss_rule(self.rho, self.sigma[:-1], self.bnorm**2)

    @cached_property
    def radau(self):
        """(k+1)-point Radau rule for (A A^T, b), from ``Bbar_k``."""
        return radau_rule(self.rho, self.sigma, self.bnorm**2)

    @cached_property
    def bhat(self):
        return bidiag_qr(self.rho, self.sigma)

    @cached_property
    def gauss_hat(self):
        """k-point Gauss rule for (A^T A, A^T b), from ``Bhat_k``."""
        return gauss_rule_hat(*self.bhat, self.atb_norm**2)

    @cached_property
    def radau_hat(self):
        """k-point Radau rule for (A^T A, A^T b), from the first k-1 columns of ``Bhat_k``."""
        return radau_rule_hat(*self.bhat, self.atb_norm**2)

    @property
    def bbar_norm2(self):
        return float(self.radau.nodes[-1])


# -- discrepancy principle ---------------------------------------------------


def dp_lower(rules, beta, epsilon):
    """``G_k(beta) = ||b||^2 e_1^T (beta T_k + I)^-2 e_1 - eps^2`` and derivatives."""
    v, d1, d2 = eval_form(rules.gauss, PhiId.DP_BETA, beta)
    return v - epsilon**2, d1, d2


def dp_upper(rules, beta, epsilon):
    """``R_{k+1}(beta)``, equal to the projected discrepancy minus eps^2."""
    v, d1, d2 = eval_form(rules.radau, PhiId.DP_BETA, beta)
    return v - epsilon**2, d1, d2


# -- other functionals -------------------------------------------------------


def gcv_objective(radau, alpha):
    """``R_{k+1}(phi_GCV1) / trace(phi_GCV2(Bbar_k Bbar_k^T))^2`` with derivatives."""
    N, N1, N2 = eval_form(radau, PhiId.GCV1, alpha)
    D, D1, D2 = gcv_trace_denominator(radau.nodes, alpha)
    P = N / D**2
    P1 = N1 / D**2 - 2.0 * N * D1 / D**3
    P2 = N2 / D**2 - 4.0 * N1 * D1 / D**3 - 2.0 * N * D2 / D**3 + 6.0 * N * D1**2 / D**4
    return P, P1, P2


def qo_objective(radau_hat, alpha):
    return eval_form(radau_hat, PhiId.QO, alpha)


def qo_lower(gauss_hat, alpha):
    return eval_form(gauss_hat, PhiId.QO, alpha)[0]


def _sqrt_product(f, g):
    # P = sqrt(f g) with chain-rule derivatives; f, g are (value, d1, d2).
    Q = f[0] * g[0]
    if not Q > 0:
        raise FloatingPointError("nonpositive radicand in Reginska functional")
    Q1 = f[1] * g[0] + f[0] * g[1]
    Q2 = f[2] * g[0] + 2.0 * f[1] * g[1] + f[0] * g[2]
    rq = math.sqrt(Q)
    return rq, Q1 / (2.0 * rq), Q2 / (2.0 * rq) - Q1**2 / (4.0 * Q * rq)


def reginska_objective(radau, radau_hat, alpha):
    """``sqrt(R_{k+1}(phi_R, AA^T, b)) * sqrt(R_k(phi_R, A^TA, A^Tb))``."""
    return _sqrt_product(eval_form(radau, PhiId.R, alpha), eval_form(radau_hat, PhiId.R, alpha))


def reginska_lower(gauss, gauss_hat, alpha):
    a = eval_form(gauss, PhiId.R, alpha)[0]
    b = eval_form(gauss_hat, PhiId.R, alpha)[0]
    if a < 0 or b < 0:
        raise FloatingPointError("negative radicand in Reginska lower bound")
    return math.sqrt(a) * math.sqrt(b)


def objective_for(kind, rules):
    """The functional P_k minimised at iteration k, as ``alpha -> (P, P', P'')``."""
    kind = RuleKind(kind)
    if kind is RuleKind.GCV:
        return lambda a: gcv_objective(rules.radau, a)
    if kind is RuleKind.QO:
        return lambda a: qo_objective(rules.radau_hat, a)
    if kind is RuleKind.REG:
        return lambda a: reginska_objective(rules.radau, rules.radau_hat, a)
    raise RuleError("the discrepancy principle has no minimised functional")


def lower_for(kind, rules):
    """Lower-bound family P_k^L used by SC2."""
    kind = RuleKind(kind)
    if kind is RuleKind.QO:
        return lambda a: qo_lower(rules.gauss_hat, a)
    if kind is RuleKind.REG:
        return lambda a: reginska_lower(rules.gauss, rules.gauss_hat, a)
    raise RuleError(f"no lower-bound family for {kind.value!r}")


# -- state and updates -------------------------------------------------------


@dataclass
class StepRecord:
    k: int
    param: float
    value: float
    d1: float
    d2: float
    rejected: bool = False
    fallback: bool = False


@dataclass
class RuleState:
    """Newton iteration state for one rule. ``param`` is beta for DP, alpha otherwise."""

    kind: RuleKind
    param: float
    k_star: int = 1
    tau: float = DEFAULT_TAU
    epsilon: float | None = None
    prev_param: float | None = None
    steps: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.kind = RuleKind(self.kind)
        if self.kind is RuleKind.DP:
            if not self.param > 0:
                raise RuleError("beta_1 must be positive")
            if self.epsilon is None or not self.epsilon > 0:
                raise RuleError("the discrepancy principle needs a positive noise bound epsilon")
        elif not self.param > 0:
            raise RuleError("alpha_1 must be positive")

    @property
    def alpha(self):
        return 1.0 / self.param if self.kind is RuleKind.DP else self.param


def dp_newton_step(state, gauss_rule_k, epsilon=None, k=None):
    """One step ``beta <- beta - G_k(beta) / G_k'(beta)`` on the Gauss lower bound.

    A step that would decrease beta can only come from rounding; it is rejected
    and flagged in the trace, keeping the sequence nondecreasing.
    """
    if state.kind is not RuleKind.DP:
        raise RuleError("dp_newton_step requires a DP state")
    eps = state.epsilon if epsilon is None else epsilon
    beta = state.param
    v, d1, d2 = eval_form(gauss_rule_k, PhiId.DP_BETA, beta)
    if state.steps == 0:
        if eps**2 >= gauss_rule_k.mass:
            raise RuleError("epsilon^2 >= ||b||^2: the noise bound exceeds the data, no discrepancy root")
        if v - eps**2 < 0:
            raise RuleError(f"G_1(beta_1) < 0 at beta_1 = {beta:g}; choose a smaller initial beta")
    G = v - eps**2
    if not (np.isfinite(G) and np.isfinite(d1)):
        raise FloatingPointError("non-finite discrepancy bound")
    rejected = False
    new = beta - G / d1 if d1 != 0 else beta
    if not new >= beta:
        new, rejected = beta, True
    state.prev_param = beta
    state.param = new
    state.steps += 1
    state.trace.append(StepRecord(k if k is not None else state.steps, new, G, d1, d2, rejected=rejected))
    return state


def dp_stop_check(state, gauss_rule_k, radau_rule_k1, which, epsilon=None):
    """Evaluate a discrepancy stopping test at the current beta.

    Returns ``(stop, metric)`` where ``stop`` is ``metric <= tau``; metrics are
    the left-hand sides divided by eps^2 so that all three compare with tau.
    """
    which = StopRule(which)
    eps2 = (state.epsilon if epsilon is None else epsilon) ** 2
    beta = state.param
    R = eval_form(radau_rule_k1, PhiId.DP_BETA, beta)[0] - eps2
    if which is StopRule.DP_RESIDUAL:
        metric = R / eps2
    else:
        G = eval_form(gauss_rule_k, PhiId.DP_BETA, beta)[0] - eps2
        avg = 0.5 * (R + G)
        if which is StopRule.DP_AVERAGED:
            metric = avg / eps2
        elif which is StopRule.DP_COMBINED:
            if abs(avg) < DIVISION_GUARD:
                metric = G / eps2 if abs(R - G) < DIVISION_GUARD else math.inf
            else:
                metric = (avg - G) / avg + G / eps2
        else:
            raise RuleError(f"{which.value!r} is not a discrepancy stopping rule")
    return bool(metric <= state.tau), float(metric)


def generic_newton_step(state, objective, k=None):
    """One safeguarded Newton step on ``P_k'(alpha) = 0``.

    The raw step is taken unless ``P_k'' <= 0``, the new point leaves
    ``(0, inf)``, or the step exceeds ``10 alpha``; then alpha moves half a decade
    downhill instead.
    """
    alpha = state.param
    P, d1, d2 = objective(alpha)
    if not all(np.isfinite((P, d1, d2))):
        raise FloatingPointError(f"non-finite objective at alpha = {alpha:g}")
    fallback = False
    if d1 == 0.0:
        new = alpha
    else:
        new = alpha - d1 / d2 if d2 > 0 else -1.0
        if d2 <= 0 or not new > 0 or abs(new - alpha) > 10.0 * alpha:
            new = alpha * 10.0 ** (-0.5 if d1 > 0 else 0.5)
            fallback = True
    state.prev_param = alpha
    state.param = new
    state.steps += 1
    state.trace.append(StepRecord(k if k is not None else state.steps, new, P, d1, d2, fallback=fallback))
    return state


def stop_sc1(state, value, d1):
    """Relative change of alpha plus relative derivative of P_k at alpha_{k+1}.

    ``value`` and ``d1`` are ``P_k(alpha_{k+1})`` and ``P_k'(alpha_{k+1})``.
    A metric of ``inf`` marks a guarded (not evaluable) test.
    """
    a1, a0 = state.param, state.prev_param
    if a0 is None or abs(value) < DIVISION_GUARD:
        return False, math.inf
    metric = abs(a1 - a0) / (0.5 * abs(a1 + a0)) + abs(d1) / abs(value)
    return bool(metric < state.tau), float(metric)


def stop_sc2(state, value, d1, lower):
    """Gap between P_k and the bound average, plus relative derivative."""
    avg = 0.5 * (value + lower)
    if abs(avg) < DIVISION_GUARD or abs(value) < DIVISION_GUARD:
        return False, math.inf
    metric = abs(value - avg) / abs(avg) + abs(d1) / abs(value)
    return bool(metric < state.tau), float(metric)
