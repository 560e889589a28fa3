"""Solvers: the interlaced adaptive method, the hybrid baseline, and a dense SVD oracle."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .gkb import BreakdownSignal, gkb_init
from .quadkernel import PhiId, eval_form, projected_tikhonov_solve
from .rules import (
    DEFAULT_INIT,
    DEFAULT_STOP,
    DEFAULT_TAU,
    ProjectedRules,
    RuleError,
    RuleKind,
    RuleState,
    StopRule,
    check_pairing,
    dp_lower,
    dp_newton_step,
    dp_stop_check,
    dp_upper,
    generic_newton_step,
    k_star_for,
    lower_for,
    objective_for,
    stop_sc1,
    stop_sc2,
)

DEFAULT_MAXIT = 200
DENSE_CAP = 4096
MAXIT = "maxit"
BREAKDOWN = "breakdown"
STABILIZED = "stabilized"


@dataclass
class IterationRecord:
    """Diagnostics for one outer iteration.

    ``alpha`` is the parameter produced at this iteration (alpha_{k+1} in the
    interlaced method); ``value`` and ``d1`` are the driving functional and its
    derivative there (in beta for the discrepancy principle).
    """

    k: int
    dim: int
    alpha: float
    value: float
    d1: float
    metric: float
    rre: float | None
    wall_ms: float
    rejected: bool = False
    fallback: bool = False


@dataclass
class SolveReport:
    x: np.ndarray
    alpha_final: float
    k_final: int
    stopped_by: str
    rule: RuleKind
    trace: list = field(default_factory=list)
    breakdown: int | None = None
    factorization: object = None
    atb_norm: float = float("nan")

    @property
    def alphas(self):
        return np.array([r.alpha for r in self.trace])

    @property
    def rres(self):
        return np.array([np.nan if r.rre is None else r.rre for r in self.trace])


def rre(x, x_exact):
    """Relative restoration error ``||x - x_exact|| / ||x_exact||``."""
    nx = np.linalg.norm(x_exact)
    if nx == 0:
        raise ValueError("exact solution is zero")
    return float(np.linalg.norm(np.asarray(x) - x_exact) / nx)


def _rhs(problem, b):
    return problem.b_noisy if b is None else np.asarray(b, dtype=float)


def _projected_solution(fact, dim, alpha):
    y, _ = projected_tikhonov_solve(fact._rho[:dim], fact._sigma[:dim], fact.bnorm, alpha)
    return fact._V[:, :dim] @ y


class _Krylov:
    """Factorization plus cached rules per subspace dimension."""

    def __init__(self, op, b, reorth):
        self.fact = gkb_init(op, b, reorth=reorth)
        self.atb_norm = float(np.linalg.norm(op.apply_adjoint(b)))
        self.breakdown = None
        self._rules = None

    def advance(self):
        f = self.fact
        if not f.exhausted:
            try:
                f.step()
            except BreakdownSignal as sig:
                self.breakdown = sig.index
        if f.k == 0:
            raise RuntimeError("A^T b vanishes: the Krylov space is empty")
        if self._rules is None or self._rules.k != f.k:
            self._rules = ProjectedRules.from_factorization(f, self.atb_norm)
        return self._rules


def adaptive_solve(
    problem,
    rule_kind,
    stop_rule=None,
    tau=DEFAULT_TAU,
    maxit=DEFAULT_MAXIT,
    init=DEFAULT_INIT,
    *,
    epsilon=None,
    b=None,
    reorth=True,
    k_star=None,
    log=math.log,
    track_rre=True,
):
    """Interlace one GKB step with one Newton update per iteration.

    ``init`` is beta_1 for the discrepancy principle and alpha_1 otherwise. The
    final solution is ``x_k(alpha_{k+1}) = V_k y_k(alpha_{k+1})``. Once the Krylov
    space is exhausted (breakdown or k = min(m, n)) the Newton updates continue
    on the final, exact rules.
    """
    kind = RuleKind(rule_kind)
    stop = DEFAULT_STOP[kind] if stop_rule is None else StopRule(stop_rule)
    check_pairing(kind, stop)
    op = problem.operator
    b = _rhs(problem, b)
    eps = problem.epsilon if epsilon is None else epsilon
    if k_star is None:
        k_star = k_star_for(kind, op.m, op.n, log)
    if maxit < k_star + 1:
        raise RuleError(f"maxit must be at least k* + 1 = {k_star + 1}")
    state = RuleState(kind, init, k_star=k_star, tau=tau, epsilon=eps if kind is RuleKind.DP else None)
    kry = _Krylov(op, b, reorth)
    x_exact = problem.x_exact if track_rre else None
    trace = []
    stopped_by = MAXIT

    for k in range(1, maxit + 1):
        t0 = time.perf_counter()
        rules = kry.advance()
        dim = rules.k
        if kry.fact.exhausted and dim < k_star:
            stopped_by = BREAKDOWN
            break
        value = d1 = metric = math.nan
        stopping = False
        rec = None
        if k >= k_star:
            if kind is RuleKind.DP:
                # once the space is exhausted the Radau rule is exact; Gauss stays
                # short of the node at zero when b has a part outside range(A)
                exact = kry.fact.exhausted
                dp_newton_step(state, rules.radau if exact else rules.gauss, k=k)
                rec = state.trace[-1]
                value, d1 = dp_lower(rules, state.param, eps)[:2]
                stopping, metric = dp_stop_check(state, rules.gauss, rules.radau, stop)
            else:
                obj = objective_for(kind, rules)
                generic_newton_step(state, obj, k=k)
                rec = state.trace[-1]
                value, d1, _ = obj(state.param)
                if k >= k_star + 1:
                    if stop is StopRule.SC1:
                        stopping, metric = stop_sc1(state, value, d1)
                    else:
                        lower = lower_for(kind, rules)(state.param)
                        stopping, metric = stop_sc2(state, value, d1, lower)
        r = None
        if x_exact is not None:
            r = rre(_projected_solution(kry.fact, dim, state.alpha), x_exact)
        trace.append(
            IterationRecord(
                k=k,
                dim=dim,
                alpha=state.alpha,
                value=float(value),
                d1=float(d1),
                metric=float(metric),
                rre=r,
                wall_ms=1e3 * (time.perf_counter() - t0),
                rejected=bool(rec and rec.rejected),
                fallback=bool(rec and rec.fallback),
            )
        )
        if stopping:
            stopped_by = stop.value
            break

    dim = kry.fact.k
    alpha = state.alpha
    x = _projected_solution(kry.fact, dim, alpha)
    return SolveReport(
        x=x,
        alpha_final=alpha,
        k_final=len(trace) if trace else dim,
        stopped_by=stopped_by,
        rule=kind,
        trace=trace,
        breakdown=kry.breakdown,
        factorization=kry.fact,
        atb_norm=kry.atb_norm,
    )


# -- hybrid baseline ---------------------------------------------------------


def _refine_minimum(obj, lo, hi, x0, rtol=1e-8, maxiter=100):
    # Newton on P'(alpha) = 0 kept inside a sign-change bracket [lo, hi].
    d_lo, d_hi = obj(lo)[1], obj(hi)[1]
    if not (d_lo < 0 < d_hi):
        return x0
    x = x0 if lo < x0 < hi else math.sqrt(lo * hi)
    for _ in range(maxiter):
        _, d1, d2 = obj(x)
        if d1 == 0:
            return x
        if d1 < 0:
            lo = x
        else:
            hi = x
        new = x - d1 / d2 if d2 > 0 else -1.0
        if not lo < new < hi:
            new = math.sqrt(lo * hi)
        if abs(new - x) <= rtol * x:
            return new
        x = new
    return x


def select_alpha(kind, rules, alpha_min=DEFAULT_INIT, grid=50, prev=None):
    """Minimise the projected functional P_k over ``[alpha_min, ||Bbar_k||^2]``.

    A logarithmic grid picks the best sample; Newton refinement then polishes it
    within the neighbouring grid cells. The previous selection is refined too
    and kept if it gives a smaller value.
    """
    obj = objective_for(kind, rules)
    hi = max(rules.bbar_norm2, alpha_min * 10)
    alphas = np.logspace(math.log10(alpha_min), math.log10(hi), grid)
    vals = np.array([obj(a)[0] for a in alphas])
    i = int(np.argmin(vals))
    cands = []
    if 0 < i < grid - 1:
        cands.append(_refine_minimum(obj, alphas[i - 1], alphas[i + 1], alphas[i]))
    else:
        cands.append(alphas[i])
    if prev is not None and alphas[0] < prev < alphas[-1]:
        j = int(np.searchsorted(alphas, prev))
        cands.append(_refine_minimum(obj, alphas[max(j - 2, 0)], alphas[min(j + 1, grid - 1)], prev))
    return min(cands, key=lambda a: obj(a)[0])


def dp_projected_root(rules, epsilon, beta0=0.0, beta_max=1.0 / DEFAULT_INIT, rtol=1e-8, maxiter=100):
    """Root in beta of the projected discrepancy ``R_{k+1}(beta) = 0``.

    The function is convex and decreasing, so Newton from the left converges
    monotonically. If the projected residual cannot reach epsilon, ``beta_max``.
    """
    if dp_upper(rules, beta_max, epsilon)[0] >= 0:
        return beta_max
    beta = beta0 if dp_upper(rules, beta0, epsilon)[0] >= 0 else 0.0
    for _ in range(maxiter):
        R, d1, _ = dp_upper(rules, beta, epsilon)
        new = beta - R / d1
        if new <= beta or abs(new - beta) <= rtol * new:
            return min(max(new, beta), beta_max)
        beta = new
    return min(beta, beta_max)


def hybrid_solve(
    problem,
    rule_kind,
    tau_outer=DEFAULT_TAU,
    maxit=DEFAULT_MAXIT,
    *,
    epsilon=None,
    b=None,
    reorth=True,
    alpha_min=DEFAULT_INIT,
    grid=50,
    window=3,
    track_rre=True,
):
    """Project-then-regularize baseline: solve the parameter problem at every k.

    The outer loop stops once alpha_k changed by at most ``tau_outer`` (relative)
    over ``window`` consecutive iterations; ``tau_outer=None`` runs to ``maxit``.
    """
    kind = RuleKind(rule_kind)
    op = problem.operator
    b = _rhs(problem, b)
    eps = problem.epsilon if epsilon is None else epsilon
    if kind is RuleKind.DP and not (eps and eps > 0):
        raise RuleError("the discrepancy principle needs a positive noise bound epsilon")
    kry = _Krylov(op, b, reorth)
    k_min = 2 if kind in (RuleKind.QO, RuleKind.REG) else 1
    x_exact = problem.x_exact if track_rre else None
    trace = []
    stopped_by = MAXIT
    alpha = prev = None
    beta = 0.0
    stable = 0

    for k in range(1, maxit + 1):
        t0 = time.perf_counter()
        at_end = kry.fact.exhausted
        rules = kry.advance()
        dim = rules.k
        if at_end or (kry.fact.exhausted and dim < k_min):
            stopped_by = BREAKDOWN
            break
        if dim < k_min:
            continue
        solved = True
        if kind is RuleKind.DP:
            beta = dp_projected_root(rules, eps, beta0=beta, beta_max=1.0 / alpha_min)
            alpha = 1.0 / beta
            value, d1 = dp_upper(rules, beta, eps)[:2]
            solved = beta < 1.0 / alpha_min
        else:
            alpha = select_alpha(kind, rules, alpha_min=alpha_min, grid=grid, prev=prev)
            value, d1, _ = objective_for(kind, rules)(alpha)
        change = math.inf if prev is None else abs(alpha - prev) / abs(prev)
        prev = alpha
        r = None if x_exact is None else rre(_projected_solution(kry.fact, dim, alpha), x_exact)
        trace.append(IterationRecord(k, dim, alpha, value, d1, change, r, 1e3 * (time.perf_counter() - t0)))
        # no projected DP root yet: alpha sits at alpha_min and is not a selection
        converged = solved and tau_outer is not None and change <= tau_outer
        stable = stable + 1 if converged else 0
        if stable >= window:
            stopped_by = STABILIZED
            break

    if alpha is None:
        raise RuntimeError("hybrid method selected no parameter before the Krylov space ran out")
    dim = trace[-1].dim
    return SolveReport(
        x=_projected_solution(kry.fact, dim, alpha),
        alpha_final=alpha,
        k_final=trace[-1].k,
        stopped_by=stopped_by,
        rule=kind,
        trace=trace,
        breakdown=kry.breakdown,
        factorization=kry.fact,
        atb_norm=kry.atb_norm,
    )


# -- dense oracle ------------------------------------------------------------


@dataclass
class OracleBundle:
    """Closed-form functionals from a thin SVD ``A = U diag(s) V^T``.

    ``beta = U^T b``; ``b_perp2`` is the squared norm of the part of b outside
    range(U), which sits at eigenvalue 0 of ``A A^T``.
    """

    s: np.ndarray
    U: np.ndarray
    Vt: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    b_perp2: float
    m: int
    epsilon: float
    x_exact: np.ndarray | None = None

    def quadform_aat(self, phi, param):
        v = _phi_scalar(phi, self.s**2, param)
        v0 = _phi_scalar(phi, np.zeros(1), param)[0]
        return float(v @ self.beta**2 + v0 * self.b_perp2)

    def quadform_ata(self, phi, param):
        v = _phi_scalar(phi, self.s**2, param)
        return float(v @ (self.s * self.beta) ** 2)

    def x(self, alpha):
        return self.Vt.T @ (self.s * self.beta / (self.s**2 + alpha))

    def residual2(self, alpha):
        return self.quadform_aat(PhiId.GCV1, alpha)

    def dp(self, beta):
        """``b^T (beta A A^T + I)^-2 b - eps^2``."""
        return self.quadform_aat(PhiId.DP_BETA, beta) - self.epsilon**2

    def gcv_trace(self, alpha):
        return float((self.m - self.s.size) + np.sum(alpha / (alpha + self.s**2)))

    def gcv(self, alpha):
        return self.residual2(alpha) / self.gcv_trace(alpha) ** 2

    def qo(self, alpha):
        return self.quadform_ata(PhiId.QO, alpha)

    def reginska(self, alpha):
        xn2 = float(np.sum((self.s * self.beta / (self.s**2 + alpha)) ** 2))
        return math.sqrt(self.residual2(alpha)) * math.sqrt(xn2)

    def rre(self, alpha):
        if self.x_exact is None:
            raise ValueError("no exact solution attached")
        return rre(self.x(alpha), self.x_exact)

    def dp_root(self, rtol=1e-12, maxiter=500):
        """Root beta* of ``dp``: bracket by doubling, then Newton with bisection."""
        eps2 = self.epsilon**2
        if not 0 < eps2 < float(self.b @ self.b):
            raise ValueError("need 0 < eps^2 < ||b||^2")
        if self.b_perp2 >= eps2:
            raise ValueError("residual can never reach epsilon: no discrepancy root")
        lo, hi = 0.0, 1.0
        while self.dp(hi) > 0:
            lo, hi = hi, 2 * hi
        beta = lo
        for _ in range(maxiter):
            f = self.dp(beta)
            if f > 0:
                lo = beta
            else:
                hi = beta
            t = self.s**2
            df = float(np.sum(-2 * t * self.beta**2 / (beta * t + 1) ** 3))
            new = beta - f / df if df < 0 else 0.5 * (lo + hi)
            if not lo <= new <= hi:
                new = 0.5 * (lo + hi)
            if abs(new - beta) <= rtol * max(new, np.finfo(float).tiny):
                return new
            beta = new
        return beta


def _phi_scalar(phi, t, param):
    from .quadkernel import phi_values

    return phi_values(PhiId(phi), t, param)[0]


def svd_oracle(problem, cap=DENSE_CAP, epsilon=None, b=None):
    """Dense SVD of the operator with closed-form parameter-choice functionals."""
    op = problem.operator
    if min(op.m, op.n) > cap:
        raise ValueError(f"dense oracle limited to min(m, n) <= {cap}")
    A = op.to_dense()
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    b = _rhs(problem, b)
    beta = U.T @ b
    b_perp = b - U @ beta
    return OracleBundle(
        s=s,
        U=U,
        Vt=Vt,
        b=b,
        beta=beta,
        b_perp2=float(b_perp @ b_perp),
        m=op.m,
        epsilon=problem.epsilon if epsilon is None else epsilon,
        x_exact=problem.x_exact,
    )


# -- surfaces ----------------------------------------------------------------


def solutions_grid(fact, k, alphas):
    """Columns ``x_k(alpha)`` for every alpha in ``alphas``."""
    Y = np.column_stack(
        [projected_tikhonov_solve(fact._rho[:k], fact._sigma[:k], fact.bnorm, a)[0] for a in alphas]
    )
    return fact._V[:, :k] @ Y


def error_surface_row(fact, k, alphas, x_exact):
    X = solutions_grid(fact, k, alphas)
    return np.linalg.norm(X - x_exact[:, None], axis=0) / np.linalg.norm(x_exact)


def functional_surface_row(kind, rules, alphas):
    """Higher-level surface values at one k: the driving functional per alpha.

    For the discrepancy principle the projected residual ``||b - A x_k(alpha)||^2``
    is reported; QO and Reginska are undefined (nan) for k < 2.
    """
    kind = RuleKind(kind)
    if kind is RuleKind.DP:
        return np.array([eval_form(rules.radau, PhiId.GCV1, a)[0] for a in alphas])
    if kind in (RuleKind.QO, RuleKind.REG) and rules.k < 2:
        return np.full(len(alphas), np.nan)
    obj = objective_for(kind, rules)
    return np.array([obj(a)[0] for a in alphas])


def grid_optimal(fact, kmax, alphas, x_exact):
    """Per k, the sampled alpha minimising the RRE, and that RRE."""
    kmax = min(kmax, fact.k)
    best_alpha = np.empty(kmax)
    best_rre = np.empty(kmax)
    for k in range(1, kmax + 1):
        row = error_surface_row(fact, k, alphas, x_exact)
        i = int(np.argmin(row))
        best_alpha[k - 1], best_rre[k - 1] = alphas[i], row[i]
    return best_alpha, best_rre
