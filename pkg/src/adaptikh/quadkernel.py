"""Gauss and Gauss-Radau rules from bidiagonal data, and the rational integrands.

A rule for the measure of ``(C, u)`` approximates ``u^T phi(C) u`` by
``sum_j w_j phi(theta_j)``, where the nodes are the eigenvalues of a small
Jacobi matrix ``J`` and ``w_j = ||u||^2 (first component of eigenvector j)^2``.
Here ``J = L L^T`` with ``L`` lower bidiagonal. ``J`` is never formed: nodes
are squared singular values of ``L`` taken from the zero-diagonal tridiagonal
form, which keeps small nodes accurate to working precision.

* Gauss, measure (A A^T, b):        ``L = B_k``
* Gauss-Radau at 0, (A A^T, b):     ``L = Bbar_{k-1}`` (k x (k-1))
* Gauss, (A^T A, A^T b):            ``L = Bhat_k``, from ``Bbar_k = Q Bhat_k^T``
* Gauss-Radau at 0, (A^T A, A^T b): first k-1 columns of ``Bhat_k``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np


class EigenConvergenceError(RuntimeError):
    pass


@numba.njit(cache=True)
def _tql_first_row(d, e, cap):
    # Implicit-shift QL on a symmetric tridiagonal matrix, accumulating only the
    # first row of the eigenvector matrix. Returns (eigenvalues, first row, status).
    n = d.shape[0]
    d = d.copy()
    ee = np.zeros(n)
    ee[: n - 1] = e
    z = np.zeros(n)
    z[0] = 1.0
    iters = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(ee[m]) + dd == dd:
                    break
                m += 1
            if m == l:
                break
            iters += 1
            if iters > cap:
                return d, z, 1
            g = (d[l + 1] - d[l]) / (2.0 * ee[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + ee[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * ee[i]
                b = c * ee[i]
                r = math.hypot(f, g)
                ee[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    ee[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                f = z[i + 1]
                z[i + 1] = s * z[i] + c * f
                z[i] = c * z[i] - s * f
            if underflow:
                continue
            d[l] -= p
            ee[l] = g
            ee[m] = 0.0
    return d, z, 0


def tridiag_eig_first(diag, off):
    """Eigenvalues (ascending) and first eigenvector components of a symmetric
    tridiagonal matrix with diagonal ``diag`` and off-diagonal ``off``."""
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    n = diag.shape[0]
    if off.shape[0] != max(n - 1, 0):
        raise ValueError("off-diagonal must have length n - 1")
    if n == 0:
        return np.zeros(0), np.zeros(0)
    vals, first, status = _tql_first_row(diag, off, 30 * n)
    if status:
        raise EigenConvergenceError(f"tridiagonal QL did not converge within {30 * n} iterations")
    order = np.argsort(vals, kind="stable")
    return vals[order], first[order]


def bidiag_gram(diag, sub):
    """Tridiagonal entries of ``L L^T`` for lower bidiagonal ``L``.

    ``L`` has ``len(diag)`` columns; ``sub[i]`` sits below ``diag[i]``. If
    ``len(sub) == len(diag)`` the matrix is tall (one extra row), otherwise square.
    """
    diag = np.asarray(diag, dtype=float)
    sub = np.asarray(sub, dtype=float)
    q = diag.shape[0]
    rows = q + 1 if sub.shape[0] == q else q
    if sub.shape[0] not in (q, q - 1):
        raise ValueError("sub-diagonal has the wrong length")
    T_diag = np.zeros(rows)
    T_diag[:q] = diag**2
    T_diag[1 : 1 + sub.shape[0]] += sub**2
    T_off = diag[: rows - 1] * sub[: rows - 1]
    return T_diag, T_off


class Flavor(str, Enum):
    GAUSS = "gauss"
    RADAU_ZERO = "radau0"


class Measure(str, Enum):
    AAT_B = "AAT_b"
    ATA_ATB = "ATA_ATb"


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    mass: float
    flavor: Flavor
    measure: Measure

    @property
    def size(self):
        return self.nodes.shape[0]


def bidiag_singular_first(diag, sub):
    """Singular values of lower bidiagonal ``L`` and the first components of its
    left singular vectors, via the zero-diagonal Golub-Kahan tridiagonal
    ``[[0, L], [L^T, 0]]`` in the order ``u_1, v_1, u_2, ...``.

    Squared singular values come out with relative accuracy, unlike the
    eigenvalues of ``L L^T`` formed explicitly. For tall ``L`` the extra left
    null direction is returned last with singular value 0.
    """
    diag = np.asarray(diag, dtype=float)
    sub = np.asarray(sub, dtype=float)
    q = diag.shape[0]
    tall = sub.shape[0] == q
    off = np.empty(2 * q - 1 + tall)
    off[0::2] = diag
    off[1::2] = sub[: off[1::2].shape[0]]
    vals, first = tridiag_eig_first(np.zeros(off.shape[0] + 1), off)
    # the top q eigenvalues are +s_i; each carries half of u's first component squared
    s = vals[-q:]
    w = 2.0 * first[-q:] ** 2
    if tall:
        w0 = _null_first_weight(diag, sub)
        w *= (1.0 - w0) / w.sum()
        s = np.concatenate([s, [0.0]])
        w = np.concatenate([w, [w0]])
    else:
        w /= w.sum()
    return np.maximum(s, 0.0), w


def _null_first_weight(diag, sub):
    # Squared first entry of the unit vector u with L^T u = 0 for tall L:
    # u_{i+1} = -d_i u_i / s_i, summed in the log domain.
    if np.any(sub == 0.0):
        return 0.0
    if np.any(diag == 0.0):
        # u vanishes after the first zero diagonal entry
        j = int(np.argmax(diag == 0.0))
        return float(1.0 / (1.0 + np.sum(np.cumprod((diag[:j] / sub[:j]) ** 2))))
    logs = np.concatenate([[0.0], 2.0 * np.cumsum(np.log(np.abs(diag)) - np.log(np.abs(sub)))])
    top = logs.max()
    return float(np.exp(-top - np.log(np.sum(np.exp(logs - top)))))


def _rule(diag, sub, mass, flavor, measure):
    s, w = bidiag_singular_first(diag, sub)
    order = np.argsort(s * s, kind="stable")
    nodes = (s * s)[order]
    if flavor is Flavor.RADAU_ZERO:
        nodes[0] = 0.0
    weights = mass * w[order]
    return QuadratureRule(nodes, weights, float(mass), flavor, measure)


def gauss_rule(diag, sub, mass, measure=Measure.AAT_B):
    """k-point Gauss rule from square lower bidiagonal ``B_k``.

    ``diag`` holds rho_1..rho_k and ``sub`` sigma_2..sigma_k.
    """
    diag = np.asarray(diag, dtype=float)
    if len(sub) != len(diag) - 1:
        raise ValueError("B_k needs k diagonal and k-1 sub-diagonal entries")
    return _rule(diag, sub, mass, Flavor.GAUSS, measure)


def radau_rule(diag, sub, mass, measure=Measure.AAT_B):
    """Gauss-Radau rule with a node at the origin from tall ``L`` (q+1 x q).

    For ``L = Bbar_{k-1}`` pass rho_1..rho_{k-1} and sigma_2..sigma_k; the rule
    has k nodes, the eigenvalues of ``L L^T``.
    """
    diag = np.asarray(diag, dtype=float)
    if len(sub) != len(diag) or len(diag) < 1:
        raise ValueError("Bbar needs q >= 1 diagonal and q sub-diagonal entries")
    return _rule(diag, sub, mass, Flavor.RADAU_ZERO, measure)


def radau_rule_from_Bbar(Bbar, mass):
    """Radau rule from a dense ``(q+1) x q`` lower bidiagonal matrix."""
    Bbar = np.asarray(Bbar, dtype=float)
    q = Bbar.shape[1]
    if Bbar.shape[0] != q + 1:
        raise ValueError("Bbar must have one more row than columns")
    return radau_rule(np.diagonal(Bbar).copy(), np.diagonal(Bbar, -1).copy(), mass)


def bidiag_qr(diag, sub):
    """Lower bidiagonal ``Bhat_k`` with ``Bbar_k = Q Bhat_k^T``.

    ``Bbar_k`` is given by ``diag`` = rho_1..rho_k, ``sub`` = sigma_2..sigma_{k+1}.
    Returns ``(hat_diag, hat_sub)`` with positive diagonal, so that
    ``Bhat Bhat^T = Bbar^T Bbar``. Uses k plane rotations.
    """
    diag = np.asarray(diag, dtype=float)
    sub = np.asarray(sub, dtype=float)
    k = diag.shape[0]
    if sub.shape[0] != k:
        raise ValueError("Bbar_k needs k diagonal and k sub-diagonal entries")
    hat_diag = np.empty(k)
    hat_sub = np.empty(max(k - 1, 0))
    gamma = diag[0]
    for i in range(k):
        r = math.hypot(gamma, sub[i])
        hat_diag[i] = r
        if i < k - 1:
            if r == 0.0:
                c, s = 1.0, 0.0
            else:
                c, s = gamma / r, sub[i] / r
            hat_sub[i] = s * diag[i + 1]
            gamma = c * diag[i + 1]
    return hat_diag, hat_sub


def gauss_rule_hat(hat_diag, hat_sub, mass):
    return gauss_rule(hat_diag, hat_sub, mass, measure=Measure.ATA_ATB)


def radau_rule_hat(hat_diag, hat_sub, mass):
    """Radau rule for (A^T A, A^T b) from the first k-1 columns of ``Bhat_k``."""
    k = len(hat_diag)
    if k < 2:
        raise ValueError("the Radau rule on A^T A needs k >= 2")
    return radau_rule(hat_diag[: k - 1], hat_sub[: k - 1], mass, measure=Measure.ATA_ATB)


class PhiId(str, Enum):
    """Rational integrands ``phi(t, s)``; the spectral parameter ``s`` is beta for
    DP_BETA and alpha otherwise. Additive constants live with the callers."""

    DP_BETA = "dp_beta"  # (beta t + 1)^-2
    DP_ALPHA = "dp_alpha"  # alpha^2 (t + alpha)^-2
    GCV1 = "gcv1"  # alpha^2 (alpha + t)^-2
    GCV2 = "gcv2"  # alpha (alpha + t)^-1
    QO = "qo"  # alpha^2 (alpha + t)^-4
    R = "r"  # alpha (alpha + t)^-2


def phi_values(phi, t, s):
    """Return ``(phi, d phi/ds, d^2 phi/ds^2)`` elementwise in t."""
    t = np.asarray(t, dtype=float)
    if phi is PhiId.DP_BETA:
        q = 1.0 / (s * t + 1.0)
        q2 = q * q
        return q2, -2.0 * t * q2 * q, 6.0 * t * t * q2 * q2
    q = 1.0 / (s + t)
    if phi in (PhiId.DP_ALPHA, PhiId.GCV1):
        q2 = q * q
        return s * s * q2, 2.0 * s * t * q2 * q, 2.0 * t * (t - 2.0 * s) * q2 * q2
    if phi is PhiId.GCV2:
        return s * q, t * q * q, -2.0 * t * q**3
    if phi is PhiId.QO:
        q4 = q**4
        return s * s * q4, 2.0 * s * (t - s) * q4 * q, (2.0 * t * t - 12.0 * s * t + 6.0 * s * s) * q4 * q * q
    if phi is PhiId.R:
        q2 = q * q
        return s * q2, (t - s) * q2 * q, (2.0 * s - 4.0 * t) * q2 * q2
    raise ValueError(f"unknown integrand {phi!r}")


def _check_param(phi, s, rule=None):
    if not np.isfinite(s):
        raise ValueError("spectral parameter must be finite")
    if phi is PhiId.DP_BETA:
        if s < 0:
            raise ValueError("beta must be nonnegative")
    elif not s > 0:
        raise ValueError("alpha must be positive")


def eval_form(rule, phi, s):
    """Evaluate ``sum_j w_j phi(theta_j, s)`` and its first two s-derivatives."""
    phi = PhiId(phi)
    _check_param(phi, s)
    v, d1, d2 = phi_values(phi, rule.nodes, s)
    w = rule.weights
    return float(w @ v), float(w @ d1), float(w @ d2)


def gcv_trace_denominator(nodes, alpha):
    """``trace(alpha (alpha I + M)^-1)`` and its alpha-derivatives, where
    ``nodes`` are the eigenvalues of ``M = Bbar_k Bbar_k^T`` (all k+1 of them,
    e.g. ``radau.nodes`` of the rule built from ``Bbar_k``)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    v, d1, d2 = phi_values(PhiId.GCV2, nodes, alpha)
    return float(v.sum()), float(d1.sum()), float(d2.sum())


def projected_tikhonov_solve(diag, sub, bnorm, alpha):
    """Solve ``min ||Bbar y - bnorm e_1||^2 + alpha ||y||^2`` for ``Bbar_k``.

    ``Bbar_k`` is given by ``diag`` = rho_1..rho_k and ``sub`` = sigma_2..sigma_{k+1}.
    The stacked matrix ``[Bbar; sqrt(alpha) I]`` is reduced to upper bidiagonal
    form with 2k plane rotations, then back-substituted: O(k) work.

    Returns ``(y, ||Bbar y - bnorm e_1||)``.
    """
    diag = np.asarray(diag, dtype=float)
    sub = np.asarray(sub, dtype=float)
    k = diag.shape[0]
    if sub.shape[0] != k:
        raise ValueError("Bbar_k needs k diagonal and k sub-diagonal entries")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    damp = math.sqrt(alpha)
    r_diag = np.empty(k)
    r_sup = np.empty(max(k - 1, 0))
    rhs = np.empty(k)
    a = diag[0]
    f = bnorm
    for i in range(k):
        if damp:
            r0 = math.hypot(a, damp)
            a, f = r0, (a / r0) * f
        r = math.hypot(a, sub[i])
        if r == 0.0:
            raise np.linalg.LinAlgError("projected Tikhonov system is singular")
        c, s = a / r, sub[i] / r
        r_diag[i] = r
        rhs[i] = c * f
        f = -s * f
        if i < k - 1:
            r_sup[i] = s * diag[i + 1]
            a = c * diag[i + 1]
    y = np.empty(k)
    y[k - 1] = rhs[k - 1] / r_diag[k - 1]
    for i in range(k - 2, -1, -1):
        y[i] = (rhs[i] - r_sup[i] * y[i + 1]) / r_diag[i]
    resid = np.empty(k + 1)
    resid[0] = diag[0] * y[0] - bnorm
    resid[1:k] = sub[: k - 1] * y[: k - 1] + diag[1:] * y[1:]
    resid[k] = sub[k - 1] * y[k - 1]
    return y, float(np.linalg.norm(resid))
