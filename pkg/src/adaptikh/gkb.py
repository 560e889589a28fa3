"""Golub-Kahan bidiagonalization.

After k steps the factorization satisfies

    A V_k = U_{k+1} Bbar_k,        A^T U_k = V_k B_k^T,

with ``B_k`` lower bidiagonal (``rho_1..rho_k`` on the diagonal,
``sigma_2..sigma_k`` below it) and ``Bbar_k = [B_k; sigma_{k+1} e_k^T]``.
"""

from __future__ import annotations

import numpy as np

from .problems import opnorm_estimate

TOL_BREAKDOWN = 1e-12


class BreakdownSignal(Exception):
    """Raised by :meth:`BidiagFactorization.step` when the Krylov space is exhausted.

    This is not a failure: ``factorization`` holds every step still usable and
    ``index`` is the step at which a normalization coefficient vanished.
    """

    def __init__(self, index, factorization, which):
        self.index = index
        self.factorization = factorization
        self.which = which
        super().__init__(f"GKB breakdown at step {index} ({which} vanished)")


class BidiagFactorization:
    """Incremental GKB state.

    Use :func:`gkb_init` to construct. ``U`` has ``k+1`` columns and ``V`` has
    ``k``; ``rho[i]`` is rho_{i+1} and ``sigma[i]`` is sigma_{i+2}.
    """

    def __init__(self, op, b, reorth=True, tol_breakdown=TOL_BREAKDOWN, opnorm=None):
        b = np.asarray(b, dtype=float)
        bnorm = float(np.linalg.norm(b))
        if not bnorm > 0:
            raise ValueError("right-hand side must be nonzero")
        self.op = op
        self.reorth = bool(reorth)
        self.bnorm = bnorm
        self.opnorm = float(opnorm_estimate(op) if opnorm is None else opnorm)
        self.tol = tol_breakdown * max(self.opnorm, np.finfo(float).tiny)
        self.p = min(op.m, op.n)
        cap = self.p + 1
        self._U = np.zeros((op.m, cap + 1))
        self._V = np.zeros((op.n, cap))
        self._U[:, 0] = b / bnorm
        self._rho = np.zeros(cap)
        self._sigma = np.zeros(cap)
        self.k = 0
        self.breakdown = None

    @property
    def U(self):
        return self._U[:, : self.k + 1]

    @property
    def V(self):
        return self._V[:, : self.k]

    @property
    def rho(self):
        return self._rho[: self.k]

    @property
    def sigma(self):
        return self._sigma[: self.k]

    @property
    def exhausted(self):
        return self.breakdown is not None or self.k >= self.p

    def _orthogonalize(self, w, basis):
        if self.reorth and basis.shape[1]:
            w -= basis @ (basis.T @ w)
        return w

    def step(self):
        """Advance one step; raise :class:`BreakdownSignal` if the space is exhausted."""
        if self.breakdown is not None:
            raise RuntimeError("factorization already broke down")
        if self.k >= self.p:
            raise ValueError(f"cannot exceed min(m, n) = {self.p} steps")
        k = self.k
        u = self._U[:, k]
        v = self.op.apply_adjoint(u)
        if k > 0:
            v -= self._sigma[k - 1] * self._V[:, k - 1]
        v = self._orthogonalize(v, self._V[:, :k])
        rho = np.linalg.norm(v)
        if rho <= self.tol:
            self.breakdown = (k + 1, "rho")
            raise BreakdownSignal(k + 1, self, "rho")
        v /= rho
        self._V[:, k] = v
        self._rho[k] = rho

        w = self.op.apply(v) - rho * u
        w = self._orthogonalize(w, self._U[:, : k + 1])
        sigma = np.linalg.norm(w)
        self.k = k + 1
        if sigma <= self.tol:
            self._sigma[k] = 0.0
            self._U[:, k + 1] = 0.0
            self.breakdown = (k + 1, "sigma")
            raise BreakdownSignal(k + 1, self, "sigma")
        self._U[:, k + 1] = w / sigma
        self._sigma[k] = sigma
        return self

    def get_B(self, k=None):
        """Dense lower bidiagonal ``B_k`` (k x k)."""
        k = self._check_k(k)
        B = np.diag(self._rho[:k])
        if k > 1:
            B += np.diag(self._sigma[: k - 1], -1)
        return B

    def get_Bbar(self, k=None):
        """Dense lower bidiagonal ``Bbar_k`` ((k+1) x k)."""
        k = self._check_k(k)
        Bbar = np.zeros((k + 1, k))
        Bbar[:k] = self.get_B(k)
        Bbar[k, k - 1] = self._sigma[k - 1]
        return Bbar

    def _check_k(self, k):
        if k is None:
            k = self.k
        if not 1 <= k <= self.k:
            raise ValueError(f"k must be in [1, {self.k}], got {k}")
        return k

    def residuals(self):
        """Frobenius residuals of both recurrences and max orthogonality defects."""
        k = self.k
        A = self.op
        AV = np.column_stack([A.apply(self._V[:, j]) for j in range(k)])
        ATU = np.column_stack([A.apply_adjoint(self._U[:, j]) for j in range(k)])
        Uk1 = self._U[:, : k + 1]
        r1 = np.linalg.norm(AV - Uk1 @ self.get_Bbar())
        r2 = np.linalg.norm(ATU - self._V[:, :k] @ self.get_B().T)
        ncols = k if self._sigma[k - 1] == 0.0 else k + 1
        Uv = self._U[:, :ncols]
        ortho_u = np.abs(Uv.T @ Uv - np.eye(ncols)).max()
        ortho_v = np.abs(self.V.T @ self.V - np.eye(k)).max()
        return {"AV": r1, "ATU": r2, "ortho_U": ortho_u, "ortho_V": ortho_v}


def gkb_init(op, b, reorth=True, tol_breakdown=TOL_BREAKDOWN, opnorm=None):
    """Start a factorization with ``u_1 = b / ||b||``."""
    return BidiagFactorization(op, b, reorth=reorth, tol_breakdown=tol_breakdown, opnorm=opnorm)


def gkb_step(fact):
    return fact.step()


def run_gkb(op, b, steps, **kwargs):
    """Run up to ``steps`` GKB steps, stopping quietly at breakdown."""
    fact = gkb_init(op, b, **kwargs)
    for _ in range(min(steps, fact.p)):
        try:
            fact.step()
        except BreakdownSignal:
            break
    return fact
