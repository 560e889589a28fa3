"""Matrix-free operators and reproducible test problems.

Two problem families are provided: a 1-D Fredholm "gravity" problem backed
by a dense matrix, and a 2-D separable Gaussian blur applied as
``A1 @ X @ A1.T`` on the image. Noise is drawn from numpy's PCG64 generator
(``numpy.random.default_rng``) so traces are reproducible across platforms.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SAFETY = 1.01


class LinearOperator:
    """A linear map ``R^n -> R^m`` known only through products with A and A^T.

    Parameters
    ----------
    m, n : int
        Row and column dimensions.
    matvec, rmatvec : callable
        ``x -> A x`` and ``y -> A^T y``.
    """

    def __init__(self, m, n, matvec, rmatvec):
        self.m = int(m)
        self.n = int(n)
        self._matvec = matvec
        self._rmatvec = rmatvec

    @property
    def shape(self):
        return (self.m, self.n)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return np.asarray(self._matvec(x), dtype=float).reshape(self.m)

    def apply_adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ValueError(f"expected vector of length {self.m}, got shape {y.shape}")
        return np.asarray(self._rmatvec(y), dtype=float).reshape(self.n)

    def to_dense(self):
        """Assemble the matrix column by column (for small operators and tests)."""
        A = np.empty((self.m, self.n))
        e = np.zeros(self.n)
        for j in range(self.n):
            e[j] = 1.0
            A[:, j] = self.apply(e)
            e[j] = 0.0
        return A

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, n={self.n})"


class MatrixOperator(LinearOperator):
    """Operator backed by an explicit dense matrix."""

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        matrix.setflags(write=False)
        self.matrix = matrix
        super().__init__(matrix.shape[0], matrix.shape[1], matrix.__matmul__, matrix.T.__matmul__)

    def to_dense(self):
        return self.matrix.copy()


class SeparableBlurOperator(LinearOperator):
    """``A = A1 kron A1`` acting on row-major flattened ``N x N`` images."""

    def __init__(self, A1):
        A1 = np.array(A1, dtype=float)
        A1.setflags(write=False)
        self.A1 = A1
        self.size = A1.shape[0]
        N = self.size

        def matvec(x):
            return (A1 @ x.reshape(N, N) @ A1.T).ravel()

        def rmatvec(y):
            return (A1.T @ y.reshape(N, N) @ A1).ravel()

        super().__init__(N * N, N * N, matvec, rmatvec)

    def to_dense(self):
        return np.kron(self.A1, self.A1)


def opnorm_estimate(op, iters=10, seed=0):
    """Power-iteration estimate of ``||A||_2`` (a lower bound, usually tight)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.apply_adjoint(op.apply(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        est = np.sqrt(nw)
        v = w / nw
    return float(est)


def adjoint_mismatch(op, rng, opnorm=None):
    """Return ``|<Ax, y> - <x, A^T y>| / (||x|| ||y|| ||A||)`` for random x, y."""
    if opnorm is None:
        opnorm = opnorm_estimate(op)
    x = rng.standard_normal(op.n)
    y = rng.standard_normal(op.m)
    lhs = np.dot(op.apply(x), y)
    rhs = np.dot(x, op.apply_adjoint(y))
    scale = np.linalg.norm(x) * np.linalg.norm(y) * max(opnorm, np.finfo(float).tiny)
    return abs(lhs - rhs) / scale


@dataclass(frozen=True)
class TestProblem:
    """A linear inverse problem ``A x + e = b`` with known ground truth."""

    __test__ = False  # keep pytest from collecting this class

    operator: LinearOperator
    x_exact: np.ndarray
    b_exact: np.ndarray
    b_noisy: np.ndarray
    e: np.ndarray
    noise_level: float = 0.0
    epsilon: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.operator.shape


def _noise_free(op, x_exact, meta):
    b = op.apply(x_exact)
    return TestProblem(
        operator=op,
        x_exact=x_exact,
        b_exact=b,
        b_noisy=b.copy(),
        e=np.zeros_like(b),
        noise_level=0.0,
        epsilon=0.0,
        meta=meta,
    )


def gravity_matrix(n, depth):
    h = 1.0 / n
    t = (np.arange(n) + 0.5) * h
    diff = t[:, None] - t[None, :]
    return h * depth * (depth**2 + diff**2) ** -1.5


def make_gravity_problem(n=64, depth=0.25):
    """Midpoint discretisation of the 1-D gravity surveying kernel on [0, 1]."""
    if n < 2:
        raise ValueError("gravity problem needs n >= 2")
    if not depth > 0:
        raise ValueError("depth must be positive")
    t = (np.arange(n) + 0.5) / n
    x = np.sin(np.pi * t) + 0.5 * np.sin(2 * np.pi * t)
    op = MatrixOperator(gravity_matrix(n, depth))
    return _noise_free(op, x, {"problem": "gravity", "size": n, "depth": depth})


def blur_factor(size, psf_sigma, band):
    """Banded Toeplitz 1-D Gaussian blur with zero boundary conditions.

    Entries are ``exp(-(i-j)^2 / (2 sigma^2)) / Z`` for ``|i-j| <= band``, where
    ``Z`` is the sum of the untruncated kernel over all integer offsets, so every
    row sums to at most one. ``band=0`` gives the identity.
    """
    if band == 0:
        return np.eye(size)
    reach = max(band, int(np.ceil(40 * psf_sigma)) + 1)
    offsets = np.arange(-reach, reach + 1)
    Z = np.exp(-(offsets**2) / (2.0 * psf_sigma**2)).sum()
    d = np.arange(size)
    diff = d[:, None] - d[None, :]
    A1 = np.exp(-(diff**2) / (2.0 * psf_sigma**2)) / Z
    A1[np.abs(diff) > band] = 0.0
    return A1


def geometric_image(size):
    """Bright rectangle and a dimmer disc on a dark background, values in [0, 1]."""
    r = (np.arange(size) + 0.5) / size
    rows, cols = np.meshgrid(r, r, indexing="ij")
    img = np.zeros((size, size))
    rect = (rows > 0.15) & (rows < 0.45) & (cols > 0.12) & (cols < 0.62)
    img[rect] = 1.0
    disc = (rows - 0.66) ** 2 + (cols - 0.6) ** 2 < 0.2**2
    img[disc] = np.maximum(img[disc], 0.6)
    return img


def make_blur_problem(img_size=64, psf_sigma=4.0, band=12):
    """Separable Gaussian deblurring of a synthetic geometric image."""
    if img_size < 8:
        raise ValueError("img_size must be at least 8")
    if not psf_sigma > 0:
        raise ValueError("psf_sigma must be positive")
    if not 0 <= band <= img_size:
        raise ValueError("band must lie in [0, img_size]")
    op = SeparableBlurOperator(blur_factor(img_size, psf_sigma, band))
    x = geometric_image(img_size).ravel()
    meta = {"problem": "blur", "size": img_size, "psf_sigma": psf_sigma, "band": band}
    return _noise_free(op, x, meta)


def add_noise(problem, level, seed, safety=DEFAULT_SAFETY):
    """Add Gaussian white noise scaled to ``||e|| = level * ||b_exact||`` exactly.

    ``epsilon`` is set to ``safety * ||e||``.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if safety < 1:
        raise ValueError("safety factor must be >= 1")
    b = problem.b_exact
    if level == 0:
        e = np.zeros_like(b)
    else:
        w = np.random.default_rng(seed).standard_normal(b.shape[0])
        e = (level * np.linalg.norm(b) / np.linalg.norm(w)) * w
    meta = dict(problem.meta, noise=level, seed=seed, safety=safety)
    return dataclasses.replace(
        problem,
        b_noisy=b + e,
        e=e,
        noise_level=float(level),
        epsilon=float(safety * np.linalg.norm(e)),
        meta=meta,
    )
