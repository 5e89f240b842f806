"""Benchmark objectives: two deconvolution models, a diffusion-based image
compression problem, and a 1-D box-constrained example, plus synthetic data
generation.

Every problem exposes the smooth part (``f0``/``grad_f0``), the convex
nonsmooth part (``f1``), a proximal strategy, a domain membership test and
the active-set rule used by reduced gradients.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .operators import Laplacian2D, LinearOperator
from .prox import BoxProx, DualTVProx, TVNonnegRegularizer

__all__ = [
    "DomainError",
    "LinearSolveError",
    "Problem",
    "SignalDependentGaussianProblem",
    "CauchyDeblurProblem",
    "MaskCompressionProblem",
    "Toy1DBoxProblem",
    "degrade_synthetic",
    "cartoon_image",
    "smooth_image",
]


class DomainError(ValueError):
    """Evaluation requested outside the objective's domain."""


class LinearSolveError(RuntimeError):
    """Linear solve failed to reach the required residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class Problem:
    """Composite objective f = f0 + f1 with a pluggable proximal strategy."""

    kind = "generic"
    n = 0
    prox = None

    def f0(self, x):
        raise NotImplementedError

    def grad_f0(self, x):
        raise NotImplementedError

    def f1(self, x):
        return self.prox.f1(x)

    def in_domain(self, x):
        return self.prox.in_domain(x)

    def f(self, x):
        val1 = self.f1(x)
        if not np.isfinite(val1):
            return np.inf
        return self.f0(x) + val1

    def active_mask(self, x):
        """Coordinates whose reduced gradient is zeroed (at active bounds)."""
        raise NotImplementedError


class SignalDependentGaussianProblem(Problem):
    """Deconvolution under Gaussian noise whose variance is affine in the
    blurred intensity.

    The misfit is ``0.5 * sum_i ((Hx)_i - g_i)^2 / (a_i (Hx)_i + b_i)
    + log(a_i (Hx)_i + b_i)`` (nonconvex, smooth wherever the affine variance
    is positive); the regularizer is ``rho * TV`` plus nonnegativity.
    """

    kind = "gaussian_sd"

    def __init__(self, H: LinearOperator, g, shape, a=1.0, b=1.0, rho=0.03,
                 inner_limit=5000, warm_start=True):
        h, w = shape
        self.n = h * w
        self.shape = (h, w)
        self.H = H
        self.g = np.asarray(g, dtype=float).ravel()
        if self.g.size != self.n:
            raise ValueError("observed image size mismatch")
        self.a = np.broadcast_to(np.asarray(a, dtype=float), (self.n,)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=float), (self.n,)).copy()
        if np.any(self.a < 0):
            raise ValueError("a must be nonnegative")
        if np.any(self.b <= 0):
            raise ValueError("b must be positive")
        self.rho = float(rho)
        self.reg = TVNonnegRegularizer(shape, rho)
        self.prox = DualTVProx(self.reg, inner_limit=inner_limit,
                               warm_start=warm_start)
        self._h_norm_sq = None

    def _variance(self, t):
        c = self.a * t + self.b
        if np.any(c <= 0):
            raise DomainError("affine variance must stay positive")
        return c

    def f0(self, x):
        t = self.H.apply(x)
        c = self._variance(t)
        r = t - self.g
        return 0.5 * float(np.sum(r * r / c + np.log(c)))

    def grad_f0(self, x):
        t = self.H.apply(x)
        c = self._variance(t)
        r = t - self.g
        q = r / c - 0.5 * self.a * r * r / (c * c) + 0.5 * self.a / c
        return self.H.adjoint(q)

    def active_mask(self, x):
        return np.asarray(x) == 0.0

    @property
    def h_norm_sq(self):
        if self._h_norm_sq is None:
            self._h_norm_sq = self.H.norm_sq_bound()
        return self._h_norm_sq

    def curvature_bound(self):
        """Bound on the per-component second derivative of the misfit, valid
        on the nonnegative blurred range."""
        pos = (self.a * self.g + self.b) ** 2 / self.b**3
        neg = 0.5 * self.a**2 / self.b**2
        return float(np.max(np.maximum(pos, neg)))


class CauchyDeblurProblem(Problem):
    """Deblurring under additive Cauchy noise.

    The misfit is ``(lambda/2) * sum_i log(gamma^2 + ((Hx)_i - g_i)^2)``
    (smooth everywhere, nonconvex); the regularizer is unit-weight TV plus
    nonnegativity.
    """

    kind = "cauchy"

    def __init__(self, H: LinearOperator, g, shape, gamma_noise=0.02,
                 lambda_reg=0.35, inner_limit=5000, warm_start=True):
        if gamma_noise <= 0:
            raise ValueError("gamma_noise must be positive")
        h, w = shape
        self.n = h * w
        self.shape = (h, w)
        self.H = H
        self.g = np.asarray(g, dtype=float).ravel()
        if self.g.size != self.n:
            raise ValueError("observed image size mismatch")
        self.gamma_noise = float(gamma_noise)
        self.lambda_reg = float(lambda_reg)
        self.reg = TVNonnegRegularizer(shape, rho=1.0)
        self.prox = DualTVProx(self.reg, inner_limit=inner_limit,
                               warm_start=warm_start)
        self._h_norm_sq = None

    def f0(self, x):
        r = self.H.apply(x) - self.g
        return 0.5 * self.lambda_reg * float(
            np.sum(np.log(self.gamma_noise**2 + r * r))
        )

    def grad_f0(self, x):
        r = self.H.apply(x) - self.g
        return self.lambda_reg * self.H.adjoint(
            r / (self.gamma_noise**2 + r * r)
        )

    def active_mask(self, x):
        return np.asarray(x) == 0.0

    @property
    def h_norm_sq(self):
        if self._h_norm_sq is None:
            self._h_norm_sq = self.H.norm_sq_bound()
        return self._h_norm_sq

    def curvature_bound(self):
        return self.lambda_reg / self.gamma_noise**2


class MaskCompressionProblem(Problem):
    """Interpolation-mask selection for linear-diffusion image compression.

    With ``C = diag(c)`` and ``A(c) = C + (C - I) L`` (``L`` the Neumann
    Laplacian), the smooth part is
    ``0.5 * ||A(c)^{-1} C u0 - u0||^2 + lambda * sum_i c_i`` (the l1 penalty
    is linear on the box and thus absorbed into the smooth part); ``f1`` is
    the indicator of ``[0, box_upper]^n``.

    Linear systems are solved by sparse LU with one iterative-refinement
    pass; residuals beyond ``solve_rtol`` raise :class:`LinearSolveError`.
    """

    kind = "compression"
    solve_rtol = 1e-10

    def __init__(self, u0, shape, lambda_reg=0.01, box_upper=1.5):
        h, w = shape
        self.n = h * w
        self.shape = (h, w)
        self.u0 = np.asarray(u0, dtype=float).ravel()
        if self.u0.size != self.n:
            raise ValueError("image size mismatch")
        self.lambda_reg = float(lambda_reg)
        self.box_upper = float(box_upper)
        self.L = Laplacian2D(shape).sparse()
        self.prox = BoxProx(0.0, box_upper)
        self._cache_key = None
        self._cache = None

    def _system(self, c):
        key = c.tobytes()
        if key == self._cache_key:
            return self._cache
        C = scipy.sparse.diags(c)
        A = (C + scipy.sparse.diags(c - 1.0) @ self.L).tocsc()
        rhs = c * self.u0
        try:
            lu = scipy.sparse.linalg.splu(A)
        except RuntimeError as exc:
            raise LinearSolveError(
                f"diffusion system factorization failed: {exc}", np.inf
            ) from exc
        u = lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise LinearSolveError("diffusion solve produced non-finite values",
                                   np.inf)
        res = np.linalg.norm(A @ u - rhs)
        tol = self.solve_rtol * max(1.0, np.linalg.norm(rhs))
        if res > tol:
            u = u + lu.solve(rhs - A @ u)
            res = np.linalg.norm(A @ u - rhs)
            if res > tol:
                raise LinearSolveError(
                    f"diffusion solve residual {res:.3e} above {tol:.3e}", res
                )
        self._cache_key = key
        self._cache = (A, lu, u)
        return self._cache

    def reconstruction(self, c):
        """Diffusion reconstruction ``A(c)^{-1} C u0``."""
        c = np.asarray(c, dtype=float).ravel()
        _, _, u = self._system(c)
        return u

    def f0(self, x):
        c = np.asarray(x, dtype=float).ravel()
        _, _, u = self._system(c)
        r = u - self.u0
        return 0.5 * float(np.dot(r, r)) + self.lambda_reg * float(np.sum(c))

    def grad_f0(self, x):
        c = np.asarray(x, dtype=float).ravel()
        _, lu, u = self._system(c)
        w = lu.solve(u - self.u0, trans="T")
        return -w * (u + self.L @ u - self.u0) + self.lambda_reg

    def active_mask(self, x):
        x = np.asarray(x)
        return (x == 0.0) | (x == self.box_upper)


class Toy1DBoxProblem(Problem):
    """Scalar example: minimize ``2 / (x + 1)`` over the box ``[0, 10]``.

    The smooth part decreases toward the upper bound, so the minimizer sits
    at ``x = 10`` with value ``2/11``.
    """

    kind = "toy1d"
    n = 1

    def __init__(self, lower=0.0, upper=10.0):
        self.lower = float(lower)
        self.upper = float(upper)
        self.prox = BoxProx(lower, upper)

    def f0(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= -1.0):
            raise DomainError("f0 undefined at x <= -1")
        return float(np.sum(2.0 / (x + 1.0)))

    def grad_f0(self, x):
        x = np.asarray(x, dtype=float)
        return -2.0 / (x + 1.0) ** 2

    def active_mask(self, x):
        x = np.asarray(x)
        return (x == self.lower) | (x == self.upper)


def degrade_synthetic(x_true, H, model, seed, *, a=1.0, b=1.0,
                      gamma_noise=0.02):
    """Synthesize an observed image from ground truth, deterministically.

    ``gaussian_sd`` draws ``g = Hx + sqrt(a * Hx + b) * w`` with standard
    normal ``w``; ``cauchy`` draws ``g = Hx + gamma * tan(pi (u - 1/2))``
    with uniform ``u`` (inverse-CDF sampling).
    """
    x_true = np.asarray(x_true, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    t = H.apply(x_true)
    if model == "gaussian_sd":
        a = np.broadcast_to(np.asarray(a, dtype=float), t.shape)
        b = np.broadcast_to(np.asarray(b, dtype=float), t.shape)
        sigma = np.sqrt(np.maximum(a * t + b, 0.0))
        return t + sigma * rng.standard_normal(t.size)
    if model == "cauchy":
        u = rng.random(t.size)
        return t + gamma_noise * np.tan(np.pi * (u - 0.5))
    raise ValueError(f"unknown degradation model {model!r}")


def cartoon_image(shape):
    """Deterministic piecewise-constant test image with values in [0, 1]."""
    h, w = shape
    img = np.full((h, w), 0.15)
    img[int(0.12 * h):int(0.55 * h), int(0.10 * w):int(0.45 * w)] = 0.75
    yy, xx = np.mgrid[0:h, 0:w]
    disk = (yy - 0.62 * h) ** 2 + (xx - 0.64 * w) ** 2 <= (0.22 * min(h, w)) ** 2
    img[disk] = 0.50
    small = (yy - 0.30 * h) ** 2 + (xx - 0.72 * w) ** 2 <= (0.10 * min(h, w)) ** 2
    img[small] = 0.95
    img[int(0.78 * h):int(0.88 * h), int(0.15 * w):int(0.85 * w)] = 0.35
    return img.ravel()


def smooth_image(shape):
    """Deterministic smooth test image (Gaussian bumps), values in [0, 1]."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    yy = yy / max(h - 1, 1)
    xx = xx / max(w - 1, 1)
    img = (
        0.9 * np.exp(-((yy - 0.35) ** 2 + (xx - 0.3) ** 2) / 0.05)
        + 0.7 * np.exp(-((yy - 0.7) ** 2 + (xx - 0.65) ** 2) / 0.03)
        + 0.1
    )
    return (img / img.max()).ravel()
