"""Shared domain types and evaluation contracts.

Points are dense real coordinate vectors (1-D float64 arrays).  Energies are
exposed as :class:`FunctionalHandle` objects bundling value / gradient /
Hessian evaluators, and the viscous regularisation ``F + sigma^2 * G`` is a
:class:`ViscousFamily` of two such handles.  Everything here is pure and
reentrant: handles may be shared freely across workers.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, asdict
from typing import Any, Callable

import numpy as np

# loglog(1/sigma) is positive only below exp(-e); entropy bounds live there.
SIGMA_DOMAIN_MAX = math.exp(-math.e)


class ViscmmError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(ViscmmError):
    """Input vector length does not match the handle's dimension."""


class EvaluationError(ViscmmError):
    """A functional produced a non-finite output; carries the input point."""

    def __init__(self, message: str, point: np.ndarray | None = None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


class DomainError(ViscmmError):
    """Argument outside the mathematical domain of an operation."""


def as_point(coords: Any, dim: int | None = None) -> np.ndarray:
    """Validate coordinates into a finite 1-D float64 vector."""
    x = np.asarray(coords, dtype=float)
    if x.ndim != 1:
        x = x.reshape(-1)
    if x.size == 0:
        raise DimensionMismatchError("a point needs at least one coordinate")
    if not np.all(np.isfinite(x)):
        raise EvaluationError("point has non-finite coordinates", x)
    if dim is not None and x.size != dim:
        raise DimensionMismatchError(f"expected dim {dim}, got {x.size}")
    return x


def worker_count() -> int:
    """Worker cap from VM_THREADS (>=1). Evaluations are pure, so threading is safe."""
    try:
        n = int(os.environ.get("VM_THREADS", "1"))
    except ValueError:
        return 1
    return max(1, n)


@dataclass(frozen=True)
class ToleranceProfile:
    """Central numeric tolerances, carried by run configuration."""

    fd_step: float = 1e-5            # finite-difference step for derivative checks
    grad_check_tol: float = 1e-5     # max allowed central-diff vs gradient deviation
    hessian_check_tol: float = 1e-4  # max allowed FD-of-gradient vs Hessian deviation
    tol_grad: float = 1e-9           # gradient norm at refined critical points
    null_band_factor: float = 1e-7   # nullity band = factor * spectral norm
    sup_tol: float = 1e-12           # allowed sup increase in tightening/surgery
    sym_tol: float = 1e-12           # relative Hessian asymmetry tolerance

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ToleranceProfile":
        return cls(**d)


@dataclass
class FunctionalHandle:
    """An energy with its first two derivatives on a fixed coordinate space.

    ``value``, ``gradient`` and ``hessian`` must be deterministic and pure.
    ``value_batch`` / ``gradient_batch`` optionally evaluate a whole (M, dim)
    stack of points at once; callers fall back to row-wise loops when absent.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    label: str = ""
    dim: int | None = None
    value_batch: Callable[[np.ndarray], np.ndarray] | None = None
    gradient_batch: Callable[[np.ndarray], np.ndarray] | None = None
    sym_tol: float = 1e-12

    def _check(self, x) -> np.ndarray:
        return as_point(x, self.dim)

    def __call__(self, x) -> float:
        x = self._check(x)
        v = float(self.value(x))
        if not math.isfinite(v):
            raise EvaluationError(f"{self.label or 'functional'}: non-finite value", x)
        return v

    def grad(self, x) -> np.ndarray:
        x = self._check(x)
        g = np.asarray(self.gradient(x), dtype=float)
        if g.shape != x.shape:
            raise DimensionMismatchError(
                f"{self.label or 'functional'}: gradient shape {g.shape} != {x.shape}")
        if not np.all(np.isfinite(g)):
            raise EvaluationError(f"{self.label or 'functional'}: non-finite gradient", x)
        return g

    def hess(self, x) -> np.ndarray:
        x = self._check(x)
        h = np.asarray(self.hessian(x), dtype=float)
        n = x.size
        if h.shape != (n, n):
            raise DimensionMismatchError(
                f"{self.label or 'functional'}: hessian shape {h.shape} != ({n}, {n})")
        if not np.all(np.isfinite(h)):
            raise EvaluationError(f"{self.label or 'functional'}: non-finite hessian", x)
        scale = max(1.0, float(np.abs(h).max()))
        asym = float(np.abs(h - h.T).max())
        if asym > self.sym_tol * scale:
            raise EvaluationError(
                f"{self.label or 'functional'}: hessian asymmetry {asym:.3e} "
                f"exceeds {self.sym_tol:.1e} relative tolerance", x)
        return 0.5 * (h + h.T)

    def values(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate the value on a stack of points of shape (M, dim)."""
        xs = np.asarray(xs, dtype=float)
        if self.value_batch is not None:
            v = np.asarray(self.value_batch(xs), dtype=float)
            if not np.all(np.isfinite(v)):
                raise EvaluationError(f"{self.label or 'functional'}: non-finite batch value")
            return v
        return np.array([self(x) for x in xs])

    def grads(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if self.gradient_batch is not None:
            g = np.asarray(self.gradient_batch(xs), dtype=float)
            if not np.all(np.isfinite(g)):
                raise EvaluationError(f"{self.label or 'functional'}: non-finite batch gradient")
            return g
        return np.stack([self.grad(x) for x in xs])


@dataclass
class ViscousFamily:
    """The regularised family ``F_sigma = F + sigma^2 * G``.

    At sigma = 0 evaluation reduces to the base energy exactly, and for any
    fixed point the map sigma -> F_sigma(x) is nondecreasing whenever G >= 0.
    """

    base: FunctionalHandle
    regularizer: FunctionalHandle

    @property
    def dim(self) -> int | None:
        return self.base.dim if self.base.dim is not None else self.regularizer.dim

    def value(self, x, sigma: float) -> float:
        s2 = float(sigma) * float(sigma)
        return self.base(x) + s2 * self.regularizer(x)

    def gradient(self, x, sigma: float) -> np.ndarray:
        s2 = float(sigma) * float(sigma)
        return self.base.grad(x) + s2 * self.regularizer.grad(x)

    def hessian(self, x, sigma: float) -> np.ndarray:
        s2 = float(sigma) * float(sigma)
        return self.base.hess(x) + s2 * self.regularizer.hess(x)

    def sigma_derivative(self, x, sigma: float) -> float:
        """d/dsigma F_sigma(x) = 2 sigma G(x)."""
        return 2.0 * float(sigma) * self.regularizer(x)

    def handle(self, sigma: float) -> FunctionalHandle:
        """The member F_sigma as a standalone handle (batch-aware)."""
        sigma = float(sigma)
        if not math.isfinite(sigma):
            raise DomainError("sigma must be finite")
        s2 = sigma * sigma
        f, g = self.base, self.regularizer
        vb = None
        if f.value_batch is not None and g.value_batch is not None:
            vb = lambda xs: np.asarray(f.value_batch(xs)) + s2 * np.asarray(g.value_batch(xs))
        gb = None
        if f.gradient_batch is not None and g.gradient_batch is not None:
            gb = lambda xs: np.asarray(f.gradient_batch(xs)) + s2 * np.asarray(g.gradient_batch(xs))
        return FunctionalHandle(
            value=lambda x: f.value(x) + s2 * g.value(x),
            gradient=lambda x: np.asarray(f.gradient(x)) + s2 * np.asarray(g.gradient(x)),
            hessian=lambda x: np.asarray(f.hessian(x)) + s2 * np.asarray(g.hessian(x)),
            label=f"{f.label}+{sigma:g}^2*{g.label}",
            dim=self.dim,
            value_batch=vb,
            gradient_batch=gb,
        )


def evaluate_viscous(family: ViscousFamily, sigma: float, x) -> float:
    """Evaluate ``F(x) + sigma^2 G(x)`` exactly as composed from the handles."""
    if not math.isfinite(float(sigma)):
        raise DomainError("sigma must be finite")
    return family.value(x, sigma)


def entropy_bound(sigma: float, derivative_form: bool = True) -> float:
    """The entropy-condition threshold at sigma.

    With ``derivative_form`` the bound is ``1/(sigma log(1/sigma) loglog(1/sigma))``,
    the admissible slope of a width curve.  Without it the leading sigma factor is
    dropped, giving the threshold on ``sigma^2 G(x)`` that cuts out the entropy set.

    Requires ``0 < sigma < exp(-e)`` so that loglog(1/sigma) is strictly positive.
    """
    sigma = float(sigma)
    if not (0.0 < sigma < SIGMA_DOMAIN_MAX):
        raise DomainError(
            f"entropy_bound needs 0 < sigma < e^-e = {SIGMA_DOMAIN_MAX:.6f}, got {sigma!r}")
    l1 = math.log(1.0 / sigma)
    l2 = math.log(l1)
    if derivative_form:
        return 1.0 / (sigma * l1 * l2)
    return 1.0 / (l1 * l2)


def entropy_residual(sigma: float, reg_value: float) -> float | None:
    """sigma^2 G(x) minus the entropy-set threshold; None when sigma == 0.

    Nonpositive residual is exactly membership in the entropy set.
    """
    sigma = float(sigma)
    if sigma == 0.0:
        return None
    return sigma * sigma * float(reg_value) - entropy_bound(sigma, derivative_form=False)


def grad_check(handle: FunctionalHandle, x, h: float = 1e-5) -> float:
    """Max coordinate deviation between central differences of the value and the gradient."""
    x = as_point(x, handle.dim)
    if not (0.0 < h <= 1e-2):
        raise DomainError("finite-difference step must lie in (0, 1e-2]")
    g = handle.grad(x)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        d = (handle(x + e) - handle(x - e)) / (2.0 * h)
        worst = max(worst, abs(d - g[i]))
    return worst


def hessian_check(handle: FunctionalHandle, x, h: float = 1e-5) -> float:
    """Max entry deviation between central differences of the gradient and the Hessian."""
    x = as_point(x, handle.dim)
    if not (0.0 < h <= 1e-2):
        raise DomainError("finite-difference step must lie in (0, 1e-2]")
    hess = handle.hess(x)
    n = x.size
    fd = np.empty((n, n))
    for i in range(n):
        e = np.zeros_like(x)
        e[i] = h
        fd[:, i] = (handle.grad(x + e) - handle.grad(x - e)) / (2.0 * h)
    fd = 0.5 * (fd + fd.T)
    return float(np.abs(fd - hess).max())


def fd_hessian_of_gradient(gradient: Callable[[np.ndarray], np.ndarray],
                           x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Symmetrised central differences of an analytic gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n))
    for i in range(n):
        e = np.zeros_like(x)
        e[i] = h
        out[:, i] = (np.asarray(gradient(x + e)) - np.asarray(gradient(x - e))) / (2.0 * h)
    return 0.5 * (out + out.T)


@dataclass
class CriticalPointRecord:
    """A refined critical point of some F_sigma with its diagnostics.

    ``entropy_residual <= 0`` is exactly membership in the entropy set at
    sigma; the field is None at sigma = 0 where the threshold is undefined.
    ``morse`` is a ``MorseData`` (see :mod:`viscmm.critical`) or None.
    """

    point: np.ndarray
    sigma: float
    value: float
    base_value: float
    reg_value: float
    grad_norm: float
    morse: Any = None
    entropy_residual: float | None = None

    def __post_init__(self):
        self.point = as_point(self.point)
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "point": [float(c) for c in self.point],
            "sigma": float(self.sigma),
            "value": float(self.value),
            "base_value": float(self.base_value),
            "reg_value": float(self.reg_value),
            "grad_norm": float(self.grad_norm),
            "morse": None if self.morse is None else self.morse.to_dict(),
            "entropy_residual": (None if self.entropy_residual is None
                                 else float(self.entropy_residual)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriticalPointRecord":
        morse = None
        if d.get("morse") is not None:
            from .critical import MorseData
            morse = MorseData.from_dict(d["morse"])
        return cls(
            point=np.array(d["point"], dtype=float),
            sigma=d["sigma"],
            value=d["value"],
            base_value=d["base_value"],
            reg_value=d["reg_value"],
            grad_norm=d["grad_norm"],
            morse=morse,
            entropy_residual=d.get("entropy_residual"),
        )
