"""Concrete problem instances.

Analytic 2-D landscapes with known critical structure (quadratic normal
forms, a double well, a cubic "monkey" degeneracy and variants with planted
saddles), discretised closed-curve energies on parametrised surfaces
(polygonal length and a curvature-bending regulariser), and a 1-D
alpha-energy whose regularisation sits in the exponent.  A string-keyed
registry bundles each landscape with its regulariser and a seed sweepout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    DomainError,
    EvaluationError,
    FunctionalHandle,
    ViscmmError,
    ViscousFamily,
    fd_hessian_of_gradient,
)
from .sweepout import Sweepout, make_line_sweepout

SEGMENT_TOL = 1e-12


class GradientSingularityError(ViscmmError):
    """Loop gradient requested at a configuration with a degenerate segment."""

    def __init__(self, segment: int):
        super().__init__(f"degenerate segment {segment}: coincident consecutive nodes")
        self.segment = segment


# ---------------------------------------------------------------------------
# analytic 2-D landscapes


def make_quadratic_saddle(neg: int, pos: int, scales=None) -> FunctionalHandle:
    """Exact Morse normal form: scaled positive squares minus negative squares.

    Coordinates are ordered negative block first, so the Hessian is
    diag(-2*scales_neg, +2*scales_pos).
    """
    if neg < 0 or pos < 0 or neg + pos < 1:
        raise DomainError("need neg + pos >= 1")
    n = neg + pos
    if scales is None:
        scales = np.ones(n)
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (n,) or np.any(scales <= 0):
        raise DomainError("scales must be positive with length neg + pos")
    signs = np.concatenate([-np.ones(neg), np.ones(pos)])
    coeff = signs * scales

    return FunctionalHandle(
        value=lambda x: float(np.sum(coeff * x ** 2)),
        gradient=lambda x: 2.0 * coeff * x,
        hessian=lambda x: np.diag(2.0 * coeff),
        label=f"quadratic_saddle(neg={neg},pos={pos})",
        dim=n,
        value_batch=lambda xs: np.sum(coeff * xs ** 2, axis=-1),
        gradient_batch=lambda xs: 2.0 * coeff * xs,
    )


def make_double_well(a: float = 1.0, k: float = 5.0) -> FunctionalHandle:
    """F(x, y) = (x^2 - a^2)^2 + k y^2: minima at (+-a, 0), index-1 saddle at 0."""

    def val(x):
        return (x[0] ** 2 - a ** 2) ** 2 + k * x[1] ** 2

    def grad(x):
        return np.array([4.0 * x[0] * (x[0] ** 2 - a ** 2), 2.0 * k * x[1]])

    def hess(x):
        return np.array([[12.0 * x[0] ** 2 - 4.0 * a ** 2, 0.0], [0.0, 2.0 * k]])

    return FunctionalHandle(
        val, grad, hess, label=f"double_well(a={a:g},k={k:g})", dim=2,
        value_batch=lambda xs: (xs[..., 0] ** 2 - a ** 2) ** 2 + k * xs[..., 1] ** 2,
        gradient_batch=lambda xs: np.stack(
            [4.0 * xs[..., 0] * (xs[..., 0] ** 2 - a ** 2), 2.0 * k * xs[..., 1]], axis=-1),
    )


def make_monkey_saddle(confine: float = 0.0) -> FunctionalHandle:
    """F = x^3 - 3 x y^2 + confine (x^2+y^2)^2; fully degenerate origin at confine = 0."""
    if confine < 0:
        raise DomainError("confine must be nonnegative")
    c = float(confine)

    def val(x):
        r2 = x[0] ** 2 + x[1] ** 2
        return x[0] ** 3 - 3.0 * x[0] * x[1] ** 2 + c * r2 ** 2

    def grad(x):
        r2 = x[0] ** 2 + x[1] ** 2
        return np.array([
            3.0 * x[0] ** 2 - 3.0 * x[1] ** 2 + 4.0 * c * x[0] * r2,
            -6.0 * x[0] * x[1] + 4.0 * c * x[1] * r2,
        ])

    def hess(x):
        r2 = x[0] ** 2 + x[1] ** 2
        hxx = 6.0 * x[0] + 4.0 * c * (r2 + 2.0 * x[0] ** 2)
        hyy = -6.0 * x[0] + 4.0 * c * (r2 + 2.0 * x[1] ** 2)
        hxy = -6.0 * x[1] + 8.0 * c * x[0] * x[1]
        return np.array([[hxx, hxy], [hxy, hyy]])

    def val_b(xs):
        r2 = xs[..., 0] ** 2 + xs[..., 1] ** 2
        return xs[..., 0] ** 3 - 3.0 * xs[..., 0] * xs[..., 1] ** 2 + c * r2 ** 2

    def grad_b(xs):
        r2 = xs[..., 0] ** 2 + xs[..., 1] ** 2
        return np.stack([
            3.0 * xs[..., 0] ** 2 - 3.0 * xs[..., 1] ** 2 + 4.0 * c * xs[..., 0] * r2,
            -6.0 * xs[..., 0] * xs[..., 1] + 4.0 * c * xs[..., 1] * r2,
        ], axis=-1)

    return FunctionalHandle(val, grad, hess, label=f"monkey_saddle(confine={c:g})",
                            dim=2, value_batch=val_b, gradient_batch=grad_b)


def make_double_well_bump(amp: float = 1.0, width: float = 0.1,
                          k: float = 5.0) -> FunctionalHandle:
    """Double well with a Gaussian bump at the origin.

    The straight mountain pass is blocked by an index-2 critical point at
    (0, 0); the true passes are the two index-1 saddles at
    (0, +-sqrt(width log(2 amp / (k width)))) when amp > k width / 2.
    """
    if amp <= 0 or width <= 0:
        raise DomainError("amp and width must be positive")
    A, w, kk = float(amp), float(width), float(k)

    def val(x):
        return ((x[0] ** 2 - 1.0) ** 2 + kk * x[1] ** 2
                + A * math.exp(-(x[0] ** 2 + x[1] ** 2) / w))

    def grad(x):
        e = A * math.exp(-(x[0] ** 2 + x[1] ** 2) / w)
        return np.array([
            4.0 * x[0] * (x[0] ** 2 - 1.0) - 2.0 * x[0] * e / w,
            2.0 * kk * x[1] - 2.0 * x[1] * e / w,
        ])

    def hess(x):
        e = A * math.exp(-(x[0] ** 2 + x[1] ** 2) / w)
        hxx = 12.0 * x[0] ** 2 - 4.0 + e * (4.0 * x[0] ** 2 / w ** 2 - 2.0 / w)
        hyy = 2.0 * kk + e * (4.0 * x[1] ** 2 / w ** 2 - 2.0 / w)
        hxy = e * 4.0 * x[0] * x[1] / w ** 2
        return np.array([[hxx, hxy], [hxy, hyy]])

    def val_b(xs):
        e = A * np.exp(-(xs[..., 0] ** 2 + xs[..., 1] ** 2) / w)
        return (xs[..., 0] ** 2 - 1.0) ** 2 + kk * xs[..., 1] ** 2 + e

    def grad_b(xs):
        e = A * np.exp(-(xs[..., 0] ** 2 + xs[..., 1] ** 2) / w)
        return np.stack([
            4.0 * xs[..., 0] * (xs[..., 0] ** 2 - 1.0) - 2.0 * xs[..., 0] * e / w,
            2.0 * kk * xs[..., 1] - 2.0 * xs[..., 1] * e / w,
        ], axis=-1)

    return FunctionalHandle(val, grad, hess,
                            label=f"double_well_bump(amp={A:g},width={w:g})",
                            dim=2, value_batch=val_b, gradient_batch=grad_b)


def make_quartic_regularizer(dim: int = 2) -> FunctionalHandle:
    """G(x) = sum x_i^4, the default nonnegative coercive regulariser."""
    return FunctionalHandle(
        value=lambda x: float(np.sum(x ** 4)),
        gradient=lambda x: 4.0 * x ** 3,
        hessian=lambda x: np.diag(12.0 * x ** 2),
        label="quartic",
        dim=dim,
        value_batch=lambda xs: np.sum(xs ** 4, axis=-1),
        gradient_batch=lambda xs: 4.0 * xs ** 3,
    )


def make_zero_regularizer(dim: int) -> FunctionalHandle:
    return FunctionalHandle(
        value=lambda x: 0.0,
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros((x.size, x.size)),
        label="zero",
        dim=dim,
        value_batch=lambda xs: np.zeros(xs.shape[:-1]),
        gradient_batch=lambda xs: np.zeros_like(xs),
    )


# ---------------------------------------------------------------------------
# surface charts


@dataclass
class SurfaceChart:
    """A parametrised surface in 3-space with one or two derivatives.

    ``embed`` maps parameter arrays of shape (..., 2) to points (..., 3);
    ``d_embed`` returns the Jacobian (..., 3, 2); ``d2_embed`` the second
    derivatives (..., 3, 2, 2).
    """

    embed: Callable[[np.ndarray], np.ndarray]
    d_embed: Callable[[np.ndarray], np.ndarray]
    d2_embed: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def flat_chart(transform: np.ndarray | None = None,
               offset: np.ndarray | None = None) -> SurfaceChart:
    """The plane P(u, v) = (u, v, 0), optionally rigidly moved."""
    R = np.eye(3) if transform is None else np.asarray(transform, dtype=float)
    t = np.zeros(3) if offset is None else np.asarray(offset, dtype=float)

    def embed(uv):
        uv = np.asarray(uv, dtype=float)
        p = np.zeros(uv.shape[:-1] + (3,))
        p[..., 0] = uv[..., 0]
        p[..., 1] = uv[..., 1]
        return p @ R.T + t

    def d_embed(uv):
        uv = np.asarray(uv, dtype=float)
        j = np.zeros(uv.shape[:-1] + (3, 2))
        j[..., 0, 0] = 1.0
        j[..., 1, 1] = 1.0
        return np.einsum("ab,...bj->...aj", R, j)

    def d2_embed(uv):
        uv = np.asarray(uv, dtype=float)
        return np.zeros(uv.shape[:-1] + (3, 2, 2))

    return SurfaceChart(embed, d_embed, d2_embed, label="flat")


def torus_chart(R: float = 2.0, r: float = 0.5) -> SurfaceChart:
    """Round torus: u around the axis, v around the tube; inner equator at v = pi."""
    if not (R > r > 0):
        raise DomainError("need R > r > 0")

    def embed(uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        w = R + r * np.cos(v)
        return np.stack([w * np.cos(u), w * np.sin(u), r * np.sin(v)], axis=-1)

    def d_embed(uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        w = R + r * np.cos(v)
        j = np.empty(uv.shape[:-1] + (3, 2))
        j[..., 0, 0] = -w * np.sin(u)
        j[..., 1, 0] = w * np.cos(u)
        j[..., 2, 0] = 0.0
        j[..., 0, 1] = -r * np.sin(v) * np.cos(u)
        j[..., 1, 1] = -r * np.sin(v) * np.sin(u)
        j[..., 2, 1] = r * np.cos(v)
        return j

    def d2_embed(uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        w = R + r * np.cos(v)
        h = np.empty(uv.shape[:-1] + (3, 2, 2))
        h[..., 0, 0, 0] = -w * np.cos(u)
        h[..., 1, 0, 0] = -w * np.sin(u)
        h[..., 2, 0, 0] = 0.0
        h[..., 0, 0, 1] = r * np.sin(v) * np.sin(u)
        h[..., 1, 0, 1] = -r * np.sin(v) * np.cos(u)
        h[..., 2, 0, 1] = 0.0
        h[..., :, 1, 0] = h[..., :, 0, 1]
        h[..., 0, 1, 1] = -r * np.cos(v) * np.cos(u)
        h[..., 1, 1, 1] = -r * np.cos(v) * np.sin(u)
        h[..., 2, 1, 1] = -r * np.sin(v)
        return h

    return SurfaceChart(embed, d_embed, d2_embed, label=f"torus(R={R:g},r={r:g})")


def ellipsoid_chart(a: float = 1.0, c: float = 0.5) -> SurfaceChart:
    """Spheroid (a, a, c): u is longitude, v latitude; poles at v = +-pi/2."""
    if a <= 0 or c <= 0:
        raise DomainError("semi-axes must be positive")

    def embed(uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        return np.stack([a * np.cos(v) * np.cos(u),
                         a * np.cos(v) * np.sin(u),
                         c * np.sin(v)], axis=-1)

    def d_embed(uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        j = np.empty(uv.shape[:-1] + (3, 2))
        j[..., 0, 0] = -a * np.cos(v) * np.sin(u)
        j[..., 1, 0] = a * np.cos(v) * np.cos(u)
        j[..., 2, 0] = 0.0
        j[..., 0, 1] = -a * np.sin(v) * np.cos(u)
        j[..., 1, 1] = -a * np.sin(v) * np.sin(u)
        j[..., 2, 1] = c * np.cos(v)
        return j

    def d2_embed(uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        h = np.empty(uv.shape[:-1] + (3, 2, 2))
        h[..., 0, 0, 0] = -a * np.cos(v) * np.cos(u)
        h[..., 1, 0, 0] = -a * np.cos(v) * np.sin(u)
        h[..., 2, 0, 0] = 0.0
        h[..., 0, 0, 1] = a * np.sin(v) * np.sin(u)
        h[..., 1, 0, 1] = -a * np.sin(v) * np.cos(u)
        h[..., 2, 0, 1] = 0.0
        h[..., :, 1, 0] = h[..., :, 0, 1]
        h[..., 0, 1, 1] = -a * np.cos(v) * np.cos(u)
        h[..., 1, 1, 1] = -a * np.cos(v) * np.sin(u)
        h[..., 2, 1, 1] = -c * np.sin(v)
        return h

    return SurfaceChart(embed, d_embed, d2_embed, label=f"ellipsoid(a={a:g},c={c:g})")


@dataclass
class LoopConfig:
    """N parameter pairs flattened into one coordinate vector of length 2N."""

    nodes: np.ndarray        # (N, 2)
    closed: bool = True

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise DomainError("nodes must have shape (N, 2)")
        if self.nodes.shape[0] < 8:
            raise DomainError("loops need at least 8 nodes")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def flatten(self) -> np.ndarray:
        return self.nodes.reshape(-1)

    def frozen_coordinate_mask(self) -> np.ndarray:
        """For pinned arcs the first and last node are immutable."""
        mask = np.zeros(2 * self.n_nodes, dtype=bool)
        if not self.closed:
            mask[:2] = True
            mask[-2:] = True
        return mask


def _loop_points(chart: SurfaceChart, x: np.ndarray) -> np.ndarray:
    nodes = np.asarray(x, dtype=float).reshape(-1, 2)
    return chart.embed(nodes)


def _edges(P: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.roll(P, -1, axis=-2) - P
    return P[..., 1:, :] - P[..., :-1, :]


def _polygon_length(P: np.ndarray, closed: bool) -> np.ndarray:
    e = _edges(P, closed)
    return np.linalg.norm(e, axis=-1).sum(axis=-1)


def _bending_terms(P: np.ndarray, closed: bool) -> np.ndarray:
    """Per-node terms (1 + kappa^2)^2 * lbar with kappa = 2 tan(theta/2) / lbar.

    Node terms whose adjacent segments both degenerate contribute zero, the
    continuum value of a zero-length curve; exact point-loops therefore have
    zero bending energy.  Hairpins (theta -> pi) diverge honestly to +inf.
    For open arcs the two endpoint length shares (zero curvature) are
    appended at the end.
    """
    e = _edges(P, closed)
    if closed:
        a = np.roll(e, 1, axis=-2)   # edge arriving at node i
        b = e                        # edge leaving node i
    else:
        a = e[..., :-1, :]
        b = e[..., 1:, :]
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ip = np.einsum("...i,...i->...", a, b)
    cross_sq = np.maximum(na ** 2 * nb ** 2 - ip ** 2, 0.0)
    denom = na * nb + ip
    lbar = 0.5 * (na + nb)
    live = np.minimum(na, nb) > SEGMENT_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        t_sq = np.where(live, cross_sq / np.where(denom > 0, denom, 1.0) ** 2, 0.0)
        t_sq = np.where(live & (denom <= SEGMENT_TOL * na * nb), np.inf, t_sq)
        kappa_sq = np.where(live, 4.0 * t_sq / np.where(live, lbar, 1.0) ** 2, 0.0)
    terms = np.where(live, (1.0 + kappa_sq) ** 2 * lbar, 0.0)
    if not closed:
        seg = np.linalg.norm(e, axis=-1)
        ends = np.stack([0.5 * seg[..., 0], 0.5 * seg[..., -1]], axis=-1)
        terms = np.concatenate([terms, ends], axis=-1)
    return terms


def _bending_energy(P: np.ndarray, closed: bool) -> np.ndarray:
    return _bending_terms(P, closed).sum(axis=-1)


def _check_segments(P: np.ndarray, closed: bool) -> np.ndarray:
    e = _edges(P, closed)
    norms = np.linalg.norm(e, axis=-1)
    bad = np.flatnonzero(norms <= SEGMENT_TOL)
    if bad.size:
        raise GradientSingularityError(int(bad[0]))
    return e


def _scatter_edge_grad(dE_da: np.ndarray, n_nodes: int, closed: bool,
                       arriving: bool) -> np.ndarray:
    """Distribute per-angle edge derivatives onto ambient node positions."""
    out = np.zeros((n_nodes, 3))
    if closed:
        idx = np.arange(n_nodes)
        if arriving:          # a_i = P_i - P_{i-1}
            np.add.at(out, idx, dE_da)
            np.add.at(out, (idx - 1) % n_nodes, -dE_da)
        else:                 # b_i = P_{i+1} - P_i
            np.add.at(out, (idx + 1) % n_nodes, dE_da)
            np.add.at(out, idx, -dE_da)
    else:
        idx = np.arange(1, n_nodes - 1)
        if arriving:          # a at interior node i is edge (i-1, i)
            np.add.at(out, idx, dE_da)
            np.add.at(out, idx - 1, -dE_da)
        else:
            np.add.at(out, idx + 1, dE_da)
            np.add.at(out, idx, -dE_da)
    return out


def make_loop_length(chart: SurfaceChart, N: int, closed: bool = True,
                     hessian_step: float = 1e-6) -> FunctionalHandle:
    """Polygonal length of a discretised loop in ambient 3-space.

    The gradient is analytic through the chart Jacobian; the Hessian is a
    symmetrised finite difference of that gradient.
    """
    if N < 8:
        raise DomainError("loops need at least 8 nodes")
    dim = 2 * N

    def val(x):
        # fsum keeps the value exactly invariant under cyclic relabeling
        e = _edges(_loop_points(chart, x), closed)
        return math.fsum(np.linalg.norm(e, axis=-1))

    def val_batch(xs):
        xs = np.asarray(xs, dtype=float)
        nodes = xs.reshape(xs.shape[0], N, 2)
        return _polygon_length(chart.embed(nodes), closed)

    def grad(x):
        nodes = np.asarray(x, dtype=float).reshape(N, 2)
        P = chart.embed(nodes)
        e = _check_segments(P, closed)
        unit = e / np.linalg.norm(e, axis=-1, keepdims=True)
        dP = np.zeros((N, 3))
        if closed:
            dP += np.roll(unit, 1, axis=0)   # arriving edge pulls +
            dP -= unit                       # leaving edge pulls -
        else:
            dP[1:] += unit
            dP[:-1] -= unit
        J = chart.d_embed(nodes)             # (N, 3, 2)
        return np.einsum("naj,na->nj", J, dP).reshape(dim)

    def hess(x):
        return fd_hessian_of_gradient(grad, np.asarray(x, dtype=float), hessian_step)

    return FunctionalHandle(val, grad, hess,
                            label=f"loop_length[{chart.label},N={N}]", dim=dim,
                            value_batch=val_batch)


def make_loop_bending(chart: SurfaceChart, N: int, closed: bool = True,
                      hessian_step: float = 1e-6) -> FunctionalHandle:
    """Curvature-bending regulariser sum_i (1 + kappa_i^2)^2 * lbar_i.

    kappa_i = 2 tan(theta_i / 2) / lbar_i with theta_i the exterior turning
    angle and lbar_i the mean of the adjacent segment lengths; dominates the
    total length, so it is coercive against curvature concentration.
    """
    if N < 8:
        raise DomainError("loops need at least 8 nodes")
    dim = 2 * N

    def val(x):
        return math.fsum(_bending_terms(_loop_points(chart, x), closed))

    def val_batch(xs):
        xs = np.asarray(xs, dtype=float)
        nodes = xs.reshape(xs.shape[0], N, 2)
        return _bending_energy(chart.embed(nodes), closed)

    def grad(x):
        nodes = np.asarray(x, dtype=float).reshape(N, 2)
        P = chart.embed(nodes)
        e = _check_segments(P, closed)
        if closed:
            a = np.roll(e, 1, axis=0)
            b = e
        else:
            a = e[:-1]
            b = e[1:]
        na = np.linalg.norm(a, axis=-1)
        nb = np.linalg.norm(b, axis=-1)
        ip = np.einsum("ni,ni->n", a, b)
        denom = na * nb + ip
        if np.any(denom <= SEGMENT_TOL * na * nb):
            raise GradientSingularityError(int(np.argmin(denom / (na * nb))))
        c = np.maximum(na ** 2 * nb ** 2 - ip ** 2, 0.0)
        lbar = 0.5 * (na + nb)
        T = 4.0 * c / (denom ** 2 * lbar ** 2)      # kappa^2
        Q = 1.0 + T
        # partials of the node term w = Q^2 lbar through c, denom, lbar
        dw_dT = 2.0 * Q * lbar
        dT_dc = 4.0 / (denom ** 2 * lbar ** 2)
        dT_dd = -8.0 * c / (denom ** 3 * lbar ** 2)
        dT_dl = -8.0 * c / (denom ** 2 * lbar ** 3)
        dw_dl = Q ** 2 + dw_dT * dT_dl
        dc_da = 2.0 * nb[:, None] ** 2 * a - 2.0 * ip[:, None] * b
        dc_db = 2.0 * na[:, None] ** 2 * b - 2.0 * ip[:, None] * a
        dd_da = (nb / na)[:, None] * a + b
        dd_db = (na / nb)[:, None] * b + a
        dl_da = a / (2.0 * na[:, None])
        dl_db = b / (2.0 * nb[:, None])
        dW_da = (dw_dT * dT_dc)[:, None] * dc_da + (dw_dT * dT_dd)[:, None] * dd_da \
            + dw_dl[:, None] * dl_da
        dW_db = (dw_dT * dT_dc)[:, None] * dc_db + (dw_dT * dT_dd)[:, None] * dd_db \
            + dw_dl[:, None] * dl_db
        dP = _scatter_edge_grad(dW_da, N, closed, arriving=True) \
            + _scatter_edge_grad(dW_db, N, closed, arriving=False)
        if not closed:
            # endpoint length shares with zero curvature
            unit0 = e[0] / np.linalg.norm(e[0])
            unit1 = e[-1] / np.linalg.norm(e[-1])
            dP[0] -= 0.5 * unit0
            dP[1] += 0.5 * unit0
            dP[-2] -= 0.5 * unit1
            dP[-1] += 0.5 * unit1
        J = chart.d_embed(nodes)
        return np.einsum("naj,na->nj", J, dP).reshape(dim)

    def hess(x):
        return fd_hessian_of_gradient(grad, np.asarray(x, dtype=float), hessian_step)

    return FunctionalHandle(val, grad, hess,
                            label=f"loop_bending[{chart.label},N={N}]", dim=dim,
                            value_batch=val_batch)


def make_alpha_energy(chart: SurfaceChart, N: int, sigma: float,
                      hessian_step: float = 1e-6) -> FunctionalHandle:
    """Discrete alpha-energy of a closed map into the surface.

    F_sigma(u) = (1/2) sum_i ((1 + |dP_i / h|^2)^(1+sigma) - 1) h over the
    circle grid of spacing h = 2 pi / N.  The regularisation sits in the
    exponent, so this family is exposed per fixed sigma rather than as an
    additive :class:`~viscmm.core.ViscousFamily`.
    """
    if N < 8:
        raise DomainError("alpha energy needs at least 8 nodes")
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    dim = 2 * N
    h = 2.0 * math.pi / N
    s = float(sigma)

    def energy(P):
        e = _edges(P, closed=True)
        z = np.einsum("...ni,...ni->...n", e, e) / h ** 2
        return 0.5 * h * np.sum((1.0 + z) ** (1.0 + s) - 1.0, axis=-1)

    def val(x):
        e = _edges(_loop_points(chart, x), closed=True)
        z = np.einsum("ni,ni->n", e, e) / h ** 2
        return 0.5 * h * math.fsum((1.0 + z) ** (1.0 + s) - 1.0)

    def val_batch(xs):
        xs = np.asarray(xs, dtype=float)
        nodes = xs.reshape(xs.shape[0], N, 2)
        return energy(chart.embed(nodes))

    def grad(x):
        nodes = np.asarray(x, dtype=float).reshape(N, 2)
        P = chart.embed(nodes)
        e = _edges(P, closed=True)
        z = np.einsum("ni,ni->n", e, e) / h ** 2
        w = (1.0 + s) * (1.0 + z) ** s / h      # d(term)/d(edge) = w * e
        dP = np.roll(w[:, None] * e, 1, axis=0) - w[:, None] * e
        J = chart.d_embed(nodes)
        return np.einsum("naj,na->nj", J, dP).reshape(dim)

    def hess(x):
        return fd_hessian_of_gradient(grad, np.asarray(x, dtype=float), hessian_step)

    return FunctionalHandle(val, grad, hess,
                            label=f"alpha_energy[{chart.label},N={N},sigma={s:g}]",
                            dim=dim, value_batch=val_batch)


class AlphaEnergyFamily:
    """Per-sigma evaluator for the alpha-energy (non-additive in sigma^2)."""

    def __init__(self, chart: SurfaceChart, N: int):
        self.chart = chart
        self.N = N

    def handle(self, sigma: float) -> FunctionalHandle:
        return make_alpha_energy(self.chart, self.N, sigma)


def circle_loop(N: int, v: float = 0.0, u0: float = 0.0) -> np.ndarray:
    """Node parameters (u_i, v) for a latitude-style loop, flattened."""
    u = u0 + 2.0 * math.pi * np.arange(N) / N
    nodes = np.stack([u, np.full(N, float(v))], axis=1)
    return nodes.reshape(-1)


# ---------------------------------------------------------------------------
# problem registry


@dataclass
class Problem:
    """A landscape bundled with its regulariser and a seed family."""

    key: str
    family: ViscousFamily
    d: int
    make_seed: Callable[[int], Sweepout]
    sample_point: Callable[[np.random.Generator], np.ndarray]
    box_radius: float = 1e3
    notes: str = ""


def _analytic_problem(key, base, reg, a, b, box=10.0, sampler_scale=1.5):
    fam = ViscousFamily(base, reg)

    def sample(rng):
        return rng.uniform(-sampler_scale, sampler_scale, size=base.dim)

    return Problem(
        key=key,
        family=fam,
        d=1,
        make_seed=lambda frames=33: make_line_sweepout(a, b, frames),
        sample_point=sample,
        box_radius=box,
    )


def _latitude_sweep_seed(chart: SurfaceChart, N: int, frames: int) -> Sweepout:
    """Loops from the north point-loop through the equator to the south one.

    Boundary frames are exact point loops (every node at a pole); they are
    evaluable (zero length, zero bending) but never differentiated.
    """
    ts = np.linspace(0.0, 1.0, frames)
    stack = []
    for t in ts:
        v = math.pi / 2 - math.pi * t
        stack.append(circle_loop(N, v=v))
    mask = np.zeros(frames, dtype=bool)
    mask[0] = mask[-1] = True
    return Sweepout(np.array(stack), mask)


def _loop_problem(key, chart, N):
    base = make_loop_length(chart, N)
    reg = make_loop_bending(chart, N)
    fam = ViscousFamily(base, reg)

    def sample(rng):
        # jittered round loop; jitter small enough to keep segments healthy
        x = circle_loop(N, v=rng.uniform(-0.3, 0.3))
        return x + rng.normal(scale=0.2 / N, size=x.size)

    return Problem(
        key=key,
        family=fam,
        d=1,
        make_seed=lambda frames=17: _latitude_sweep_seed(chart, N, frames),
        sample_point=sample,
        box_radius=1e4,
    )


def _parse_params(text: str) -> dict:
    params = {}
    if not text:
        return params
    for item in text.split(","):
        if not item:
            continue
        if "=" not in item:
            raise DomainError(f"malformed problem parameter {item!r}; expected key=value")
        k, v = item.split("=", 1)
        try:
            params[k.strip()] = int(v)
        except ValueError:
            try:
                params[k.strip()] = float(v)
            except ValueError:
                params[k.strip()] = v.strip()
    return params


PROBLEM_BUILDERS = {}


def _register(name):
    def wrap(fn):
        PROBLEM_BUILDERS[name] = fn
        return fn
    return wrap


@_register("quadratic_saddle")
def _build_quadratic(params):
    neg = int(params.pop("neg", 1))
    pos = int(params.pop("pos", 1))
    scales = params.pop("scales", None)
    if isinstance(scales, str):
        scales = [float(s) for s in scales.split("x")]
    base = make_quadratic_saddle(neg, pos, scales)
    n = neg + pos
    a = np.zeros(n)
    b = np.zeros(n)
    a[0], b[0] = -1.0, 1.0
    return _analytic_problem(f"quadratic_saddle:neg={neg},pos={pos}",
                             base, make_quartic_regularizer(n), a, b)


@_register("double_well")
def _build_double_well(params):
    a = float(params.pop("a", 1.0))
    k = float(params.pop("k", 5.0))
    base = make_double_well(a, k)
    return _analytic_problem(f"double_well:a={a:g},k={k:g}", base,
                             make_quartic_regularizer(2),
                             np.array([-a, 0.0]), np.array([a, 0.0]))


@_register("double_well_bump")
def _build_double_well_bump(params):
    amp = float(params.pop("amp", 1.0))
    width = float(params.pop("width", 0.1))
    base = make_double_well_bump(amp, width)
    return _analytic_problem(f"double_well_bump:amp={amp:g},width={width:g}", base,
                             make_quartic_regularizer(2),
                             np.array([-1.0, 0.0]), np.array([1.0, 0.0]))


@_register("monkey_wells")
def _build_monkey_wells(params):
    confine = float(params.pop("confine", 0.25))
    base = make_monkey_saddle(confine)
    # wells of the confined monkey landscape sit at r = 3/(4 confine)
    r = 3.0 / (4.0 * confine) if confine > 0 else 3.0
    a = np.array([r * math.cos(math.pi), r * math.sin(math.pi)])
    b = np.array([r * math.cos(math.pi / 3), r * math.sin(math.pi / 3)])
    prob = _analytic_problem(f"monkey_wells:confine={confine:g}", base,
                             make_quartic_regularizer(2), a, b,
                             box=50.0, sampler_scale=3.0)
    return prob


@_register("torus_loop")
def _build_torus_loop(params):
    R = float(params.pop("R", 2.0))
    r = float(params.pop("r", 0.5))
    N = int(params.pop("N", 16))
    chart = torus_chart(R, r)
    base = make_loop_length(chart, N)
    reg = make_loop_bending(chart, N)
    fam = ViscousFamily(base, reg)

    def make_seed(frames=17):
        ts = np.linspace(0.0, 1.0, frames)
        stack = [circle_loop(N, v=math.pi + 0.0 * t) for t in ts]
        mask = np.zeros(frames, dtype=bool)
        mask[0] = mask[-1] = True
        return Sweepout(np.array(stack), mask)

    def sample(rng):
        x = circle_loop(N, v=rng.uniform(0, 2 * math.pi))
        return x + rng.normal(scale=0.2 / N, size=x.size)

    return Problem(key=f"torus_loop:R={R:g},r={r:g},N={N}", family=fam, d=1,
                   make_seed=make_seed, sample_point=sample, box_radius=1e4)


@_register("ellipsoid_loop")
def _build_ellipsoid_loop(params):
    a = float(params.pop("a", 1.0))
    c = float(params.pop("c", 0.5))
    N = int(params.pop("N", 16))
    chart = ellipsoid_chart(a, c)
    prob = _loop_problem(f"ellipsoid_loop:a={a:g},c={c:g},N={N}", chart, N)
    return prob


@_register("alpha_circle")
def _build_alpha_circle(params):
    N = int(params.pop("N", 16))
    sigma = float(params.pop("sigma", 0.1))
    chart = ellipsoid_chart(1.0, 1.0)
    base = make_alpha_energy(chart, N, sigma)
    reg = make_loop_bending(chart, N)
    fam = ViscousFamily(base, reg)

    def sample(rng):
        x = circle_loop(N, v=rng.uniform(-0.3, 0.3))
        return x + rng.normal(scale=0.2 / N, size=x.size)

    return Problem(key=f"alpha_circle:N={N},sigma={sigma:g}", family=fam, d=1,
                   make_seed=lambda frames=17: _latitude_sweep_seed(chart, N, frames),
                   sample_point=sample, box_radius=1e4)


DEFAULT_PROBLEM_KEYS = [
    "quadratic_saddle",
    "double_well",
    "double_well_bump",
    "monkey_wells",
    "torus_loop",
    "ellipsoid_loop",
    "alpha_circle",
]


def build_problem(key: str) -> Problem:
    """Build a problem from a registry key like ``torus_loop:R=2,r=0.5,N=64``."""
    name, _, rest = key.partition(":")
    if name not in PROBLEM_BUILDERS:
        raise DomainError(
            f"unknown problem {name!r}; valid problems: {sorted(PROBLEM_BUILDERS)}")
    params = _parse_params(rest)
    prob = PROBLEM_BUILDERS[name](params)
    if params:
        raise DomainError(f"unknown parameters {sorted(params)} for problem {name!r}")
    return prob
