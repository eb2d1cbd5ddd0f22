"""Morse charts, the index-killing deformation, and sweepout surgery.

At a non-degenerate critical point the energy is modelled in eigen-rescaled
linear coordinates where it equals level + |xi_plus|^2 - |xi_minus|^2 up to a
certified model error.  The deformation squashes the positive block inside a
cylinder around the critical point without raising the energy; surgery uses
it to push a family off an over-indexed critical point, projecting stranded
frames onto the negative-block sphere from a randomly drawn missed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CriticalPointRecord,
    DomainError,
    EvaluationError,
    FunctionalHandle,
    ViscmmError,
    ViscousFamily,
)
from .sweepout import Sweepout, _frame_values

VALIDITY_CAP = 1e3


class ChartError(ViscmmError):
    """Chart construction failed (degenerate record or unusable radii)."""


class SurgeryError(ViscmmError):
    """Surgery preconditions violated or the operation degenerated."""


class CutoffZeta:
    """Smoothstep profile: 0 on (-inf, 0], 1 on [1, inf), quintic in between.

    Also carries the companion plateau profile eta with eta = 1 on
    (-inf, 9/4] and eta = 0 on [4, inf), used for bump constructions.
    """

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        out = t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        if out.ndim == 0:
            return float(out)
        return out

    def derivative(self, t):
        tt = np.asarray(t, dtype=float)
        inside = (tt > 0) & (tt < 1)
        t_in = np.clip(tt, 0.0, 1.0)
        out = np.where(inside, 30.0 * t_in ** 2 * (1.0 - t_in) ** 2, 0.0)
        if out.ndim == 0:
            return float(out)
        return out

    def second_derivative(self, t):
        tt = np.asarray(t, dtype=float)
        inside = (tt > 0) & (tt < 1)
        t_in = np.clip(tt, 0.0, 1.0)
        out = np.where(inside,
                       60.0 * t_in * (1.0 - t_in) * (1.0 - 2.0 * t_in), 0.0)
        if out.ndim == 0:
            return float(out)
        return out

    # plateau profile eta(t): 1 for t <= 9/4, 0 for t >= 4
    _ETA_LO = 2.25
    _ETA_SPAN = 1.75

    def eta(self, t):
        return 1.0 - self((np.asarray(t, dtype=float) - self._ETA_LO) / self._ETA_SPAN)

    def eta_derivative(self, t):
        return -self.derivative((np.asarray(t, dtype=float) - self._ETA_LO)
                                / self._ETA_SPAN) / self._ETA_SPAN

    def eta_second_derivative(self, t):
        return -self.second_derivative((np.asarray(t, dtype=float) - self._ETA_LO)
                                       / self._ETA_SPAN) / self._ETA_SPAN ** 2


@dataclass
class MorseChart:
    """Eigen-rescaled linear coordinates around a non-degenerate critical point.

    Chart coordinates xi satisfy model(x) = level + |xi_plus|^2 - |xi_minus|^2
    with xi = sqrt(|lambda| / 2) * (eigenvector . (x - center)).  Within
    ``validity_radius`` (chart norm) the true energy deviates from the model
    by less than delta / 4.  Radii obey 2 r1 < r2 and 0 < delta < r2^2 - 4 r1^2.
    """

    center: np.ndarray
    level: float
    index: int
    scales_neg: np.ndarray       # sqrt(|lambda|) per negative direction
    scales_pos: np.ndarray
    basis_neg: np.ndarray        # (dim, index)
    basis_pos: np.ndarray
    r1: float
    r2: float
    delta: float
    validity_radius: float
    model_error: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not (2.0 * self.r1 < self.r2):
            raise ChartError(f"need 2 r1 < r2, got r1 = {self.r1}, r2 = {self.r2}")
        if not (0.0 < self.delta < self.r2 ** 2 - 4.0 * self.r1 ** 2):
            raise ChartError(
                f"need 0 < delta < r2^2 - 4 r1^2 = "
                f"{self.r2 ** 2 - 4 * self.r1 ** 2:.6g}, got {self.delta}")

    @property
    def dim(self) -> int:
        return self.center.size

    def to_coords(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Chart coordinates (xi_minus, xi_plus) of a point."""
        y = np.asarray(x, dtype=float) - self.center
        xi_neg = (self.scales_neg / math.sqrt(2.0)) * (self.basis_neg.T @ y)
        xi_pos = (self.scales_pos / math.sqrt(2.0)) * (self.basis_pos.T @ y)
        return xi_neg, xi_pos

    def from_coords(self, xi_neg, xi_pos) -> np.ndarray:
        y = np.zeros(self.dim)
        if self.index:
            y += self.basis_neg @ (math.sqrt(2.0) * np.asarray(xi_neg) / self.scales_neg)
        if self.dim - self.index:
            y += self.basis_pos @ (math.sqrt(2.0) * np.asarray(xi_pos) / self.scales_pos)
        return self.center + y

    def model_value(self, x) -> float:
        xi_neg, xi_pos = self.to_coords(x)
        return self.level + float(xi_pos @ xi_pos) - float(xi_neg @ xi_neg)

    def chart_norm(self, x) -> float:
        xi_neg, xi_pos = self.to_coords(x)
        return math.hypot(float(np.linalg.norm(xi_neg)),
                          float(np.linalg.norm(xi_pos)))

    def in_cylinder(self, x, s: float, t: float) -> bool:
        """x in C(s, t) = preimage of B_minus(0, s) + B_plus(0, t)."""
        xi_neg, xi_pos = self.to_coords(x)
        return (np.linalg.norm(xi_neg) <= s) and (np.linalg.norm(xi_pos) <= t)

    def shrunk(self, rho: float) -> "MorseChart":
        """The same chart with radii refit from a smaller working radius.

        Shrinking is always safe: the sampled model error certified on the
        larger region dominates the error on the smaller one, while the
        fitting rule's error target only tightens quadratically.
        """
        if rho <= 0:
            raise ChartError("shrunk radius must be positive")
        if rho > self.validity_radius:
            raise ChartError("cannot grow a chart; refit instead")
        r1, r2, delta = _radii_from_validity(rho)
        return MorseChart(
            center=self.center, level=self.level, index=self.index,
            scales_neg=self.scales_neg, scales_pos=self.scales_pos,
            basis_neg=self.basis_neg, basis_pos=self.basis_pos,
            r1=r1, r2=r2, delta=delta, validity_radius=rho,
            model_error=self.model_error)

    def to_dict(self) -> dict:
        return {
            "center": [float(c) for c in self.center],
            "level": float(self.level),
            "index": int(self.index),
            "scales_neg": [float(s) for s in self.scales_neg],
            "scales_pos": [float(s) for s in self.scales_pos],
            "r1": float(self.r1),
            "r2": float(self.r2),
            "delta": float(self.delta),
            "validity_radius": float(self.validity_radius),
            "model_error": float(self.model_error),
            "eigenvalues_neg": [-float(s) ** 2 for s in self.scales_neg],
            "eigenvalues_pos": [float(s) ** 2 for s in self.scales_pos],
        }


def _sample_chart_ball(chart: MorseChart, rho: float, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Points uniformly in the chart-norm ball of radius rho (ambient coords)."""
    dim = chart.dim
    z = rng.normal(size=(n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radii = rho * rng.uniform(0.0, 1.0, size=n) ** (1.0 / dim)
    pts = np.empty((n, dim))
    for i in range(n):
        xi = radii[i] * z[i]
        pts[i] = chart.from_coords(xi[:chart.index], xi[chart.index:])
    return pts


def _max_model_error(handle: FunctionalHandle, chart: MorseChart, rho: float,
                     n: int, rng: np.random.Generator) -> float:
    pts = _sample_chart_ball(chart, rho, n, rng)
    worst = 0.0
    for p in pts:
        try:
            worst = max(worst, abs(handle(p) - chart.model_value(p)))
        except EvaluationError:
            return math.inf
    return worst


def _radii_from_validity(rho: float) -> tuple[float, float, float]:
    """The fitting rule r2 = rho/2, r1 = r2/4, delta = (r2^2 - 4 r1^2)/2."""
    r2 = rho / 2.0
    r1 = r2 / 4.0
    delta = (r2 ** 2 - 4.0 * r1 ** 2) / 2.0
    return r1, r2, delta


def build_chart(record: CriticalPointRecord, family: ViscousFamily,
                sigma: float, *, r1: float | None = None,
                r2: float | None = None, samples: int = 160,
                rng: np.random.Generator | None = None) -> MorseChart:
    """Fit a Morse chart at a refined non-degenerate critical point.

    The validity radius is found by bisection on the sampled model error
    against the self-consistent target delta(rho) / 4; explicit r1, r2
    override the automatic rule (delta then follows as (r2^2 - 4 r1^2) / 2).
    """
    if record.morse is None:
        raise ChartError("record carries no Morse data; refine it first")
    md = record.morse
    if md.degenerate or md.gap <= md.tol_null:
        raise ChartError(
            "degenerate critical point: no Morse chart exists; apply a "
            "compactly supported tilt (perturb module) first")
    if rng is None:
        rng = np.random.default_rng(0)
    handle = family.handle(sigma)
    w = md.eigenvalues
    neg = w < -md.tol_null
    pos = w > md.tol_null
    chart = MorseChart(
        center=record.point,
        level=handle(record.point),
        index=md.index,
        scales_neg=np.sqrt(np.abs(w[neg])),
        scales_pos=np.sqrt(w[pos]),
        basis_neg=md.neg_basis,
        basis_pos=md.pos_basis,
        r1=1.0, r2=3.0, delta=2.0,       # placeholders until radii are fitted
        validity_radius=VALIDITY_CAP,
        model_error=0.0,
    )

    def fits(rho: float) -> tuple[bool, float]:
        err = _max_model_error(handle, chart, rho, samples, rng)
        _, _, delta = _radii_from_validity(rho)
        return err <= delta / 4.0, err

    if r1 is not None or r2 is not None:
        if r1 is None or r2 is None:
            raise ChartError("override needs both r1 and r2")
        delta = (r2 ** 2 - 4.0 * r1 ** 2) / 2.0
        rho = max(r2, 2 * r1) * 2.0
        err = _max_model_error(handle, chart, rho, samples, rng)
        chart.r1, chart.r2, chart.delta = r1, r2, delta
        chart.validity_radius = rho
        chart.model_error = err
        return MorseChart(**{k: getattr(chart, k) for k in (
            "center", "level", "index", "scales_neg", "scales_pos",
            "basis_neg", "basis_pos", "r1", "r2", "delta",
            "validity_radius", "model_error")})

    hi = VALIDITY_CAP
    ok_hi, err_hi = fits(hi)
    if ok_hi:
        rho, err = hi, err_hi
    else:
        lo = 0.0
        err = math.inf
        rho = hi
        for _ in range(60):
            mid = 0.5 * (lo + hi) if lo > 0 else hi / 4.0
            ok, e = fits(mid)
            if ok:
                lo, err = mid, e
            else:
                hi = mid
            if lo > 0 and (hi - lo) < 1e-3 * lo:
                break
        if lo == 0.0:
            raise ChartError("no validity radius found: model error does not "
                             "shrink quadratically near the point")
        rho, err = lo, err if math.isfinite(err) else 0.0
    r1f, r2f, deltaf = _radii_from_validity(rho)
    chart.r1, chart.r2, chart.delta = r1f, r2f, deltaf
    chart.validity_radius = rho
    chart.model_error = err
    return MorseChart(**{k: getattr(chart, k) for k in (
        "center", "level", "index", "scales_neg", "scales_pos",
        "basis_neg", "basis_pos", "r1", "r2", "delta",
        "validity_radius", "model_error")})


def deform_phi(x, chart: MorseChart, zeta: CutoffZeta | None = None) -> np.ndarray:
    """The index-killing deformation: squash the positive block inside the cylinder.

    Identity outside C(2 r1, r2); inside, the positive chart block is scaled
    by zeta(|xi_minus| / r1 - 1).  Never increases the model energy; points of
    the boundary face |xi_minus| = r1 land exactly on the negative-block
    sphere (their positive block is zeroed).
    """
    if zeta is None:
        zeta = CutoffZeta()
    x = np.asarray(x, dtype=float)
    xi_neg, xi_pos = chart.to_coords(x)
    rn = float(np.linalg.norm(xi_neg))
    rp = float(np.linalg.norm(xi_pos))
    if rn > 2.0 * chart.r1 or rp > chart.r2:
        return x.copy()
    factor = zeta(rn / chart.r1 - 1.0)
    return chart.from_coords(xi_neg, factor * xi_pos)


@dataclass
class SurgeryReport:
    """Before/after bookkeeping of one surgery pass."""

    kind: str
    sup_before: float
    sup_after: float
    frames_moved: int
    frames_projected: int
    frames_deleted: int
    missed_point: list | None
    avoided_radius: float
    center: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sup_before": float(self.sup_before),
            "sup_after": float(self.sup_after),
            "frames_moved": int(self.frames_moved),
            "frames_projected": int(self.frames_projected),
            "frames_deleted": int(self.frames_deleted),
            "missed_point": self.missed_point,
            "avoided_radius": float(self.avoided_radius),
            "center": list(self.center),
        }


def _radial_projection(z: np.ndarray, p: np.ndarray, r: float) -> np.ndarray:
    """Exit point of the ray p -> z on the sphere |.| = r (requires |p| < r)."""
    d = z - p
    dn = float(d @ d)
    if dn == 0.0:
        raise SurgeryError("projection source coincides with the missed point")
    b = float(p @ d) / dn
    c = (float(p @ p) - r * r) / dn
    t = -b + math.sqrt(b * b - c)
    return p + t * d


def _draw_missed_point(images: np.ndarray, r1: float, dim: int,
                       rng: np.random.Generator, draws: int = 1000
                       ) -> np.ndarray:
    """A point of B_minus(0, 0.9 r1) safely away from all frame images.

    Genericity realised by rejection sampling: the images are finitely many
    points of a lower-dimensional set, so a uniform draw misses them with
    overwhelming probability.
    """
    if len(images) == 0:
        return np.zeros(dim)
    if len(images) > 1:
        diffs = np.linalg.norm(np.diff(images, axis=0), axis=1)
        spacing = float(np.median(diffs)) if len(diffs) else 0.1 * r1
    else:
        spacing = 0.1 * r1
    clearance = min(2.0 * spacing, 0.45 * r1)
    clearance = max(clearance, 1e-3 * r1)
    for _ in range(draws):
        z = rng.normal(size=dim)
        z /= np.linalg.norm(z)
        p = 0.9 * r1 * rng.uniform(0.0, 1.0) ** (1.0 / dim) * z
        if np.min(np.linalg.norm(images - p, axis=1)) > clearance:
            return p
    raise SurgeryError(
        f"no missed point found in {draws} draws: the frame images fill the "
        "negative disc, which indicates the family dimension reaches the index")


def surgery_admissible(sweepout: Sweepout, chart: MorseChart,
                       family: ViscousFamily, sigma: float,
                       d: int | None = None,
                       rng: np.random.Generator | None = None,
                       sup_tol: float = 1e-12
                       ) -> tuple[Sweepout, SurgeryReport]:
    """Push an admissible family off an over-indexed critical point.

    Requires index > d and sup F_sigma <= level + delta.  Frames inside
    C(2 r1, r2) are deformed; frames that started inside the open cylinder
    C(r1, r2) are then sent to the negative-block sphere of radius r1 by
    radial projection from a missed interior point.  The sup does not
    increase and no frame remains within chart radius r1 / 2 of the center.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if d is None:
        d = sweepout.d
    if chart.index <= d:
        raise SurgeryError(
            f"surgery not applicable, index within bound: index = "
            f"{chart.index} <= d = {d}")
    handle = family.handle(sigma)
    flat = sweepout.flat_frames().copy()
    mask = sweepout.flat_mask()
    # shrink the chart until the surgery cylinder clears every boundary frame
    # (the cylinder C(2 r1, r2) sits inside the chart ball of radius
    # sqrt(5)/4 * rho under the fitting rule)
    if mask.any():
        clearance = min(chart.chart_norm(flat[i]) for i in np.flatnonzero(mask))
        need = 0.9 * clearance / (math.sqrt(5.0) / 4.0)
        if need < chart.validity_radius:
            if need <= 1e-10 * (1.0 + float(np.abs(chart.center).max())):
                raise SurgeryError(
                    "a boundary frame sits essentially at the critical point")
            chart = chart.shrunk(need)
    vals = _frame_values(handle, flat)
    sup_before = float(vals.max())
    if sup_before > chart.level + chart.delta + sup_tol:
        raise SurgeryError(
            f"sweepout is not close enough to the level: sup = "
            f"{sup_before:.6g} > level + delta = "
            f"{chart.level + chart.delta:.6g}; tighten further first")

    zeta = CutoffZeta()
    moved = 0
    stranded = []   # frames that started in the open cylinder C(r1, r2)
    for i in np.flatnonzero(~mask):
        x = flat[i]
        xi_neg, xi_pos = chart.to_coords(x)
        rn = float(np.linalg.norm(xi_neg))
        rp = float(np.linalg.norm(xi_pos))
        if rn < chart.r1 and rp < chart.r2:
            stranded.append(i)
        if rn <= 2 * chart.r1 and rp <= chart.r2:
            flat[i] = deform_phi(x, chart, zeta)
            moved += 1

    k = chart.index
    images = np.array([chart.to_coords(flat[i])[0] for i in stranded]) \
        if stranded else np.zeros((0, k))
    missed = None
    if stranded:
        missed = _draw_missed_point(images, chart.r1, k, rng)
        for row, i in enumerate(stranded):
            xi_proj = _radial_projection(images[row], missed, chart.r1)
            flat[i] = chart.from_coords(xi_proj, np.zeros(chart.dim - k))

    out = Sweepout(flat.reshape(sweepout.frames.shape),
                   sweepout.boundary_mask.copy())
    vals_after = _frame_values(handle, out.flat_frames())
    sup_after = float(vals_after.max())
    if sup_after > sup_before + sup_tol:
        raise SurgeryError(
            f"surgery raised the sup ({sup_before:.6g} -> {sup_after:.6g}); "
            "the chart model is not valid on this sweepout")
    eps = chart.r1 / 2.0
    for i, x in enumerate(out.flat_frames()):
        if chart.chart_norm(x) < eps and not mask[i]:
            raise SurgeryError(f"frame {i} still within the avoided ball")
    report = SurgeryReport(
        kind="admissible", sup_before=sup_before, sup_after=sup_after,
        frames_moved=moved, frames_projected=len(stranded), frames_deleted=0,
        missed_point=None if missed is None else [float(v) for v in missed],
        avoided_radius=eps, center=[float(c) for c in chart.center])
    return out, report


def surgery_dual(pointset: Sweepout, chart: MorseChart,
                 family: ViscousFamily, sigma: float,
                 d: int | None = None, sup_tol: float = 1e-12
                 ) -> tuple[Sweepout, SurgeryReport]:
    """Deform a dual family and delete what remains inside the open cylinder.

    Requires index < d.  Deleted frames all had energy strictly below the
    sup (their positive block was squashed first), which the report records.
    """
    if d is None:
        d = pointset.d
    if chart.index >= d:
        raise SurgeryError(
            f"dual surgery needs index < d, got index = {chart.index} >= {d}")
    handle = family.handle(sigma)
    flat = pointset.flat_frames().copy()
    mask = pointset.flat_mask()
    vals = _frame_values(handle, flat)
    sup_before = float(vals.max())
    zeta = CutoffZeta()
    moved = 0
    for i in np.flatnonzero(~mask):
        new = deform_phi(flat[i], chart, zeta)
        if not np.array_equal(new, flat[i]):
            moved += 1
        flat[i] = new
    keep = np.ones(len(flat), dtype=bool)
    deleted_vals = []
    for i in np.flatnonzero(~mask):
        xi_neg, xi_pos = chart.to_coords(flat[i])
        if (np.linalg.norm(xi_neg) < chart.r1
                and np.linalg.norm(xi_pos) < chart.r2):
            keep[i] = False
            deleted_vals.append(handle(flat[i]))
    n_deleted = int((~keep).sum())
    if keep.sum() == 0:
        raise SurgeryError("dual surgery deleted every frame: empty sweepout")
    if pointset.d == 1 and keep.sum() < 16:
        raise SurgeryError(
            f"dual surgery left only {int(keep.sum())} frames; too few for a "
            "d=1 sweepout")
    if deleted_vals and max(deleted_vals) >= sup_before - sup_tol:
        raise SurgeryError("a deleted frame carried the sup; chart too large")
    if pointset.d == 1:
        out = Sweepout(flat[keep], mask[keep])
    else:
        raise SurgeryError("dual surgery deletion implemented for d=1 pointsets")
    vals_after = _frame_values(handle, out.flat_frames())
    sup_after = float(vals_after.max())
    report = SurgeryReport(
        kind="dual", sup_before=sup_before, sup_after=sup_after,
        frames_moved=moved, frames_projected=0, frames_deleted=n_deleted,
        missed_point=None, avoided_radius=chart.r1,
        center=[float(c) for c in chart.center])
    return out, report


def certify_index_bound(record: CriticalPointRecord, d: int,
                        family_kind: str) -> bool:
    """Index verdict for a record against the family dimension.

    admissible: index <= d; dual: index >= d;
    codual: index <= d <= index + nullity.
    """
    if record.morse is None:
        raise DomainError("record carries no Morse data")
    ind = record.morse.index
    null = record.morse.nullity
    if family_kind == "admissible":
        return ind <= d
    if family_kind == "dual":
        return ind >= d
    if family_kind == "codual":
        return ind <= d <= ind + null
    raise DomainError(f"unknown family kind {family_kind!r}; "
                      "expected admissible | dual | codual")
