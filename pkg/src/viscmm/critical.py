"""Localisation and refinement of critical points, and their Morse data.

Near-critical points are harvested from near-optimal sweepouts by short
pseudo-gradient runs seeded at near-maximal frames, then polished to critical
points by a damped eigenvalue-space Newton solver.  Morse data comes from a
full symmetric eigendecomposition with a spectral-norm-relative null band.
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
    entropy_residual,
)
from .sweepout import Sweepout, WidthCurve, _frame_values


class RefineError(ViscmmError):
    """Refinement failed; carries the best iterate and its trace."""

    def __init__(self, message: str, best: np.ndarray, grad_norm: float,
                 trace: list):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm
        self.trace = trace


class LocateError(ViscmmError):
    """Localisation preconditions violated or no certificate found.

    When the search itself fails, ``best`` carries the most nearly critical
    candidate: the sweepout was not near-optimal enough.
    """

    def __init__(self, message: str, best: "NearCriticalCertificate | None" = None):
        super().__init__(message)
        self.best = best


@dataclass
class MorseData:
    """Eigenstructure of a Hessian: index, nullity, gap and split eigenbases."""

    eigenvalues: np.ndarray
    index: int
    nullity: int
    gap: float
    neg_basis: np.ndarray
    pos_basis: np.ndarray
    tol_null: float

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def degenerate(self) -> bool:
        return self.nullity > 0

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "index": int(self.index),
            "nullity": int(self.nullity),
            "gap": float(self.gap),
            "tol_null": float(self.tol_null),
            "neg_basis": [[float(v) for v in row] for row in self.neg_basis],
            "pos_basis": [[float(v) for v in row] for row in self.pos_basis],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MorseData":
        return cls(
            eigenvalues=np.array(d["eigenvalues"], dtype=float),
            index=d["index"],
            nullity=d["nullity"],
            gap=d["gap"],
            neg_basis=np.array(d["neg_basis"], dtype=float).reshape(
                len(d["eigenvalues"]), -1),
            pos_basis=np.array(d["pos_basis"], dtype=float).reshape(
                len(d["eigenvalues"]), -1),
            tol_null=d["tol_null"],
        )


def morse_data_from_matrix(hess: np.ndarray, tol_null: float | None = None,
                           null_band_factor: float = 1e-7) -> MorseData:
    """Classify a symmetric matrix; tol_null defaults to factor * spectral norm."""
    hess = np.asarray(hess, dtype=float)
    w, v = np.linalg.eigh(0.5 * (hess + hess.T))
    spectral = float(np.abs(w).max()) if w.size else 0.0
    if tol_null is None:
        tol_null = null_band_factor * max(spectral, 1e-300)
    neg = w < -tol_null
    null = np.abs(w) <= tol_null
    pos = w > tol_null
    outside = np.abs(w[~null])
    gap = float(outside.min()) if outside.size else 0.0
    return MorseData(
        eigenvalues=w,
        index=int(neg.sum()),
        nullity=int(null.sum()),
        gap=gap,
        neg_basis=v[:, neg],
        pos_basis=v[:, pos],
        tol_null=float(tol_null),
    )


def morse_data(x, family: ViscousFamily, sigma: float,
               tol_null: float | None = None,
               null_band_factor: float = 1e-7) -> MorseData:
    """Morse data of F_sigma at x (full symmetric eigendecomposition)."""
    return morse_data_from_matrix(family.hessian(x, sigma), tol_null,
                                  null_band_factor)


def weyl_spectrum_shift(h: np.ndarray, e: np.ndarray) -> float:
    """Max sorted-eigenvalue displacement of h under the perturbation e.

    Weyl's inequality bounds this by the spectral norm of e; it is the
    quantitative form of spectrum continuity used to certify that small
    Hessian perturbations cannot create or destroy a spectral gap.
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    w0 = np.linalg.eigvalsh(0.5 * (h + h.T))
    w1 = np.linalg.eigvalsh(0.5 * (h + h.T) + 0.5 * (e + e.T))
    return float(np.abs(w1 - w0).max())


def localization_radius(beta_prime: float, sigma_gap: float) -> float:
    """The localisation radius sqrt(2 (beta' + 2) (sigma_k - sigma))."""
    if sigma_gap <= 0:
        raise DomainError("sigma_k must exceed sigma")
    if beta_prime < 0:
        raise DomainError("beta' estimate must be nonnegative")
    return math.sqrt(2.0 * (beta_prime + 2.0) * sigma_gap)


def refine_handle(handle: FunctionalHandle, x0, tol_grad: float = 1e-9,
                  budget: int = 100, bound: float = 1e6) -> tuple[np.ndarray, list]:
    """Damped Newton iteration for a zero of the gradient.

    Steps are taken in the Hessian eigenbasis with eigenvalues floored in
    magnitude (sign kept), so saddles are approached as naturally as minima;
    a shrinking trust radius with a gradient-norm acceptance test makes the
    iteration safe far from quadratic behaviour.
    """
    if tol_grad <= 0:
        raise DomainError("tol_grad must be positive")
    x = np.asarray(x0, dtype=float).copy()
    trace = []
    g = handle.grad(x)
    gn = float(np.linalg.norm(g))
    radius = None
    for it in range(budget):
        trace.append((float(gn), x.copy()))
        if gn <= tol_grad:
            return x, trace
        if float(np.linalg.norm(x)) > bound:
            raise RefineError(f"diverged: |x| > {bound:g} after {it} steps",
                              x, gn, trace)
        h = handle.hess(x)
        w, v = np.linalg.eigh(h)
        spectral = float(np.abs(w).max()) if w.size else 0.0
        floor = max(1e-12, 1e-8 * spectral)
        wsafe = np.where(np.abs(w) < floor,
                         np.where(w >= 0, floor, -floor), w)
        step = -v @ ((v.T @ g) / wsafe)
        sn = float(np.linalg.norm(step))
        if radius is None:
            radius = max(sn, 1e-8)
        accepted = False
        for _ in range(25):
            s = step if sn <= radius else step * (radius / sn)
            try:
                g_new = handle.grad(x + s)
            except (EvaluationError, ViscmmError):
                radius *= 0.25
                continue
            gn_new = float(np.linalg.norm(g_new))
            if gn_new < gn:
                x = x + s
                g, gn = g_new, gn_new
                radius = min(radius * 2.0, 1e3 * max(sn, 1e-8))
                accepted = True
                break
            radius *= 0.25
        if not accepted:
            raise RefineError(
                f"stalled at grad norm {gn:.3e} after {it} steps", x, gn, trace)
    raise RefineError(f"budget {budget} exhausted at grad norm {gn:.3e}",
                      x, gn, trace)


def refine(x0, family: ViscousFamily, sigma: float, tol_grad: float = 1e-9,
           budget: int = 100, bound: float = 1e6,
           null_band_factor: float = 1e-7) -> CriticalPointRecord:
    """Polish a seed to a critical point of F_sigma and attach its Morse data."""
    handle = family.handle(sigma)
    x, _trace = refine_handle(handle, x0, tol_grad, budget, bound)
    md = morse_data(x, family, sigma, null_band_factor=null_band_factor)
    base_value = family.base(x)
    reg_value = family.regularizer(x)
    return CriticalPointRecord(
        point=x,
        sigma=float(sigma),
        value=family.value(x, sigma),
        base_value=base_value,
        reg_value=reg_value,
        grad_norm=float(np.linalg.norm(family.gradient(x, sigma))),
        morse=md,
        entropy_residual=entropy_residual(sigma, reg_value),
    )


@dataclass
class NearCriticalCertificate:
    """A point close to a near-optimal sweepout, nearly critical at sigma.

    delta_k is recomputable from the stored slope estimate as
    sqrt(2 (beta_prime_est + 2) (sigma_k - sigma)); the value bracket is
    [beta(sigma) - gap, beta(sigma_k) + gap] with gap = sigma_k - sigma.
    """

    point: np.ndarray
    sigma: float
    sigma_k: float
    delta_k: float
    beta_prime_est: float
    dist_to_sweepout: float
    value_bracket: tuple[float, float]
    value: float
    grad_norm: float
    base_floor_ok: bool
    sigma_domain_ok: bool

    def to_dict(self) -> dict:
        return {
            "point": [float(c) for c in self.point],
            "sigma": float(self.sigma),
            "sigma_k": float(self.sigma_k),
            "delta_k": float(self.delta_k),
            "beta_prime_est": float(self.beta_prime_est),
            "dist_to_sweepout": float(self.dist_to_sweepout),
            "value_bracket": [float(self.value_bracket[0]),
                              float(self.value_bracket[1])],
            "value": float(self.value),
            "grad_norm": float(self.grad_norm),
            "base_floor_ok": bool(self.base_floor_ok),
            "sigma_domain_ok": bool(self.sigma_domain_ok),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NearCriticalCertificate":
        return cls(point=np.array(d["point"], dtype=float), sigma=d["sigma"],
                   sigma_k=d["sigma_k"], delta_k=d["delta_k"],
                   beta_prime_est=d["beta_prime_est"],
                   dist_to_sweepout=d["dist_to_sweepout"],
                   value_bracket=(d["value_bracket"][0], d["value_bracket"][1]),
                   value=d["value"], grad_norm=d["grad_norm"],
                   base_floor_ok=d["base_floor_ok"],
                   sigma_domain_ok=d["sigma_domain_ok"])


def locate_near_critical(sweepout: Sweepout, family: ViscousFamily,
                         sigma: float, sigma_k: float, curve: WidthCurve,
                         budget: int = 200, top_fraction: float = 0.05,
                         ) -> NearCriticalCertificate:
    """Find a near-critical point of F_sigma close to a near-optimal sweepout.

    Requires sup F_sigma_k over the sweepout within sigma_k - sigma of the
    sampled width at sigma_k.  Gradient-descent runs seeded at the top
    fraction of frames stop as soon as a point satisfies all three
    certificate conditions: distance to the frame set, value bracket, and
    gradient norm, each controlled by delta_k.

    The checks that sigma is below exp(-4 / beta(0)) and that the base energy
    stays above (3/4) beta(0) are recorded on the certificate, not gated on.
    """
    sigma = float(sigma)
    sigma_k = float(sigma_k)
    gap = sigma_k - sigma
    if gap <= 0:
        raise LocateError(f"sigma_k = {sigma_k} must exceed sigma = {sigma}")
    beta_s = curve.beta_at(sigma)
    beta_k = curve.beta_at(sigma_k)
    handle_k = family.handle(sigma_k)
    flat = sweepout.flat_frames()
    sup_k = float(_frame_values(handle_k, flat).max())
    if sup_k > beta_k + gap + 1e-12:
        raise LocateError(
            f"sweepout not near-optimal at sigma_k: sup = {sup_k:.6g} exceeds "
            f"beta(sigma_k) + (sigma_k - sigma) = {beta_k + gap:.6g}")
    # the forward quotient over [sigma, sigma_k] is the slope the
    # localisation bound actually consumes
    bprime = max((beta_k - beta_s) / gap, 0.0)
    delta_k = localization_radius(bprime, gap)
    bracket = (beta_s - gap, beta_k + gap)
    beta0 = curve.beta0
    sigma_domain_ok = beta0 > 0 and sigma <= math.exp(-4.0 / beta0)

    handle = family.handle(sigma)
    vals = _frame_values(handle, flat)
    n_seeds = max(1, int(math.ceil(top_fraction * len(flat))))
    seeds = np.argsort(vals)[::-1][:n_seeds]

    def certificate(x):
        v = handle(x)
        g = handle.grad(x)
        gn = float(np.linalg.norm(g))
        dist = float(np.min(np.linalg.norm(flat - x, axis=1)))
        return NearCriticalCertificate(
            point=np.asarray(x, dtype=float).copy(), sigma=sigma, sigma_k=sigma_k,
            delta_k=delta_k, beta_prime_est=bprime, dist_to_sweepout=dist,
            value_bracket=bracket, value=v, grad_norm=gn,
            base_floor_ok=family.base(x) >= 0.75 * beta0,
            sigma_domain_ok=sigma_domain_ok)

    def admissible(cert):
        return (cert.grad_norm <= delta_k
                and cert.dist_to_sweepout <= delta_k
                and bracket[0] <= cert.value <= bracket[1])

    best = None
    for si in seeds:
        x = flat[si].copy()
        step0 = 0.1 * delta_k
        for _ in range(budget):
            cert = certificate(x)
            if best is None or cert.grad_norm < best.grad_norm:
                best = cert
            if admissible(cert):
                return cert
            g = handle.grad(x)
            gn = float(np.linalg.norm(g))
            if gn < 1e-15:
                break
            step = min(step0, 0.25 * delta_k / gn)
            fx = cert.value
            moved = False
            for _ in range(10):
                cand = x - step * g
                try:
                    if handle(cand) < fx:
                        x = cand
                        moved = True
                        break
                except EvaluationError:
                    pass
                step *= 0.5
            if not moved:
                break
    raise LocateError(
        "no near-critical certificate within budget; sweepout was not "
        "near-optimal for this sigma pair", best=best)


def index_semicontinuity_check(records, limit) -> bool:
    """Two-sided index semicontinuity along a converging family of records.

    True iff the limit index is at most every tail index and the limit
    index + nullity dominates every tail index + nullity; valid because the
    Hessians converge in norm along the family.
    """
    if not records:
        raise DomainError("need at least one record in the tail")
    for rec in list(records) + [limit]:
        if rec.morse is None:
            raise DomainError("all records need Morse data")
    tail_ind = [rec.morse.index for rec in records]
    tail_total = [rec.morse.index + rec.morse.nullity for rec in records]
    lim_ind = limit.morse.index
    lim_total = limit.morse.index + limit.morse.nullity
    return lim_ind <= min(tail_ind) and lim_total >= max(tail_total)
