"""Discretised min-max families: sweepouts, tightening, and width curves.

A sweepout is a stack of frames (points in the coordinate space) indexed by a
1- or 2-dimensional parameter grid, with a boolean mask freezing the boundary
frames.  Membership in a family means: reachable from the seed by
boundary-preserving deformation, which is exactly what :func:`tighten`
performs.  Width curves sample ``beta(sigma) = inf sup F_sigma`` over a sigma
grid with warm starts and are forced monotone by pool-adjacent-violators.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    DomainError,
    EvaluationError,
    FunctionalHandle,
    ViscmmError,
    ViscousFamily,
    worker_count,
)

MIN_FRAMES_1D = 16


class SweepoutError(ViscmmError):
    """Invalid sweepout construction or operation."""


@dataclass
class Sweepout:
    """Frames of a d-parameter family with frozen boundary frames.

    ``frames`` has shape (*param_shape, dim) with d = len(param_shape) in
    {1, 2}; ``boundary_mask`` has shape param_shape, True where frozen.
    """

    frames: np.ndarray
    boundary_mask: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        self.boundary_mask = np.asarray(self.boundary_mask, dtype=bool)
        if self.frames.ndim not in (2, 3):
            raise SweepoutError("frames must have shape (*param_shape, dim) with d in {1, 2}")
        if self.boundary_mask.shape != self.frames.shape[:-1]:
            raise SweepoutError(
                f"boundary mask shape {self.boundary_mask.shape} does not match "
                f"parameter shape {self.frames.shape[:-1]}")
        if not np.all(np.isfinite(self.frames)):
            raise SweepoutError("frames contain non-finite coordinates")
        if self.d == 1 and self.frame_count < MIN_FRAMES_1D:
            raise SweepoutError(
                f"d=1 sweepouts need at least {MIN_FRAMES_1D} frames, got {self.frame_count}")
        if self.d == 2 and min(self.frames.shape[:2]) < 2:
            raise SweepoutError("d=2 sweepouts need at least a 2x2 grid")

    @property
    def d(self) -> int:
        return self.frames.ndim - 1

    @property
    def dim(self) -> int:
        return self.frames.shape[-1]

    @property
    def frame_count(self) -> int:
        return int(np.prod(self.frames.shape[:-1]))

    def flat_frames(self) -> np.ndarray:
        return self.frames.reshape(self.frame_count, self.dim)

    def flat_mask(self) -> np.ndarray:
        return self.boundary_mask.reshape(self.frame_count)

    def copy(self) -> "Sweepout":
        return Sweepout(self.frames.copy(), self.boundary_mask.copy())

    def boundary_frames(self) -> np.ndarray:
        return self.flat_frames()[self.flat_mask()]

    def to_dict(self) -> dict:
        shape = self.frames.shape[:-1]
        return {
            "d": self.d,
            "M": int(shape[0]) if self.d == 1 else [int(s) for s in shape],
            "dim": self.dim,
            "boundary_mask": [int(b) for b in self.flat_mask()],
            "frames": [float(v) for v in self.frames.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sweepout":
        shape = (d["M"],) if d["d"] == 1 else tuple(d["M"])
        frames = np.array(d["frames"], dtype=float).reshape(*shape, d["dim"])
        mask = np.array(d["boundary_mask"], dtype=bool).reshape(shape)
        return cls(frames, mask)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Sweepout":
        return cls.from_dict(json.loads(text))


def make_line_sweepout(a, b, frames: int = 33) -> Sweepout:
    """Straight-line d=1 seed from a to b with frozen endpoints."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.linspace(0.0, 1.0, frames)[:, None]
    pts = (1 - t) * a[None, :] + t * b[None, :]
    mask = np.zeros(frames, dtype=bool)
    mask[0] = mask[-1] = True
    return Sweepout(pts, mask)


def make_constant_sweepout(x, frames: int = 16) -> Sweepout:
    x = np.asarray(x, dtype=float)
    pts = np.tile(x, (frames, 1))
    mask = np.zeros(frames, dtype=bool)
    mask[0] = mask[-1] = True
    return Sweepout(pts, mask)


def _frame_values(handle: FunctionalHandle, flat: np.ndarray) -> np.ndarray:
    """Values over frames; threads used only when no batch evaluator exists."""
    if handle.value_batch is not None:
        return handle.values(flat)
    n = worker_count()
    if n > 1 and len(flat) > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            return np.array(list(ex.map(handle, flat)))
    return np.array([handle(x) for x in flat])


def sup_over(sweepout: Sweepout, family: ViscousFamily, sigma: float):
    """Maximum of F_sigma over the frames and its (flat, row-major) argmax.

    Ties resolve to the lowest index.  Evaluation failures re-raise with the
    offending frame index attached.
    """
    handle = family.handle(sigma)
    flat = sweepout.flat_frames()
    try:
        vals = _frame_values(handle, flat)
    except EvaluationError:
        vals = np.empty(len(flat))
        for i, x in enumerate(flat):
            try:
                vals[i] = handle(x)
            except EvaluationError as err:
                raise EvaluationError(f"frame {i}: {err}", x) from err
    if not np.all(np.isfinite(vals)):
        i = int(np.argmax(~np.isfinite(vals)))
        raise EvaluationError(f"frame {i}: non-finite value", flat[i])
    idx = int(np.argmax(vals))
    return float(vals[idx]), idx


def _arclengths(pts: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _respace_line(pts: np.ndarray) -> np.ndarray:
    """Resample a polyline at uniform arclength, endpoints fixed."""
    s = _arclengths(pts)
    total = s[-1]
    if total <= 0:
        return pts.copy()
    targets = np.linspace(0.0, total, len(pts))
    out = np.empty_like(pts)
    for j in range(pts.shape[1]):
        out[:, j] = np.interp(targets, s, pts[:, j])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _respace_frames(frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Equalise consecutive spacing along each parameter axis between anchors."""
    if frames.ndim == 2:
        out = frames.copy()
        anchors = [i for i, m in enumerate(mask) if m]
        if not anchors:
            anchors = [0, len(frames) - 1]
        bounds = sorted(set(anchors) | {0, len(frames) - 1})
        for a, b in zip(bounds, bounds[1:]):
            if b - a >= 2:
                out[a:b + 1] = _respace_line(frames[a:b + 1])
        return out
    out = frames.copy()
    for i in range(frames.shape[0]):     # rows
        if not mask[i].any():
            out[i] = _respace_line(out[i])
    for j in range(frames.shape[1]):     # columns
        if not mask[:, j].any():
            out[:, j] = _respace_line(out[:, j])
    return out


def _mean_spacing(frames: np.ndarray) -> float:
    if frames.ndim == 2:
        seg = np.linalg.norm(np.diff(frames, axis=0), axis=1)
        return float(seg.mean()) if len(seg) else 0.0
    a = np.linalg.norm(np.diff(frames, axis=0), axis=-1).mean()
    b = np.linalg.norm(np.diff(frames, axis=1), axis=-1).mean()
    return float(0.5 * (a + b))


def tighten(sweepout: Sweepout, family: ViscousFamily, sigma: float,
            budget: int, *, tau_factor: float = 0.05, respace: bool = True,
            step_scale: float = 1.0, sup_tol: float = 1e-12) -> Sweepout:
    """Boundary-preserving descent of the frames; sup never increases.

    Each interior frame takes a backtracked step along -grad F_sigma with a
    displacement budget weighted by softmax(F_i - max)/tau, followed by an
    arclength respacing pass that is accepted only when it does not raise the
    discrete sup.  Line-search failures leave the frame unchanged and are
    counted in ``meta['line_search_failures']``.
    """
    if budget < 1:
        raise DomainError("tighten budget must be >= 1")
    handle = family.handle(sigma)
    frames = sweepout.flat_frames().copy()
    mask = sweepout.flat_mask()
    shape = sweepout.frames.shape
    failures = 0
    iterations = 0

    def shaped(f):
        return f.reshape(shape)

    vals = _frame_values(handle, frames)
    sup_history: list[float] = []
    for _ in range(budget):
        iterations += 1
        sup_start = float(vals.max())
        top = sup_start
        bottom = float(vals.min())
        tau = tau_factor * (top - bottom)
        if tau <= 0 or not math.isfinite(tau):
            weights = np.ones_like(vals)
        else:
            weights = np.exp((vals - top) / tau)
        spacing = _mean_spacing(shaped(frames))
        if spacing <= 0:
            spacing = 1e-3
        live = np.flatnonzero(~mask)
        grads = {}
        norms = []
        for i in live:
            if weights[i] < 1e-10:
                continue
            try:
                g = handle.grad(frames[i])
            except EvaluationError:
                failures += 1
                continue
            grads[i] = g
            norms.append(float(np.linalg.norm(g)))
        if not grads:
            break
        # flow-like time step: the fast frames move about one spacing, while
        # near-stationary frames move proportionally to their own gradient
        # (a spacing-normalised step would kick frames off exact saddles)
        scale_g = float(np.percentile(norms, 90)) if norms else 0.0
        if scale_g <= 0:
            break
        eta = step_scale * spacing / scale_g
        moved = 0.0
        for i, g in grads.items():
            gn = float(np.linalg.norm(g))
            fx = vals[i]
            step = min(eta * weights[i], spacing / gn if gn > 0 else eta)
            # expected first-order decrease below roundoff: not worth a step
            if gn * gn * step < 1e-16 * (1.0 + abs(fx)):
                continue
            accepted = False
            for _ in range(14):
                cand = frames[i] - step * g
                try:
                    fc = handle(cand)
                except EvaluationError:
                    step *= 0.5
                    continue
                if fc <= fx:
                    moved = max(moved, step * gn)
                    frames[i] = cand
                    vals[i] = fc
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                failures += 1
        if respace:
            # guard against the iteration-start sup, not the post-descent one:
            # descent can undersample a ridge crossing, and respacing must be
            # allowed to restore honest sampling up to the start level
            cand = _respace_frames(shaped(frames), sweepout.boundary_mask)
            flat_cand = cand.reshape(frames.shape)
            try:
                cand_vals = _frame_values(handle, flat_cand)
                ok = np.all(np.isfinite(cand_vals))
            except EvaluationError:
                ok = False
            if ok and float(cand_vals.max()) <= sup_start + sup_tol:
                moved = max(moved, float(np.linalg.norm(flat_cand - frames, axis=1).max()))
                frames = flat_cand
                vals = cand_vals
        sup_history.append(float(vals.max()))
        if moved < 1e-13 * (1.0 + spacing):
            break
        if len(sup_history) >= 15:
            recent = sup_history[-15:]
            if max(recent) - min(recent) < 1e-14 * (1.0 + abs(recent[-1])):
                break

    out = Sweepout(shaped(frames), sweepout.boundary_mask.copy())
    out.meta["line_search_failures"] = failures
    out.meta["iterations"] = iterations
    return out


def _refine_sup(frames_flat: np.ndarray, vals: np.ndarray, d: int):
    """Parabolic vertex through the argmax triple along arclength (d=1 only).

    Cuts the O(spacing^2) bias of the discrete max; falls back to the
    discrete value at boundary argmax or non-concave fits.
    """
    idx = int(np.argmax(vals))
    top = float(vals[idx])
    if d != 1 or idx == 0 or idx == len(vals) - 1:
        return top, idx
    s = _arclengths(frames_flat[idx - 1:idx + 2])
    y = vals[idx - 1:idx + 2]
    s0, s1, s2 = s
    denom = (s0 - s1) * (s0 - s2) * (s1 - s2)
    if denom == 0:
        return top, idx
    a = (s2 * (y[1] - y[0]) + s1 * (y[0] - y[2]) + s0 * (y[2] - y[1])) / denom
    b = (s2 ** 2 * (y[0] - y[1]) + s1 ** 2 * (y[2] - y[0]) + s0 ** 2 * (y[1] - y[2])) / denom
    if a >= 0:
        return top, idx
    sv = -b / (2 * a)
    if not (s0 <= sv <= s2):
        return top, idx
    c = y[0] - a * s0 ** 2 - b * s0
    return float(a * sv ** 2 + b * sv + c), idx


def isotonic_nondecreasing(y: Sequence[float]) -> np.ndarray:
    """Pool-adjacent-violators projection onto nondecreasing sequences."""
    blocks = [[float(v), 1] for v in y]
    out = []
    for b in blocks:
        out.append(b)
        while len(out) > 1 and out[-2][0] > out[-1][0]:
            s2, n2 = out.pop()
            s1, n1 = out.pop()
            out.append([(s1 * n1 + s2 * n2) / (n1 + n2), n1 + n2])
    result = []
    for mean, n in out:
        result.extend([mean] * n)
    return np.array(result)


@dataclass
class WidthCurve:
    """Monotone samples of the width beta(sigma) with argmax bookkeeping."""

    sigmas: np.ndarray
    betas: np.ndarray               # post-isotonic, nondecreasing
    betas_raw: np.ndarray
    argmax_frames: np.ndarray
    tightened: list | None = None   # retained minimising sweepouts, one per sigma

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        self.betas = np.asarray(self.betas, dtype=float)
        self.betas_raw = np.asarray(self.betas_raw, dtype=float)
        self.argmax_frames = np.asarray(self.argmax_frames, dtype=int)

    @property
    def beta0(self) -> float:
        return float(self.betas[0])

    def beta_at(self, sigma: float) -> float:
        sigma = float(sigma)
        if sigma < self.sigmas[0] - 1e-15 or sigma > self.sigmas[-1] + 1e-15:
            raise DomainError(f"sigma {sigma} outside sampled range "
                              f"[{self.sigmas[0]}, {self.sigmas[-1]}]")
        return float(np.interp(sigma, self.sigmas, self.betas))

    def index_of(self, sigma: float) -> int:
        i = int(np.argmin(np.abs(self.sigmas - sigma)))
        if abs(self.sigmas[i] - sigma) > 1e-12 * (1 + abs(sigma)):
            raise DomainError(f"sigma {sigma} is not a grid point")
        return i

    def to_dict(self) -> dict:
        return {
            "sigmas": [float(s) for s in self.sigmas],
            "betas": [float(b) for b in self.betas],
            "betas_raw": [float(b) for b in self.betas_raw],
            "argmax_frames": [int(i) for i in self.argmax_frames],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WidthCurve":
        return cls(np.array(d["sigmas"]), np.array(d["betas"]),
                   np.array(d["betas_raw"]), np.array(d["argmax_frames"]))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sigma,beta,argmax\n")
            for s, b, a in zip(self.sigmas, self.betas, self.argmax_frames):
                fh.write(f"{s!r},{b!r},{a}\n")

    @classmethod
    def synthetic(cls, sigmas, betas) -> "WidthCurve":
        """A curve from externally supplied samples (isotonic applied)."""
        sigmas = np.asarray(sigmas, dtype=float)
        raw = np.asarray(betas, dtype=float)
        return cls(sigmas, isotonic_nondecreasing(raw), raw,
                   np.zeros(len(sigmas), dtype=int))


def estimate_width_curve(seed: Sweepout, family: ViscousFamily,
                         sigma_grid, budget: int, *, retain: bool = True,
                         refine_sup: bool = True,
                         warm_budget: int | None = None) -> WidthCurve:
    """Tighten along an increasing sigma grid with warm starts.

    The first grid point gets the full budget; later points reuse the previous
    minimiser (``warm_budget`` iterations, default budget/4).  Raw sups are
    made monotone by isotonic regression.
    """
    grid = np.asarray(sigma_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise DomainError("sigma grid must be a nonempty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("sigma grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] >= 1.0:
        raise DomainError("sigma grid must lie within [0, 1)")
    if warm_budget is None:
        warm_budget = max(1, budget // 4)

    betas_raw = np.empty(len(grid))
    argmax = np.empty(len(grid), dtype=int)
    tightened: list[Sweepout] = []
    current = seed
    for i, s in enumerate(grid):
        current = tighten(current, family, s, budget if i == 0 else warm_budget)
        handle = family.handle(s)
        flat = current.flat_frames()
        vals = _frame_values(handle, flat)
        if refine_sup:
            betas_raw[i], argmax[i] = _refine_sup(flat, vals, current.d)
        else:
            argmax[i] = int(np.argmax(vals))
            betas_raw[i] = float(vals[argmax[i]])
        if retain:
            tightened.append(current)
    betas = isotonic_nondecreasing(betas_raw)
    return WidthCurve(grid, betas, betas_raw, argmax,
                      tightened if retain else None)


def check_nontrivial(curve: WidthCurve, boundary_value: float, margin: float) -> bool:
    """True iff the estimated beta(0) clears the boundary value by the margin."""
    if margin <= 0:
        raise DomainError("margin must be positive")
    return curve.beta0 > boundary_value + margin
