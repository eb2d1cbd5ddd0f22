"""Monotonicity-trick machinery.

Slope estimation on sampled width curves, entropy-condition selection of the
regularisation parameter, the dyadic interval schedule ``a_j = 1/j`` with its
slowly divergent comparison weights, and the small-increment selection that
drives the degenerate-case argument.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, entropy_bound
from .sweepout import WidthCurve

LOG_GUARD = 1e-3


def _guarded_log(x: float) -> float:
    return max(math.log(x), LOG_GUARD)


@dataclass(frozen=True)
class EntropySchedule:
    """The dyadic schedule a_j = 1/j with sub-harmonic comparison weights.

    ``b_j = 1/((j+1) log j loglog j logloglog j)`` sums to infinity while the
    width increments ``beta(a_j) - beta(a_{j+1})`` are summable, so infinitely
    many j have increment below b_j.  The iterated logs are positive only for
    j above e^e^e; at desk scale we start at j = 16 and clamp each log factor
    from below instead.
    """

    j_start: int = 16

    def __post_init__(self):
        if self.j_start < 3:
            raise DomainError("j_start must be at least 3")

    def a(self, j: int) -> float:
        j = int(j)
        if j < self.j_start:
            raise DomainError(f"j must be >= j_start = {self.j_start}")
        return 1.0 / j

    def b(self, j: int) -> float:
        j = int(j)
        if j < self.j_start:
            raise DomainError(f"j must be >= j_start = {self.j_start}")
        l1 = _guarded_log(j)
        l2 = _guarded_log(l1)
        l3 = _guarded_log(l2)
        return 1.0 / ((j + 1) * l1 * l2 * l3)

    def delta(self, j: int) -> float:
        j = int(j)
        if j < self.j_start:
            raise DomainError(f"j must be >= j_start = {self.j_start}")
        l1 = _guarded_log(j)
        l2 = _guarded_log(l1)
        l3 = _guarded_log(l2)
        return 1.0 / l3

    def interval(self, j: int) -> tuple[float, float]:
        """I_j = [a_{j+1}, a_j]."""
        return (self.a(j + 1), self.a(j))

    def a_seq(self, count: int) -> np.ndarray:
        return np.array([self.a(self.j_start + i) for i in range(count)])

    def b_seq(self, count: int) -> np.ndarray:
        return np.array([self.b(self.j_start + i) for i in range(count)])

    def delta_seq(self, count: int) -> np.ndarray:
        return np.array([self.delta(self.j_start + i) for i in range(count)])


@dataclass
class EntropyCertificate:
    """A grid sigma whose estimated width slope clears the entropy bound."""

    sigma: float
    beta_prime_est: float
    bound: float
    slack: float
    stencil: list

    def __post_init__(self):
        self.stencil = [float(s) for s in self.stencil]

    @property
    def accepted(self) -> bool:
        return self.slack >= 0

    def to_dict(self) -> dict:
        return {
            "sigma": float(self.sigma),
            "beta_prime_est": float(self.beta_prime_est),
            "bound": float(self.bound),
            "slack": float(self.slack),
            "stencil": list(self.stencil),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntropyCertificate":
        return cls(d["sigma"], d["beta_prime_est"], d["bound"], d["slack"],
                   d["stencil"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def beta_prime_estimate(curve: WidthCurve, sigma: float, window: float) -> float:
    """One-sided forward difference quotient (beta(sigma+w) - beta(sigma)) / w.

    The forward direction matches how the localisation theorem approaches
    sigma from above; monotonicity of the corrected curve keeps the quotient
    nonnegative.  The window must span at least 3 grid samples.
    """
    sigma = float(sigma)
    window = float(window)
    if window <= 0:
        raise DomainError("window must be positive")
    grid = curve.sigmas
    if sigma < grid[0] - 1e-15 or sigma + window > grid[-1] + 1e-15:
        raise DomainError(
            f"window [{sigma}, {sigma + window}] leaves the sampled range")
    covered = np.count_nonzero((grid >= sigma - 1e-15)
                               & (grid <= sigma + window + 1e-15))
    if covered < 3:
        raise DomainError(
            f"window [{sigma}, {sigma + window}] spans only {covered} samples; need >= 3")
    lo = curve.beta_at(sigma)
    hi = curve.beta_at(sigma + window)
    return max((hi - lo) / window, 0.0)


def select_entropy_sigmas(curve: WidthCurve, window: float | None = None
                          ) -> list[EntropyCertificate]:
    """All grid sigmas whose forward slope estimate clears the entropy bound.

    The default window at grid point i spans to grid point i+2.  Points where
    the window leaves the grid, or where sigma is outside the entropy-bound
    domain, are skipped.  May return an empty list on a coarse grid; the
    caller refines.
    """
    grid = curve.sigmas
    out: list[EntropyCertificate] = []
    for i, s in enumerate(grid):
        try:
            bound = entropy_bound(float(s))
        except DomainError:
            continue
        if window is None:
            if i + 2 >= len(grid):
                continue
            w = float(grid[i + 2] - s)
        else:
            w = float(window)
            if s + w > grid[-1] + 1e-15:
                continue
        try:
            est = beta_prime_estimate(curve, float(s), w)
        except DomainError:
            continue
        stencil = grid[(grid >= s - 1e-15) & (grid <= s + w + 1e-15)]
        cert = EntropyCertificate(float(s), est, bound, bound - est,
                                  list(stencil))
        if cert.accepted:
            out.append(cert)
    return out


def good_interval_fraction(curve: WidthCurve, schedule: EntropySchedule,
                           j: int, min_samples: int = 16) -> float:
    """Fraction of sampled sigmas in I_j whose slope clears the frozen bound.

    The bound is evaluated at the right endpoint a_j, the smallest value of
    the entropy threshold on the interval, matching the interval-wise form of
    the schedule argument.
    """
    lo, hi = schedule.interval(j)
    grid = curve.sigmas
    inside = np.flatnonzero((grid >= lo - 1e-15) & (grid <= hi + 1e-15))
    if inside.size < min_samples:
        raise DomainError(
            f"grid covers I_{j} = [{lo:.6g}, {hi:.6g}] with only {inside.size} "
            f"samples; need >= {min_samples}")
    a_j = schedule.a(j)
    l1 = math.log(1.0 / a_j)
    l2 = math.log(l1)
    if l2 <= 0:
        raise DomainError(f"a_{j} = {a_j} outside the entropy-bound domain")
    bound = 1.0 / (a_j * l1 * l2)
    good = 0
    total = 0
    for i in inside:
        k = min(int(i) + 2, len(grid) - 1)
        if k - int(i) < 2:
            k = len(grid) - 1
        w = float(grid[k] - grid[i])
        if w <= 0:
            continue
        try:
            est = beta_prime_estimate(curve, float(grid[i]), w)
        except DomainError:
            continue
        total += 1
        if est <= bound:
            good += 1
    if total == 0:
        raise DomainError(f"no usable slope stencils inside I_{j}")
    return good / total


def liminf_ratio_check(increments, b, prefix: int | None = None) -> float:
    """Minimal ratio increments[j] / b[j] over the prefix.

    Summable increments against a divergent comparison series force this
    minimum toward zero as the prefix grows; indices with increment <= b pick
    out the schedule's good intervals.
    """
    inc = np.asarray(increments, dtype=float)
    bb = np.asarray(b, dtype=float)
    if inc.shape != bb.shape:
        raise DomainError("increments and b must have equal length")
    if np.any(bb <= 0):
        raise DomainError("b must be positive")
    if np.any(inc < 0):
        raise DomainError("increments must be nonnegative (monotone width)")
    if prefix is None:
        prefix = len(inc)
    prefix = min(int(prefix), len(inc))
    if prefix < 1:
        raise DomainError("prefix must cover at least one term")
    return float(np.min(inc[:prefix] / bb[:prefix]))


def select_small_increment_indices(increments, b) -> np.ndarray:
    """Indices j with increments[j] <= b[j] (the accepted schedule rungs)."""
    inc = np.asarray(increments, dtype=float)
    bb = np.asarray(b, dtype=float)
    if inc.shape != bb.shape:
        raise DomainError("increments and b must have equal length")
    return np.flatnonzero(inc <= bb)
