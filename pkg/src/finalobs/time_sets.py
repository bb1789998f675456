"""Measurable time sets as finite unions of half-open intervals.

A set ``E`` of observation times in ``[0, T]`` is stored up to null sets as a
sorted tuple of disjoint intervals ``[a, b)``.  Measures are computed by exact
interval overlap, never by sampling, so density ratios and the geometric
density-point sequence can be certified step by step.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

Interval = tuple[float, float]


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class NotDensityPointError(DomainError):
    """The point is not a right density point at the working resolution."""


class SequenceCertificateError(RuntimeError):
    """A step of the density-point sequence failed its measure certificate."""

    def __init__(self, m: int, delta: float, gap_measure: float, message: str):
        self.m = m
        self.delta = delta
        self.gap_measure = gap_measure
        super().__init__(f"step m={m}: {message} (delta={delta:.6g}, |gap ∩ E|={gap_measure:.6g})")


class Mode(str, Enum):
    """Which variant of the telescoping constants is in force.

    ``GENERAL`` works for any set of positive measure (proportion 1/3 per
    step, observation window of relative length 1/6).  ``FULL_INTERVAL`` is
    only valid when ``(ell, ell_1)`` lies inside the set, and sharpens both
    numerical factors to 2.
    """

    GENERAL = "general"
    FULL_INTERVAL = "full_interval"

    @property
    def proportion(self) -> float:
        return 3.0 if self is Mode.GENERAL else 2.0

    @property
    def xi_fraction(self) -> float:
        return 1.0 / 6.0 if self is Mode.GENERAL else 0.5

    @property
    def factor(self) -> float:
        """Numerical factor in ``c4`` and in the explicit observability constant."""
        return 6.0 if self is Mode.GENERAL else 2.0


@dataclass(frozen=True)
class TimeSet:
    """Finite union of disjoint half-open intervals inside ``[0, horizon]``."""

    horizon: float
    intervals: tuple[Interval, ...]

    def __post_init__(self) -> None:
        T = float(self.horizon)
        if not (math.isfinite(T) and T > 0):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon!r}")
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        if not ivs:
            raise DomainError("a time set needs positive measure; got no intervals")
        prev = 0.0
        for a, b in ivs:
            if not a < b:
                raise DomainError(f"degenerate or reversed interval [{a}, {b})")
            if a < prev:
                raise DomainError(f"intervals must be sorted, disjoint and inside [0, T]; offending [{a}, {b})")
            prev = b
        if prev > T:
            raise DomainError(f"interval end {prev} exceeds horizon {T}")
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def full(cls, horizon: float) -> "TimeSet":
        return cls(horizon, ((0.0, float(horizon)),))

    @classmethod
    def from_intervals(cls, horizon: float, intervals: Iterable[Sequence[float]]) -> "TimeSet":
        """Sort, clip to ``[0, horizon]`` and merge overlapping or touching pieces."""
        T = float(horizon)
        pieces = sorted((max(0.0, float(a)), min(T, float(b))) for a, b in intervals)
        merged: list[list[float]] = []
        for a, b in pieces:
            if b <= a:
                continue
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return cls(T, tuple((a, b) for a, b in merged))

    @property
    def measure(self) -> float:
        return measure(self)

    def contains(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.intervals)

    def clip(self, lo: float, hi: float) -> list[Interval]:
        """Pieces of the set inside the window ``(lo, hi)``."""
        out = []
        for a, b in self.intervals:
            if b <= lo:
                continue
            if a >= hi:
                break
            out.append((max(a, lo), min(b, hi)))
        return out

    def breakpoints(self) -> list[float]:
        return sorted({x for iv in self.intervals for x in iv})

    def to_json(self) -> dict:
        return {"T": self.horizon, "intervals": [list(iv) for iv in self.intervals]}

    @classmethod
    def from_json(cls, data: dict) -> "TimeSet":
        return cls(data["T"], tuple(tuple(iv) for iv in data["intervals"]))


def measure(S: TimeSet, window: Interval | None = None) -> float:
    """Lebesgue measure of ``S``, optionally intersected with ``window``."""
    if window is None:
        return math.fsum(b - a for a, b in S.intervals)
    lo, hi = float(window[0]), float(window[1])
    if lo < 0 or hi > S.horizon or hi < lo:
        raise DomainError(f"window ({lo}, {hi}) is not inside [0, {S.horizon}]")
    return math.fsum(b - a for a, b in S.clip(lo, hi))


def geometric_schedule(depth: int, ratio: float = 0.25) -> list[float]:
    return [ratio ** k for k in range(1, depth + 1)]


def fat_cantor(
    T: float,
    depth: int,
    removal_schedule: Sequence[float] | None = None,
    *,
    total_per_step: bool = False,
) -> TimeSet:
    """Smith-Volterra-Cantor approximation on ``[0, T)``.

    At step ``k`` an open middle piece is removed from each of the ``2**(k-1)``
    surviving intervals.  By default ``removal_schedule[k-1] * T`` is the length
    removed from *each* interval; with ``total_per_step=True`` it is the total
    length removed at that step, shared equally between the intervals.
    """
    if depth < 1:
        raise DomainError("depth must be a positive integer")
    schedule = list(removal_schedule) if removal_schedule is not None else geometric_schedule(depth)
    if len(schedule) < depth:
        raise DomainError(f"schedule has {len(schedule)} entries, depth {depth} needs more")
    ivs: list[Interval] = [(0.0, float(T))]
    for k, r in enumerate(schedule[:depth]):
        if not 0 < r < 1:
            raise DomainError(f"removal fraction {r} not in (0, 1)")
        gap = r * T / (2 ** k if total_per_step else 1)
        nxt: list[Interval] = []
        for a, b in ivs:
            if gap >= b - a:
                raise DomainError(f"step {k + 1} removes {gap} from an interval of length {b - a}")
            c = 0.5 * (a + b)
            nxt += [(a, c - 0.5 * gap), (c + 0.5 * gap, b)]
        ivs = nxt
    return TimeSet(T, tuple(ivs))


def right_density(S: TimeSet, ell: float, theta: float) -> float:
    """``|(ell, ell + theta) ∩ S| / theta``."""
    if theta <= 0:
        raise DomainError(f"theta must be positive, got {theta}")
    if not 0 <= ell < S.horizon:
        raise DomainError(f"ell={ell} not in [0, T)")
    if ell + theta > S.horizon * (1 + 1e-12):
        raise DomainError(f"window (ell, ell + theta) leaves [0, T]: ell={ell}, theta={theta}")
    return measure(S, (ell, min(ell + theta, S.horizon))) / theta


def density_kappa(q: float, relaxed: bool = False) -> float:
    """Admissible complement-to-inside ratio near a density point.

    Strict: ``(1 - q) / (2 (1 + q))``.  Relaxed: ``min((1 - q) / (2 q), 1/2)``.
    """
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    if relaxed:
        return min((1 - q) / (2 * q), 0.5)
    return (1 - q) / (2 * (1 + q))


@dataclass(frozen=True)
class Theta0:
    value: float
    capped: bool  # True when limited by the horizon rather than by the density condition


def theta0_search(S: TimeSet, ell: float, q: float, relaxed: bool = False) -> Theta0:
    """Exact supremum of admissible ``theta0`` by walking the breakpoints of ``S``.

    The function ``g(theta) = (1 + kappa)|(ell, ell+theta) ∩ S| - theta`` is
    piecewise linear with kinks only at endpoints of ``S``; the condition
    ``|(ell, ell+theta) \\ S| < kappa |(ell, ell+theta) ∩ S|`` is ``g > 0``.
    """
    if not 0 <= ell < S.horizon:
        raise DomainError(f"ell={ell} not in [0, T)")
    kappa = density_kappa(q, relaxed)
    theta, g = 0.0, 0.0
    pos = ell
    for a, b in S.intervals:
        if b <= pos:
            continue
        if a > pos:
            gap = a - pos
            if g - gap <= 0:
                if theta == 0:
                    raise NotDensityPointError(f"ell={ell} is followed by a gap of S")
                return Theta0(theta + g, False)
            theta += gap
            g -= gap
            pos = a
        inside = b - pos
        theta += inside
        g += kappa * inside
        pos = b
    tail = S.horizon - pos
    if tail > 0:
        if theta == 0:
            raise NotDensityPointError(f"ell={ell} lies after the last interval of S")
        if g - tail <= 0:
            return Theta0(theta + g, False)
    return Theta0(S.horizon - ell, True)


def find_theta0(
    S: TimeSet,
    ell: float,
    q: float,
    relaxed: bool = False,
    *,
    step: float | None = None,
    resolution: float | None = None,
) -> float:
    """Largest ``theta0`` with the density condition holding for every ``theta < theta0``.

    With ``step`` the answer is rounded down to the grid ``k * step``.  Raises
    :class:`NotDensityPointError` if nothing above ``resolution`` (default
    ``1e-4 * T``) certifies.
    """
    res = 1e-4 * S.horizon if resolution is None else resolution
    value = theta0_search(S, ell, q, relaxed).value
    if step is not None:
        value = math.floor(value / step * (1 + 1e-12)) * step
    if value < res:
        raise NotDensityPointError(f"theta0={value:.3g} below resolution {res:.3g} at ell={ell}")
    return value


@dataclass(frozen=True)
class DensityPoint:
    ell: float
    ell1: float
    theta0: float


def find_density_point(
    S: TimeSet, q: float, relaxed: bool = False, ell1_fraction: float = 0.99
) -> DensityPoint:
    """Scan left endpoints of ``S`` and keep the one with the longest usable ``ell_1 - ell``.

    Ties go to the smallest ``ell``.  When ``theta0`` is only limited by the
    horizon the whole window is usable and ``ell_1 = ell + theta0``.
    """
    best: DensityPoint | None = None
    for a, _ in S.intervals:
        try:
            th = theta0_search(S, a, q, relaxed)
        except NotDensityPointError:
            continue
        span = th.value if th.capped else ell1_fraction * th.value
        if best is None or span > best.ell1 - best.ell:
            best = DensityPoint(a, a + span, th.value)
    if best is None:
        raise NotDensityPointError("no interval endpoint of S certifies as a density point")
    return best


@dataclass(frozen=True)
class DensitySequence:
    """Geometric sequence ``ell_m = ell + q**(m-1) (ell_1 - ell)`` with per-step certificates."""

    base: float
    ratio: float
    start: float
    depth: int
    mode: Mode
    points: tuple[float, ...]
    gaps: tuple[float, ...]
    midpoints: tuple[float, ...]
    gap_measures: tuple[float, ...]
    xi_measures: tuple[float, ...]

    @property
    def proportion(self) -> float:
        return self.mode.proportion

    def to_json(self) -> dict:
        return {
            "ell": self.base,
            "q": self.ratio,
            "ell1": self.start,
            "depth": self.depth,
            "mode": self.mode.value,
            "proportion": self.proportion,
            "points": list(self.points),
            "delta": list(self.gaps),
            "xi": list(self.midpoints),
            "gap_measure": list(self.gap_measures),
            "xi_measure": list(self.xi_measures),
        }


_REL = 1e-12


def build_sequence(
    S: TimeSet,
    ell: float,
    ell1: float,
    q: float,
    depth: int,
    mode: Mode | str | None = None,
) -> DensitySequence:
    """Build ``ell_1 > ell_2 > ... > ell_depth`` and check every step against ``S``.

    For each gap ``m`` the general certificate is ``delta_m <= 3 |(ell_{m+1}, ell_m) ∩ S|``
    together with ``|(xi_m, ell_m) ∩ S| >= delta_m / 6``.  In full-interval mode
    the gap must be entirely inside ``S`` and ``xi_m`` sits at the gap midpoint.
    ``mode=None`` picks full-interval exactly when ``(ell, ell1) ⊆ S``.
    """
    if not 0 < q < 1:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    if not 0 <= ell < ell1 <= S.horizon:
        raise DomainError(f"need 0 <= ell < ell1 <= T, got ell={ell}, ell1={ell1}")
    if depth < 1:
        raise DomainError("depth must be a positive integer")
    span = ell1 - ell
    if mode is None:
        full = measure(S, (ell, ell1)) >= span * (1 - _REL)
        mode = Mode.FULL_INTERVAL if full else Mode.GENERAL
    mode = Mode(mode)

    points = tuple(ell + q ** (m - 1) * span for m in range(1, depth + 1))
    gaps = tuple(q ** (m - 1) * (1 - q) * span for m in range(1, depth))
    xis, gap_meas, xi_meas = [], [], []
    for m, delta in enumerate(gaps, start=1):
        hi, lo = points[m - 1], points[m]
        # beyond this the endpoints no longer resolve the gap and every check is vacuous
        if delta <= 64 * sys.float_info.epsilon * hi:
            raise DomainError(f"gap {m} ({delta:.3g}) is below binary64 resolution near {hi:.6g}; reduce depth")
        xi = lo + mode.xi_fraction * delta
        gm = measure(S, (lo, hi))
        xm = measure(S, (xi, hi))
        # the gap is analytic while the measures come from endpoint differences
        tol = _REL * delta + 8 * sys.float_info.epsilon * hi
        if mode is Mode.FULL_INTERVAL:
            if gm < delta - tol:
                raise SequenceCertificateError(m, delta, gm, "full-interval mode but gap not inside S")
        elif delta > 3 * gm + tol:
            raise SequenceCertificateError(m, delta, gm, "delta_m > 3 |gap ∩ S|; ell1 too large or ell not a density point")
        if xm < mode.xi_fraction * delta - tol:
            raise SequenceCertificateError(m, delta, gm, f"|(xi_m, ell_m) ∩ S| = {xm:.6g} below {mode.xi_fraction:.4g} delta_m")
        xis.append(xi)
        gap_meas.append(gm)
        xi_meas.append(xm)
    return DensitySequence(
        base=ell,
        ratio=q,
        start=ell1,
        depth=depth,
        mode=mode,
        points=points,
        gaps=gaps,
        midpoints=tuple(xis),
        gap_measures=tuple(gap_meas),
        xi_measures=tuple(xi_meas),
    )
