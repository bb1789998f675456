"""Time-dependent sensor sets and the spectral uncertainty principle.

A sensor family assigns to every piece of a time mesh a union of axis-aligned
boxes on the torus; ``C(t)`` multiplies by the indicator of the box union
active at time ``t``.  Pieces are half-open ``[t_k, t_{k+1})`` except the last,
which also contains ``T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .evolution import TWO_PI, CertificationError, GridSpace, ProjectorFamily, apply_projector, random_field
from .time_sets import DomainError, TimeSet, measure

Box = tuple[tuple[float, float], ...]

_TOL = 1e-9


@dataclass(frozen=True)
class SensorFamily:
    """``Omega(t)`` as a box union per mesh piece; an empty tuple is an empty set."""

    d: int
    mesh: tuple[float, ...]
    pieces: tuple[tuple[Box, ...], ...]

    def __post_init__(self) -> None:
        mesh = tuple(float(t) for t in self.mesh)
        if len(mesh) < 2 or mesh[0] != 0.0 or any(b <= a for a, b in zip(mesh, mesh[1:])):
            raise DomainError(f"sensor mesh must be strictly increasing from 0, got {self.mesh}")
        if len(self.pieces) != len(mesh) - 1:
            raise DomainError(f"{len(self.pieces)} box lists for {len(mesh) - 1} mesh pieces")
        pieces = []
        for boxes in self.pieces:
            norm = []
            for box in boxes:
                box = tuple((float(lo), float(hi)) for lo, hi in box)
                if len(box) != self.d or any(not 0 < hi - lo <= TWO_PI + _TOL for lo, hi in box):
                    raise DomainError(f"bad box {box} for dimension {self.d}")
                norm.append(box)
            pieces.append(tuple(norm))
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "pieces", tuple(pieces))

    @property
    def horizon(self) -> float:
        return self.mesh[-1]

    def piece_index(self, t: float | np.ndarray) -> np.ndarray | int:
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < -_TOL) or np.any(t_arr > self.horizon * (1 + 1e-12)):
            raise DomainError(f"time outside [0, {self.horizon}]")
        k = np.searchsorted(self.mesh, t_arr, side="right") - 1
        k = np.clip(k, 0, len(self.pieces) - 1)
        return int(k) if k.ndim == 0 else k

    def pieces_on(self, E: TimeSet) -> list[tuple[int, float]]:
        """Pieces meeting ``E`` in positive measure, with that measure."""
        out = []
        for k, (a, b) in enumerate(zip(self.mesh, self.mesh[1:])):
            lo, hi = max(a, 0.0), min(b, E.horizon)
            if hi > lo:
                w = measure(E, (lo, hi))
                if w > 0:
                    out.append((k, w))
        return out

    def masks(self, space: GridSpace) -> np.ndarray:
        return _masks(self, space)

    def C_sup(self, E: TimeSet) -> float:
        """Sup of ``||C(t)||`` over ``E``: 1 if some active piece is nonempty, else 0."""
        return 1.0 if any(self.pieces[k] for k, _ in self.pieces_on(E)) else 0.0

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "mesh": list(self.mesh),
            "pieces": [[[list(iv) for iv in box] for box in boxes] for boxes in self.pieces],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SensorFamily":
        pieces = tuple(tuple(tuple(tuple(iv) for iv in box) for box in boxes) for boxes in data["pieces"])
        return cls(int(data["d"]), tuple(data["mesh"]), pieces)


@lru_cache(maxsize=64)
def _masks(fam: SensorFamily, space: GridSpace) -> np.ndarray:
    if space.d != fam.d:
        raise DomainError(f"sensor family is {fam.d}-D, grid is {space.d}-D")
    coords = space.coords()
    out = np.zeros((len(fam.pieces), *space.shape), dtype=bool)
    for k, boxes in enumerate(fam.pieces):
        for box in boxes:
            inside = np.ones(space.shape, dtype=bool)
            for x, (lo, hi) in zip(coords, box):
                if hi - lo < TWO_PI:
                    inside &= np.mod(x - lo + _TOL, TWO_PI) < hi - lo
            out[k] |= inside
    out.setflags(write=False)
    return out


def apply_C(fam: SensorFamily, t: float, x: np.ndarray, space: GridSpace) -> np.ndarray:
    """Pointwise product with the indicator of ``Omega(t)``."""
    return x * fam.masks(space)[fam.piece_index(t)]


# -- generators -------------------------------------------------------------------------


def _full_box(d: int) -> Box:
    return ((0.0, TWO_PI),) * d


def full(T: float, d: int = 1) -> SensorFamily:
    return SensorFamily(d, (0.0, T), ((_full_box(d),),))


def empty(T: float, d: int = 1) -> SensorFamily:
    return SensorFamily(d, (0.0, T), ((),))


def stripe_boxes(d: int, period: float, fill: float, phase: float = 0.0) -> tuple[Box, ...]:
    """Stripes ``[phase + j period, phase + (j + fill) period)`` along the first axis."""
    if not 0 < fill <= 1:
        raise DomainError(f"fill must lie in (0, 1], got {fill}")
    count = TWO_PI / period
    if abs(count - round(count)) > 1e-9:
        raise DomainError("stripe period must divide the torus side")
    rest = ((0.0, TWO_PI),) * (d - 1)
    return tuple(
        ((phase + j * period, phase + (j + fill) * period),) + rest for j in range(int(round(count)))
    )


def stripes(T: float, d: int = 1, period: float = TWO_PI / 32, fill: float = 0.5, phase: float = 0.0) -> SensorFamily:
    return SensorFamily(d, (0.0, T), (stripe_boxes(d, period, fill, phase),))


def drifting_stripes(
    mesh: Sequence[float], d: int = 1, period: float = TWO_PI / 32, fill: float = 0.5, phases: Sequence[float] = ()
) -> SensorFamily:
    """Stripes whose phase jumps at every mesh point."""
    if len(phases) != len(mesh) - 1:
        raise DomainError("need one phase per mesh piece")
    return SensorFamily(d, tuple(mesh), tuple(stripe_boxes(d, period, fill, ph) for ph in phases))


def switching_halves(T: float, d: int = 1) -> SensorFamily:
    """Left half of the torus on ``[0, T/2)``, right half afterwards."""
    rest = ((0.0, TWO_PI),) * (d - 1)
    left = (((0.0, math.pi),) + rest,)
    right = (((math.pi, TWO_PI),) + rest,)
    return SensorFamily(d, (0.0, T / 2, T), (left, right))


def on_set(E: TimeSet, inner: SensorFamily) -> SensorFamily:
    """``inner`` while ``t`` is in ``E``, the empty set otherwise."""
    if not math.isclose(inner.horizon, E.horizon):
        raise DomainError("sensor family and time set have different horizons")
    cuts = sorted(set(inner.mesh) | set(E.breakpoints()) | {0.0, E.horizon})
    pieces = []
    for a, b in zip(cuts, cuts[1:]):
        mid = 0.5 * (a + b)
        pieces.append(inner.pieces[inner.piece_index(mid)] if E.contains(mid) else ())
    return SensorFamily(inner.d, tuple(cuts), tuple(pieces))


# -- thickness --------------------------------------------------------------------------


@dataclass(frozen=True)
class ThicknessResult:
    passed: bool
    rho: float
    attained: float
    window_cells: int
    witness: dict | None = None


def _window_counts(mask: np.ndarray, w: int) -> np.ndarray:
    """Cells of ``mask`` inside every periodic window of ``w`` cells per axis, anchored at each grid point."""
    out = mask.astype(np.int64)
    for axis in range(mask.ndim):
        n = out.shape[axis]
        ext = np.concatenate([out, np.take(out, range(w), axis=axis)], axis=axis)
        c = np.cumsum(ext, axis=axis)
        c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
        out = np.take(c, range(w, w + n), axis=axis) - np.take(c, range(n), axis=axis)
    return out


def _cells(L: float, space: GridSpace) -> int:
    if not 0 < L <= TWO_PI * (1 + 1e-12):
        raise DomainError(f"window side must lie in (0, 2 pi], got {L}")
    return max(1, int(round(L / space.h)))


def uniform_thickness_check(
    fam: SensorFamily, E: TimeSet, L: float, rho: float, space: GridSpace
) -> ThicknessResult:
    """Every window ``(0, L)^d + x`` at every piece active on ``E`` holds at least ``rho L^d``."""
    w = _cells(L, space)
    masks = fam.masks(space)
    worst, witness = math.inf, None
    for k, _ in fam.pieces_on(E):
        counts = _window_counts(masks[k], w)
        idx = np.unravel_index(int(np.argmin(counts)), counts.shape)
        frac = counts[idx] / w ** space.d
        if frac < worst:
            lo, hi = max(fam.mesh[k], 0.0), fam.mesh[k + 1]
            ts = [iv for iv in E.clip(lo, hi)]
            t = 0.5 * (ts[0][0] + ts[0][1]) if ts else lo
            worst, witness = frac, {"t": t, "piece": k, "x": [float(i * space.h) for i in idx], "fraction": float(frac)}
    if worst is math.inf:
        return ThicknessResult(False, rho, 0.0, w, {"reason": "no sensor piece meets E"})
    ok = worst >= rho * (1 - 1e-12)
    return ThicknessResult(bool(ok), rho, float(worst), w, None if ok else witness)


def mean_thickness_check(fam: SensorFamily, T: float, L: float, rho: float, space: GridSpace) -> ThicknessResult:
    """Time average over ``[0, T]`` of the window content, integrated exactly piece by piece."""
    w = _cells(L, space)
    masks = fam.masks(space)
    total = np.zeros(space.shape)
    for k, (a, b) in enumerate(zip(fam.mesh, fam.mesh[1:])):
        length = max(0.0, min(b, T) - a)
        if length > 0:
            total += length * _window_counts(masks[k], w)
    avg = total / (T * w ** space.d)
    idx = np.unravel_index(int(np.argmin(avg)), avg.shape)
    worst = float(avg[idx])
    ok = worst >= rho * (1 - 1e-12)
    witness = None if ok else {"x": [float(i * space.h) for i in idx], "fraction": worst}
    return ThicknessResult(bool(ok), rho, worst, w, witness)


# -- uncertainty principle -------------------------------------------------------------


@dataclass(frozen=True)
class UcpCertificate:
    """Fitted ``(d0, d1)`` for fixed ``gamma1`` on the sampled ``lambda`` set."""

    d0: float
    d1: float
    gamma1: float
    E: TimeSet
    lambda_grid: tuple[float, ...]
    samples: int
    seed: int
    d: int
    N: int
    p: float
    max_residual: float
    exact_worst_case: bool
    residuals: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    @property
    def lambda_max(self) -> float:
        return max(self.lambda_grid)

    def to_json(self) -> dict:
        return {
            "d0": self.d0,
            "d1": self.d1,
            "gamma1": self.gamma1,
            "E": self.E.to_json(),
            "lambda_grid": list(self.lambda_grid),
            "samples": self.samples,
            "seed": self.seed,
            "grid": {"d": self.d, "N": self.N, "p": "inf" if math.isinf(self.p) else self.p},
            "max_residual": self.max_residual,
            "exact_worst_case": self.exact_worst_case,
        }


def ucp_ratio(fam: SensorFamily, E: TimeSet, x: np.ndarray, space: GridSpace) -> float:
    """``||x|| / min_k ||C_k x||`` over the pieces active on ``E``."""
    masks = fam.masks(space)
    den = min(float(space.norm(x * masks[k])) for k, _ in fam.pieces_on(E))
    num = float(space.norm(x))
    return math.inf if den == 0 else num / den


def _gram_worst_ratio(mask: np.ndarray, lam: float, space: GridSpace) -> float:
    """Exact ``sup ||x||_2 / ||1_mask x||_2`` over fields with modes ``|xi| <= lam``."""
    rho = space.freq_norm()
    modes = np.argwhere(rho <= lam)
    mhat = np.fft.fftn(mask.astype(float))
    diff = (modes[:, None, :] - modes[None, :, :]) % space.N
    G = space.cell_volume * mhat[tuple(diff[..., i] for i in range(space.d))]
    mu = float(np.linalg.eigvalsh(G)[0])
    if mu <= 1e-13 * space.cell_volume * mask.size:
        return math.inf
    return math.sqrt(TWO_PI ** space.d / mu)


def certify_UCP(
    fam: SensorFamily,
    E: TimeSet,
    proj_family: ProjectorFamily,
    lambda_grid: Iterable[float],
    space: GridSpace,
    trials: int = 16,
    gamma1: float = 1.0,
    d1_min: float = 0.01,
    seed: int = 0,
) -> UcpCertificate:
    """Fit ``||P x|| <= d0 exp(d1 lam^gamma1) min_k ||C_k P x||`` on the sampled set.

    Samples are random band-limited fields in the range of ``P_lam``.  For
    ``p = 2`` with sharp cutoffs the exact worst case over the whole range is
    added at every frequency magnitude up to ``max(lambda_grid)``, so the bound
    then holds for all fields and all ``lam`` in ``(0, max(lambda_grid)]``.
    """
    lams = sorted(float(v) for v in lambda_grid)
    if not lams or lams[0] <= 0:
        raise DomainError("lambda grid must be nonempty and positive")
    active = fam.pieces_on(E)
    if not active:
        raise DomainError("E meets no sensor piece")
    masks = fam.masks(space)
    rng = np.random.default_rng(seed)
    us, vs = [], []

    exact = space.p == 2 and proj_family.mode == "sharp"
    if exact:
        rho = space.freq_norm()
        for mag in np.unique(rho[rho <= lams[-1]]):
            lam = max(float(mag), lams[0])
            worst = max(_gram_worst_ratio(masks[k], float(mag), space) for k, _ in active)
            if math.isinf(worst):
                raise CertificationError(
                    "some band-limited field is invisible to the sensors",
                    {"lambda": float(mag), "pieces": [k for k, _ in active]},
                )
            us.append(lam ** gamma1)
            vs.append(math.log(worst))

    for lam in lams:
        proj = proj_family.at(lam)
        xs = random_field(space, rng, bandwidth=lam, size=trials)
        px = apply_projector(proj, xs, space)
        num = space.norm(px)
        den = np.min([space.norm(px * masks[k]) for k, _ in active], axis=0)
        zero = np.flatnonzero(den <= 1e-14 * num)
        if zero.size:
            i = int(zero[0])
            raise CertificationError(
                "C(tau) P_lam x vanishes on every sampled tau in E",
                {"lambda": lam, "trial": i, "norm": float(num[i])},
            )
        us.extend([lam ** gamma1] * trials)
        vs.extend(np.log(num / den).tolist())

    u, v = np.array(us), np.array(vs)
    slope = float(np.polyfit(u, v, 1)[0]) if np.ptp(u) > 0 else 0.0
    d1 = max(d1_min, slope)
    logd0 = max(0.0, float(np.max(v - d1 * u)))
    resid = v - (logd0 + d1 * u)
    return UcpCertificate(
        d0=math.exp(logd0),
        d1=d1,
        gamma1=gamma1,
        E=E,
        lambda_grid=tuple(lams),
        samples=len(u),
        seed=seed,
        d=space.d,
        N=space.N,
        p=space.p,
        max_residual=float(resid.max()),
        exact_worst_case=exact,
        residuals=tuple(zip(u.tolist(), resid.tolist())),
    )
