"""Fourier-multiplier evolution families on the discrete torus.

The symbol ``a(t, xi) = sum_alpha a_alpha(t) (i xi)^alpha`` has coefficients that
are constant on the pieces of a time mesh, so the accumulated phase
``Phi(t, s, xi) = int_s^t a(tau, xi) dtau`` is a finite sum and the propagator
``U(t, s)`` is the exact multiplier ``exp(-Phi(t, s, xi))``.

Operator norms of multipliers are computed exactly for ``p`` in {1, 2, inf}
(sup of the multiplier for ``p = 2``; l1 norm of the convolution kernel for
``p = 1`` and ``p = inf``) and bounded by Riesz-Thorin interpolation otherwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .time_sets import DomainError

TWO_PI = 2 * math.pi

MultiIndex = tuple[int, ...]


class NotEllipticError(ValueError):
    """The symbol fails uniform strong ellipticity on the grid."""


class CertificationError(RuntimeError):
    """No constants certify the sampled inequality."""

    def __init__(self, message: str, witness: dict | None = None):
        self.witness = witness or {}
        super().__init__(message)


class ResolutionMismatch(ValueError):
    """A certificate is being reused on a grid it was not produced on."""


@dataclass(frozen=True)
class GridSpace:
    """Uniform grid on the torus ``[0, 2 pi)^d`` with a cell-weighted ``L^p`` norm."""

    d: int
    N: int
    p: float = 2.0

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.d}")
        if self.N < 2 or self.N & (self.N - 1):
            raise DomainError(f"N must be a power of two, got {self.N}")
        p = float(self.p)
        if not p >= 1:
            raise DomainError(f"norm exponent must lie in [1, inf], got {self.p}")
        object.__setattr__(self, "p", p)

    @property
    def side(self) -> float:
        return TWO_PI

    @property
    def h(self) -> float:
        return TWO_PI / self.N

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))

    def with_p(self, p: float) -> "GridSpace":
        return GridSpace(self.d, self.N, p)

    def wavenumbers(self) -> list[np.ndarray]:
        k = np.fft.fftfreq(self.N, 1.0 / self.N)
        return np.meshgrid(*([k] * self.d), indexing="ij")

    def freq_norm(self) -> np.ndarray:
        ks = self.wavenumbers()
        return np.sqrt(sum(k ** 2 for k in ks))

    def coords(self) -> list[np.ndarray]:
        x = np.arange(self.N) * self.h
        return np.meshgrid(*([x] * self.d), indexing="ij")

    def norm(self, x: np.ndarray, p: float | None = None) -> np.ndarray | float:
        """Cell-weighted ``L^p`` norm over the trailing ``d`` axes."""
        p = self.p if p is None else float(p)
        a = np.abs(x)
        if math.isinf(p):
            return a.max(axis=self.axes)
        return (self.cell_volume * (a ** p).sum(axis=self.axes)) ** (1.0 / p)

    def l2_from_fft(self, xh: np.ndarray) -> np.ndarray | float:
        """``L^2`` norm of ``ifft(xh)`` by Parseval; keeps relative accuracy for tiny tails."""
        n = self.N ** self.d
        return np.sqrt(self.cell_volume / n * (np.abs(xh) ** 2).sum(axis=self.axes))

    def fft(self, x: np.ndarray) -> np.ndarray:
        return np.fft.fftn(x, axes=self.axes)

    def ifft(self, xh: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(xh, axes=self.axes)

    def to_json(self) -> dict:
        return {"d": self.d, "N": self.N, "p": "inf" if math.isinf(self.p) else self.p}

    @classmethod
    def from_json(cls, data: Mapping) -> "GridSpace":
        p = data.get("p", 2.0)
        return cls(int(data["d"]), int(data["N"]), math.inf if p in ("inf", "infinity") else float(p))


def multiplier_norm(m: np.ndarray, space: GridSpace, p: float | None = None) -> float:
    """Operator norm on ``L^p`` of the Fourier multiplier ``m`` (exact for p in {1, 2, inf})."""
    p = space.p if p is None else float(p)
    n2 = float(np.abs(m).max())
    if p == 2:
        return n2
    n1 = float(np.abs(space.ifft(m)).sum())
    if p == 1 or math.isinf(p):
        return n1
    if p < 2:
        theta = 2.0 - 2.0 / p
        return n1 ** (1 - theta) * n2 ** theta
    theta = 1.0 - 2.0 / p
    return n2 ** (1 - theta) * n1 ** theta


def write_field(path: str | Path, x: np.ndarray, space: GridSpace) -> None:
    """Binary field file: one JSON header line, then raw little-endian data."""
    x = np.ascontiguousarray(x)
    header = {**space.to_json(), "dtype": np.dtype(x.dtype).newbyteorder("<").str, "shape": list(x.shape)}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(x.astype(header["dtype"]).tobytes())


def read_field(path: str | Path) -> tuple[np.ndarray, GridSpace]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype=header["dtype"]).reshape(header["shape"])
    return data.copy(), GridSpace.from_json(header)


def random_field(space: GridSpace, rng: np.random.Generator, bandwidth: float | None = None, size: int | None = None):
    """Complex field with unit-normal Fourier amplitudes on modes ``|xi| <= bandwidth``."""
    shape = space.shape if size is None else (size, *space.shape)
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if bandwidth is not None:
        coef = coef * (space.freq_norm() <= bandwidth)
    return space.ifft(coef)


# -- symbols ------------------------------------------------------------------------


def _alpha_from_key(key) -> MultiIndex:
    if isinstance(key, str):
        return tuple(int(s) for s in key.replace(" ", "").split(","))
    if isinstance(key, int):
        return (key,)
    return tuple(int(k) for k in key)


@dataclass(frozen=True, eq=False)
class EllipticSymbol:
    """Polynomial symbol with piecewise-constant complex coefficients.

    ``coefficients[alpha][k]`` is ``a_alpha`` on the mesh piece
    ``[mesh[k], mesh[k+1])``.  Note ``(i xi)^2 = -xi^2``: the heat symbol
    ``|xi|^2`` has coefficient ``-1`` on each ``2 e_j``.
    """

    degree: int
    mesh: tuple[float, ...]
    coefficients: Mapping[MultiIndex, tuple[complex, ...]]
    ellipticity: float | None = None

    def __post_init__(self) -> None:
        mesh = tuple(float(t) for t in self.mesh)
        if len(mesh) < 2 or mesh[0] != 0.0 or any(b <= a for a, b in zip(mesh, mesh[1:])):
            raise DomainError(f"mesh must be strictly increasing from 0, got {self.mesh}")
        if self.degree < 2:
            raise DomainError("degree must be at least 2")
        coefs: dict[MultiIndex, tuple[complex, ...]] = {}
        dims = set()
        for key, vals in self.coefficients.items():
            alpha = _alpha_from_key(key)
            if any(a < 0 for a in alpha) or sum(alpha) > self.degree:
                raise DomainError(f"multi-index {alpha} not admissible for degree {self.degree}")
            vals = tuple(complex(v) for v in (vals if isinstance(vals, Sequence) else [vals]))
            if len(vals) == 1:
                vals = vals * (len(mesh) - 1)
            if len(vals) != len(mesh) - 1:
                raise DomainError(f"coefficient {alpha} has {len(vals)} values for {len(mesh) - 1} mesh pieces")
            dims.add(len(alpha))
            coefs[alpha] = vals
        if len(dims) != 1:
            raise DomainError("all multi-indices must share one dimension")
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "coefficients", coefs)

    @property
    def dim(self) -> int:
        return len(next(iter(self.coefficients)))

    @property
    def horizon(self) -> float:
        return self.mesh[-1]

    @property
    def pieces(self) -> int:
        return len(self.mesh) - 1

    @property
    def is_real(self) -> bool:
        return all(v.imag == 0 for vals in self.coefficients.values() for v in vals)

    @classmethod
    def heat(cls, d: int = 1, mesh: Sequence[float] = (0.0, 1.0), diffusivity: Sequence[float] | float = 1.0,
             lower: float = 0.0) -> "EllipticSymbol":
        """``theta(t) |xi|^2 + lower`` with ``theta`` piecewise constant on ``mesh``."""
        th = [float(diffusivity)] if np.isscalar(diffusivity) else [float(v) for v in diffusivity]
        coefs: dict[MultiIndex, list[complex]] = {}
        for j in range(d):
            alpha = tuple(2 if i == j else 0 for i in range(d))
            coefs[alpha] = [-v for v in th]
        if lower:
            coefs[(0,) * d] = [lower] * (len(mesh) - 1)
        return cls(2, tuple(mesh), coefs, min(th))

    def _monomial(self, alpha: MultiIndex, ks: list[np.ndarray]) -> np.ndarray:
        out = np.ones(ks[0].shape, dtype=complex)
        for a, k in zip(alpha, ks):
            if a:
                out = out * (1j * k) ** a
        return out

    def evaluate(self, space: GridSpace, principal: bool = False) -> np.ndarray:
        """Symbol values on each mesh piece, shape ``(pieces, *space.shape)``."""
        if space.d != self.dim:
            raise DomainError(f"symbol is {self.dim}-D, grid is {space.d}-D")
        ks = space.wavenumbers()
        out = np.zeros((self.pieces, *space.shape), dtype=complex)
        for alpha, vals in self.coefficients.items():
            if principal and sum(alpha) != self.degree:
                continue
            mono = self._monomial(alpha, ks)
            out += np.asarray(vals).reshape((-1,) + (1,) * space.d) * mono
        return out

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "mesh": list(self.mesh),
            "coefficients": {
                ",".join(map(str, a)): [[v.real, v.imag] for v in vals] for a, vals in self.coefficients.items()
            },
            "ellipticity": self.ellipticity,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "EllipticSymbol":
        coefs = {}
        for key, vals in data["coefficients"].items():
            vals = vals if isinstance(vals, list) else [vals]
            coefs[_alpha_from_key(key)] = [complex(*v) if isinstance(v, list) else complex(v) for v in vals]
        return cls(int(data["degree"]), tuple(data["mesh"]), coefs, data.get("ellipticity"))


@dataclass(frozen=True)
class EllipticityCertificate:
    degree: int
    c: float
    passed: bool
    reason: str = ""


def check_ellipticity(symbol: EllipticSymbol, space: GridSpace | None = None) -> EllipticityCertificate:
    """Largest ``c`` with ``Re principal(t, xi) >= c |xi|^m`` on all grid frequencies and pieces."""
    space = space or GridSpace(symbol.dim, 256)
    top = [vals for a, vals in symbol.coefficients.items() if sum(a) == symbol.degree]
    if not top or all(v == 0 for vals in top for v in vals):
        return EllipticityCertificate(symbol.degree, 0.0, False, "degenerate principal part (all top coefficients zero)")
    pr = symbol.evaluate(space, principal=True).real
    rho = space.freq_norm()
    nz = rho > 0
    c = float((pr[:, nz] / rho[nz] ** symbol.degree).min())
    if c <= 0:
        return EllipticityCertificate(symbol.degree, c, False, "real part of principal symbol not bounded below by c|xi|^m, c > 0")
    if symbol.ellipticity is not None and c < symbol.ellipticity * (1 - 1e-12):
        return EllipticityCertificate(symbol.degree, c, False, f"declared c={symbol.ellipticity} exceeds certified {c}")
    return EllipticityCertificate(symbol.degree, c, True)


class EvolutionFamily:
    """Propagator ``U(t, s)`` of ``u' + a(t, D) u = 0`` on a grid space.

    The per-piece symbol table is built once at construction; the object is
    not mutated afterwards.
    """

    def __init__(self, symbol: EllipticSymbol, space: GridSpace, require_elliptic: bool = True):
        if require_elliptic:
            cert = check_ellipticity(symbol, space)
            if not cert.passed:
                raise NotEllipticError(cert.reason)
        self.symbol = symbol
        self.space = space
        self._table = symbol.evaluate(space)
        self._mesh = np.asarray(symbol.mesh)
        self._real = symbol.is_real and self._multiplier_is_real()

    def _multiplier_is_real(self) -> bool:
        return bool(np.all(self._table.imag == 0))

    @property
    def T(self) -> float:
        return self.symbol.horizon

    def _overlaps(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        lo, hi = self._mesh[:-1], self._mesh[1:]
        return np.clip(np.minimum(t[..., None], hi) - np.maximum(s[..., None], lo), 0.0, None)

    def _check_times(self, t, s) -> None:
        tol = 1e-12 * self.T
        t_arr, s_arr = np.asarray(t), np.asarray(s)
        if np.any(t_arr < s_arr):
            raise DomainError(f"need s <= t, got s={s}, t={t}")
        if np.any(s_arr < -tol) or np.any(t_arr > self.T + tol):
            raise DomainError(f"times must lie in [0, {self.T}]")

    def phase(self, t: float, s: float) -> np.ndarray:
        self._check_times(t, s)
        w = self._overlaps(np.asarray(float(s)), np.asarray(float(t)))
        return np.tensordot(w, self._table, axes=(0, 0))

    def phases(self, times: np.ndarray, s: float = 0.0) -> np.ndarray:
        """Phases ``Phi(t_j, s)`` stacked along a leading axis."""
        times = np.asarray(times, dtype=float)
        self._check_times(times, s)
        w = self._overlaps(np.full(times.shape, float(s)), times)
        return np.tensordot(w, self._table, axes=(w.ndim - 1, 0))

    def multiplier(self, t: float, s: float) -> np.ndarray:
        return np.exp(-self.phase(t, s))

    def apply(self, t: float, s: float, x: np.ndarray) -> np.ndarray:
        return apply_U(self, t, s, x)

    def evolve_many(self, x0: np.ndarray, times: np.ndarray, s: float = 0.0, chunk: int = 1024) -> np.ndarray:
        """``U(t_j, s) x0`` for every ``t_j``, shape ``(len(times), *grid)``."""
        times = np.asarray(times, dtype=float)
        xh = self.space.fft(x0)
        real = self._real and np.isrealobj(x0)
        out = np.empty((len(times), *self.space.shape), dtype=float if real else complex)
        for i in range(0, len(times), chunk):
            m = np.exp(-self.phases(times[i:i + chunk], s))
            y = self.space.ifft(m * xh)
            out[i:i + chunk] = y.real if real else y
        return out


def apply_U(fam: EvolutionFamily, t: float, s: float, x: np.ndarray) -> np.ndarray:
    """``U(t, s) x``: transform, multiply by ``exp(-Phi(t, s, xi))``, transform back."""
    fam._check_times(t, s)
    if t == s:
        return np.array(x, copy=True)
    y = fam.space.ifft(fam.multiplier(t, s) * fam.space.fft(x))
    return y.real if fam._real and np.isrealobj(x) else y


# -- projectors ---------------------------------------------------------------------


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class SpectralProjector:
    """Frequency cutoff keeping ``|xi| <= cutoff``.

    ``mode="smoothed"`` rolls the multiplier off smoothly over
    ``(cutoff, cutoff + width)``; that operator is a cutoff but not an exact
    projection.
    """

    cutoff: float
    mode: str = "sharp"
    width: float = 1.0

    def __post_init__(self) -> None:
        if not self.cutoff > 0:
            raise DomainError(f"cutoff must be positive, got {self.cutoff}")
        if self.mode not in ("sharp", "smoothed"):
            raise DomainError(f"unknown projector mode {self.mode!r}")
        if self.mode == "smoothed" and not self.width > 0:
            raise DomainError("smoothing width must be positive")

    def multiplier(self, space: GridSpace) -> np.ndarray:
        rho = space.freq_norm()
        if self.mode == "sharp":
            return (rho <= self.cutoff).astype(float)
        return 1.0 - _smoothstep((rho - self.cutoff) / self.width)


@dataclass(frozen=True)
class ProjectorFamily:
    """``lambda -> P_lambda`` of a fixed kind."""

    mode: str = "sharp"
    width: float = 1.0

    def at(self, lam: float) -> SpectralProjector:
        return SpectralProjector(lam, self.mode, self.width)


def apply_projector(proj: SpectralProjector, x: np.ndarray, space: GridSpace, complement: bool = False) -> np.ndarray:
    """``P x`` or ``(Id - P) x``."""
    m = proj.multiplier(space)
    if complement:
        m = 1.0 - m
    y = space.ifft(m * space.fft(x))
    return y.real if np.isrealobj(x) else y


# -- exponential bound ----------------------------------------------------------------


@dataclass(frozen=True)
class ExpBound:
    M: float
    omega: float
    samples: int
    max_log_excess: float


def default_st_grid(T: float, n: int = 9) -> np.ndarray:
    return np.linspace(0.0, T, n)


def _pairs(st_grid: Sequence[float]) -> list[tuple[float, float]]:
    g = sorted(set(float(v) for v in st_grid))
    return [(s, t) for i, s in enumerate(g) for t in g[i + 1:]]


def fit_exp_bound(h: np.ndarray, logr: np.ndarray, T: float) -> tuple[float, float]:
    """Smallest ``log M + omega T`` (ties: smallest ``M``) with ``log M + omega h_i >= logr_i``, ``M >= 1``.

    The objective is convex and piecewise linear in ``omega`` so its minimum sits
    at a crossing of two constraint lines; those are enumerated directly.
    """
    h, logr = np.asarray(h, float), np.asarray(logr, float)
    cands = {0.0}
    cands.update((logr / h).tolist())
    for i in range(len(h)):
        dh = h[i] - h[i + 1:]
        ok = dh != 0
        cands.update(((logr[i] - logr[i + 1:][ok]) / dh[ok]).tolist())
    best = None
    for w in sorted(cands):
        a = max(0.0, float(np.max(logr - w * h)))
        key = (a + w * T, a)
        if best is None or key[0] < best[0][0] - 1e-14 * max(1.0, abs(key[0])) or (
            abs(key[0] - best[0][0]) <= 1e-14 * max(1.0, abs(key[0])) and key[1] < best[0][1]
        ):
            best = (key, w, a)
    _, w, a = best
    return math.exp(a), w


def estimate_exp_bound(
    fam: EvolutionFamily,
    trials: int = 8,
    st_grid: Sequence[float] | None = None,
    seed: int = 0,
) -> ExpBound:
    """Fit ``(M, omega)`` with ``||U(t, s)||_p <= M exp(omega (t - s))`` on the ``(s, t)`` grid.

    Each pair contributes its exact (or interpolated) operator norm and the
    ratios of ``trials`` random fields; the fitted bound dominates all of them.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    space = fam.space
    grid = default_st_grid(fam.T) if st_grid is None else st_grid
    rng = np.random.default_rng(seed)
    xs = random_field(space, rng, size=trials)
    xh = space.fft(xs)
    nx = space.norm(xs)
    hs, lr = [], []
    for s, t in _pairs(grid):
        m = fam.multiplier(t, s)
        ratio = max(multiplier_norm(m, space), float((space.norm(space.ifft(m * xh)) / nx).max()))
        hs.append(t - s)
        lr.append(math.log(ratio))
    M, omega = fit_exp_bound(np.array(hs), np.array(lr), fam.T)
    excess = max(l - math.log(M) - omega * h for h, l in zip(hs, lr))
    return ExpBound(M, omega, len(hs) * (trials + 1), excess)


# -- dissipation estimate ------------------------------------------------------------


@dataclass(frozen=True)
class DECertificate:
    """Fitted ``(d2, d3)`` for fixed exponents ``gamma2 = m, gamma3 = 1, gamma4 = 0``."""

    d2: float
    d3: float
    gamma2: float
    gamma3: float
    gamma4: float
    d: int
    N: int
    p: float
    samples: int
    min_log_slack: float
    regression_slope: float
    lambda_range: tuple[float, float]
    seed: int
    residuals: tuple[tuple[float, float, float], ...] = field(default=(), repr=False)

    def bound(self, lam: float, dt: float) -> float:
        return self.d2 * max(1.0, dt ** (-self.gamma4)) * math.exp(-self.d3 * lam ** self.gamma2 * dt ** self.gamma3)

    def assert_compatible(self, space: GridSpace) -> None:
        if (space.d, space.N, space.p) != (self.d, self.N, self.p):
            raise ResolutionMismatch(
                f"certificate made on d={self.d}, N={self.N}, p={self.p}; refusing reuse on {space.to_json()}"
            )

    def to_json(self) -> dict:
        return {
            "d2": self.d2,
            "d3": self.d3,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "gamma4": self.gamma4,
            "grid": {"d": self.d, "N": self.N, "p": "inf" if math.isinf(self.p) else self.p},
            "samples": self.samples,
            "min_log_slack": self.min_log_slack,
            "regression_slope": self.regression_slope,
            "lambda_range": list(self.lambda_range),
            "seed": self.seed,
        }


def fit_decay(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Steepest rate compatible with the smallest prefactor.

    Given ``y_i = -log(ratio_i)`` against ``x_i = lambda^m dt``, the prefactor
    must satisfy ``log d2 >= max(0, max(-y))``; at that value the largest slope
    keeping every sample below the line is ``min((y_i + log d2) / x_i)``.
    """
    logd2 = max(0.0, float(np.max(-y)))
    rate = float(np.min((y + logd2) / x))
    return math.exp(logd2), rate


def certify_DE(
    fam: EvolutionFamily,
    proj_family: ProjectorFamily,
    lambda_grid: Sequence[float],
    st_grid: Sequence[float],
    trials: int = 8,
    seed: int = 0,
) -> DECertificate:
    """Certify ``||(Id - P_lam) U(t, s)||_p <= d2 exp(-d3 lam^m (t - s))`` on the sampled set.

    For sharp cutoffs the tail set only changes when ``lam`` crosses a grid
    frequency magnitude, so the supremum over ``lam`` in
    ``[min(lambda_grid), max(lambda_grid)]`` is attained in the limit from the
    left at those magnitudes; they are added to the sample set.
    """
    space = fam.space
    m = fam.symbol.degree
    lams = sorted(float(v) for v in lambda_grid)
    if not lams or len(st_grid) < 2:
        raise DomainError("need a nonempty lambda grid and at least two times")
    rho = space.freq_norm()
    tails: list[tuple[float, np.ndarray]] = [(lam, 1.0 - proj_family.at(lam).multiplier(space)) for lam in lams]
    if proj_family.mode == "sharp":
        for mag in np.unique(rho):
            if lams[0] < mag <= lams[-1]:
                tails.append((float(mag), (rho >= mag).astype(float)))

    rng = np.random.default_rng(seed)
    xs = random_field(space, rng, size=trials) if trials else None
    xh = space.fft(xs) if trials else None
    nx = space.norm(xs) if trials else None

    xv, yv, res = [], [], []
    for s, t in _pairs(st_grid):
        logm = -fam.phase(t, s)
        dt = t - s
        for lam, tail in tails:
            on = tail > 0
            if not on.any() or lam ** m * dt == 0:
                continue
            # norms are homogeneous: rescale by the largest tail magnitude so nothing underflows
            shift = float(logm.real[on].max())
            tm = np.where(on, tail * np.exp(np.where(on, logm - shift, 0.0)), 0.0)
            ratio = multiplier_norm(tm, space)
            if trials:
                ratio = max(ratio, float((space.norm(space.ifft(tm * xh)) / nx).max()))
            xv.append(lam ** m * dt)
            yv.append(-(shift + math.log(ratio)))
            res.append((lam, dt, math.exp(shift) * ratio))
    if not xv:
        raise CertificationError("every sampled tail vanished; nothing to certify")
    x, y = np.array(xv), np.array(yv)
    d2, d3 = fit_decay(x, y)
    if not d3 > 0:
        worst = int(np.argmin((y + math.log(d2)) / x))
        raise CertificationError(
            "ratio does not decay in lambda; no positive d3 certifies",
            {"lambda": res[worst][0], "dt": res[worst][1], "ratio": res[worst][2]},
        )
    slope = float(np.polyfit(x, y, 1)[0]) if len(x) > 1 else float("nan")
    slack = math.log(d2) - d3 * x + y
    return DECertificate(
        d2=d2,
        d3=d3,
        gamma2=float(m),
        gamma3=1.0,
        gamma4=0.0,
        d=space.d,
        N=space.N,
        p=space.p,
        samples=len(x) * (1 + trials),
        min_log_slack=float(slack.min()),
        regression_slope=slope,
        lambda_range=(lams[0], lams[-1]),
        seed=seed,
        residuals=tuple(res),
    )


def diagnostic_exponent_fit(cert: DECertificate) -> dict[str, float]:
    """Free fit of ``log(-log ratio) = log d3 + g2 log lam + g3 log dt``; diagnostic only."""
    rows = [(lam, dt, r) for lam, dt, r in cert.residuals if 0 < r < 1]
    if len(rows) < 3:
        return {}
    A = np.array([[1.0, math.log(lam), math.log(dt)] for lam, dt, _ in rows])
    b = np.array([math.log(-math.log(r)) for *_, r in rows])
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return {"d3": float(math.exp(coef[0])), "gamma2": float(coef[1]), "gamma3": float(coef[2])}
