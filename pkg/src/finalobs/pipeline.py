"""Numerical audit of the telescoping observability argument on one instance.

``F(t) = ||U(t, 0) x0||`` and ``G(t) = ||C(t) U(t, 0) x0||``.  Each inequality
of the chain is evaluated on both sides and kept as a :class:`Check` with its
slack ``rhs - lhs``; a check passes when the slack is at least ``-1e-10`` times
the larger side.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .constants import ConstantBundle, ObservabilityCertificate, derive_c1_c2, derive_certificate, holder_lift, inv_r, q_ratio
from .evolution import EvolutionFamily, ProjectorFamily, apply_projector
from .observation import SensorFamily
from .time_sets import DensitySequence, DomainError, Mode, TimeSet, build_sequence

REL_TOL = 1e-10


class UncertifiedBundleError(RuntimeError):
    """Certification mode was asked to run on constants nobody certified."""


def _exp(x: float) -> float:
    return math.inf if x > 709.0 else math.exp(x)


def _prod(*factors: float) -> float:
    """Product with ``0 * inf = 0``: a vanishing norm kills any constant in front of it."""
    if any(f == 0 for f in factors):
        return 0.0
    return math.prod(factors)


def _over(x: float, eps: float) -> float:
    """``x / eps`` where an underflowed ``eps = 0`` stands for a tiny positive number."""
    if x == 0:
        return 0.0
    return math.inf if eps == 0 else x / eps


@dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "lhs", float(self.lhs))
        object.__setattr__(self, "rhs", float(self.rhs))

    @property
    def slack(self) -> float:
        if math.isinf(self.rhs) and not math.isinf(self.lhs):
            return math.inf
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.slack >= -REL_TOL * max(abs(self.lhs), abs(self.rhs), 1e-300))

    def to_json(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack, "passed": self.passed}


# -- traces ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    times: np.ndarray
    F: np.ndarray
    G: np.ndarray
    x0_id: str = ""

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.times.tolist(), self.F.tolist(), self.G.tolist()))


def _F_G(fam: EvolutionFamily, sensors: SensorFamily, x0: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    space = fam.space
    masks = sensors.masks(space)
    times = np.asarray(times, dtype=float)
    F = np.empty(len(times))
    G = np.empty(len(times))
    chunk = 512
    for i in range(0, len(times), chunk):
        ts = times[i:i + chunk]
        u = fam.evolve_many(x0, ts)
        F[i:i + chunk] = space.norm(u)
        G[i:i + chunk] = space.norm(u * masks[sensors.piece_index(ts)])
    return F, G


def compute_traces(
    fam: EvolutionFamily, sensors: SensorFamily, x0: np.ndarray, times: Sequence[float], x0_id: str = ""
) -> TraceRecord:
    times = np.asarray(times, dtype=float)
    if times.size and (times.min() < 0 or times.max() > fam.T * (1 + 1e-12)):
        raise DomainError(f"trace times must lie in [0, {fam.T}]")
    F, G = _F_G(fam, sensors, x0, times)
    return TraceRecord(times, F, G, x0_id)


# -- quadrature ------------------------------------------------------------------------


def _pieces(intervals: Iterable[tuple[float, float]], cuts: Sequence[float]) -> list[tuple[float, float]]:
    out = []
    for a, b in intervals:
        inner = [c for c in cuts if a < c < b]
        edges = [a, *inner, b]
        out.extend((lo, hi) for lo, hi in zip(edges, edges[1:]) if hi > lo)
    return out


def _nodes(pieces: list[tuple[float, float]], n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    a = np.array([p[0] for p in pieces])[:, None]
    b = np.array([p[1] for p in pieces])[:, None]
    return (0.5 * (a + b) + 0.5 * (b - a) * x).ravel(), (0.5 * (b - a) * w).ravel()


def piece_integrals(
    fam: EvolutionFamily,
    sensors: SensorFamily,
    x0: np.ndarray,
    pieces: list[tuple[float, float]],
    r: float = 1.0,
    rtol: float = 1e-8,
    start: int = 8,
    max_nodes: int = 1024,
) -> np.ndarray:
    """``int G^r`` over each piece (``r = inf``: sampled sup of ``G``).

    Gauss-Legendre on every piece, doubling the node count until the total
    changes by less than ``rtol`` relative.  Pieces must not straddle a sensor
    or symbol mesh point, so that ``G`` is smooth on each of them.
    """
    if not pieces:
        return np.zeros(0)
    k = len(pieces)
    inf = math.isinf(r)
    prev = None
    n = start
    while True:
        t, w = _nodes(pieces, n)
        _, G = _F_G(fam, sensors, x0, np.clip(t, 0.0, fam.T))
        G = G.reshape(k, n)
        if inf:
            ends = np.array([ab for ab in pieces]).ravel()
            _, Ge = _F_G(fam, sensors, x0, np.clip(ends, 0.0, fam.T))
            vals = np.maximum(G.max(axis=1), Ge.reshape(k, 2).max(axis=1))
        else:
            vals = (w.reshape(k, n) * G ** r).sum(axis=1)
        total = float(vals.max() if inf else vals.sum())
        if prev is not None and abs(total - prev) <= rtol * max(abs(total), 1e-300) or n >= max_nodes:
            return vals
        prev = total
        n *= 2


def G_norm(
    fam: EvolutionFamily,
    sensors: SensorFamily,
    x0: np.ndarray,
    intervals: Iterable[tuple[float, float]],
    r: float = 1.0,
    rtol: float = 1e-8,
) -> float:
    """``(int G^r)^(1/r)`` over a union of intervals; ``r = inf`` gives the sampled sup."""
    pieces = _pieces(intervals, sorted(set(sensors.mesh) | set(fam.symbol.mesh)))
    if not pieces:
        return 0.0
    vals = piece_integrals(fam, sensors, x0, pieces, r, rtol)
    if math.isinf(r):
        return float(vals.max())
    return float(vals.sum()) ** (1.0 / r)


# -- epsilon balance ---------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceAudit:
    s: float
    t: float
    epsilon: float
    lam: float
    F_t: float
    F_s: float
    G_t: float
    F_lam: float
    F_lam_perp: float
    G_lam: float
    G_lam_perp: float
    checks: tuple[Check, ...]

    @property
    def balance(self) -> Check:
        return self.checks[-1]

    @property
    def min_slack(self) -> float:
        return min(c.slack for c in self.checks)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "checks"}
        out["checks"] = [c.to_json() for c in self.checks]
        out["passed"] = self.passed
        return out


def lambda_for_epsilon(eps: float, d3: float, gamma2: float, gamma3: float, dt: float) -> float:
    """The ``lam`` with ``eps = exp(-(d3/2) lam^gamma2 dt^gamma3)``."""
    return (-2.0 * math.log(eps) / (d3 * dt ** gamma3)) ** (1.0 / gamma2)


def epsilon_balance_check(
    fam: EvolutionFamily,
    sensors: SensorFamily,
    bundle: ConstantBundle,
    s: float,
    t: float,
    eps: float,
    x0: np.ndarray,
    E: TimeSet | None = None,
    proj_family: ProjectorFamily = ProjectorFamily(),
) -> BalanceAudit:
    """Evaluate ``F(t) <= c1 exp(c2 (t-s)^-kappa) (G(t)/eps + eps F(s))`` and every step leading to it."""
    if not 0 <= s < t <= fam.T:
        raise DomainError(f"need 0 <= s < t <= T, got s={s}, t={t}")
    if not 0 < eps < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {eps}")
    if E is not None and not E.contains(t):
        raise DomainError(f"t={t} is not in E")
    space = fam.space
    b = bundle
    dt = t - s
    c1, c2 = derive_c1_c2(b)
    lam = lambda_for_epsilon(eps, b.d3, b.gamma2, b.gamma3, dt)

    u_s = fam.apply(s, 0.0, x0)
    u_t = fam.apply(t, s, u_s)
    C = lambda y: y * sensors.masks(space)[sensors.piece_index(t)]
    proj = proj_family.at(lam)
    low = apply_projector(proj, u_t, space)
    high = u_t - low

    F_s, F_t = float(space.norm(u_s)), float(space.norm(u_t))
    G_t = float(space.norm(C(u_t)))
    F_l, F_lp = float(space.norm(low)), float(space.norm(high))
    G_l, G_lp = float(space.norm(C(low))), float(space.norm(C(high)))

    growth = _exp(b.d1 * lam ** b.gamma1)
    blow = max(1.0, dt ** (-b.gamma4))
    decay = math.exp(-b.d3 * lam ** b.gamma2 * dt ** b.gamma3)
    checks = (
        Check("triangle_F", F_t, F_l + F_lp),
        Check("triangle_G", G_l, G_t + G_lp),
        Check("ucp", F_l, _prod(b.d0, growth, G_l)),
        Check("observation_bound", G_lp, b.C_sup * F_lp),
        Check("de", F_lp, b.d2 * blow * decay * F_s),
        Check("eq_F", F_t, _prod(growth, b.d0 * G_t + (b.d0 * b.C_sup + 1) * F_lp)),
        Check("eq_F2", F_t, _prod(c1, growth, blow, G_t + decay * F_s)),
        Check("balance", F_t, _prod(c1, _exp(c2 * dt ** (-b.kappa)), G_t / eps + eps * F_s)),
    )
    return BalanceAudit(s, t, eps, lam, F_t, F_s, G_t, F_l, F_lp, G_l, G_lp, checks)


# -- telescope -------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    m: int
    ell_m: float
    ell_next: float
    xi_m: float
    delta_m: float
    epsilon_m: float
    t: float
    F_ell_m: float
    F_ell_next: float
    F_t: float
    G_t: float
    G_integral: float
    identity_error: float
    checks: tuple[Check, ...]

    @property
    def before_rearrange(self) -> Check:
        return next(c for c in self.checks if c.name == "before_rearrange")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "checks"}
        out["checks"] = [c.to_json() for c in self.checks]
        out["passed"] = self.passed
        return out


@dataclass(frozen=True)
class TelescopeAudit:
    certificate: ObservabilityCertificate
    sequence: DensitySequence
    steps: tuple[StepRecord, ...]
    partial_lhs: tuple[float, ...]
    partial_rhs: tuple[float, ...]
    remainder: float
    remainder_bound: float
    integral_E: float
    F_ell1: float
    F_T: float
    final_checks: tuple[Check, ...]
    identity_tol: float = 1e-10

    @property
    def max_identity_error(self) -> float:
        return max((s.identity_error for s in self.steps), default=0.0)

    @property
    def passed(self) -> bool:
        return (
            all(s.passed for s in self.steps)
            and all(c.passed for c in self.final_checks)
            and self.max_identity_error <= self.identity_tol
            and all(b >= a * (1 - 1e-12) for a, b in zip(self.partial_rhs, self.partial_rhs[1:]))
        )

    def failures(self) -> list[str]:
        out = [f"m={s.m}:{c.name}" for s in self.steps for c in s.checks if not c.passed]
        out += [c.name for c in self.final_checks if not c.passed]
        if self.max_identity_error > self.identity_tol:
            out.append("identity")
        return out

    def to_json(self) -> dict:
        return {
            "certificate": self.certificate.to_json(),
            "sequence": self.sequence.to_json(),
            "steps": [s.to_json() for s in self.steps],
            "partial_lhs": list(self.partial_lhs),
            "partial_rhs": list(self.partial_rhs),
            "remainder": self.remainder,
            "remainder_bound": self.remainder_bound,
            "integral_E": self.integral_E,
            "F_ell1": self.F_ell1,
            "F_T": self.F_T,
            "final_checks": [c.to_json() for c in self.final_checks],
            "max_identity_error": self.max_identity_error,
            "passed": self.passed,
        }

    def csv_rows(self) -> list[dict]:
        return [
            {
                "m": s.m,
                "ell_m": s.ell_m,
                "delta_m": s.delta_m,
                "epsilon_m": s.epsilon_m,
                "lhs": s.before_rearrange.lhs,
                "rhs": s.before_rearrange.rhs,
                "slack": s.before_rearrange.slack,
                "passed": s.passed,
            }
            for s in self.steps
        ]


def _sample_point(E: TimeSet, lo: float, hi: float) -> float:
    """Midpoint of the longest piece of ``(lo, hi) ∩ E``."""
    parts = E.clip(lo, hi)
    a, b = max(parts, key=lambda ab: ab[1] - ab[0])
    return 0.5 * (a + b)


def run_telescope(
    fam: EvolutionFamily,
    sensors: SensorFamily,
    bundle: ConstantBundle,
    E: TimeSet,
    ell: float,
    ell1: float,
    depth: int,
    x0: np.ndarray,
    mode: Mode | str | None = None,
    rtol: float = 1e-8,
    proj_family: ProjectorFamily = ProjectorFamily(),
) -> TelescopeAudit:
    """Audit every step of the telescoping chain for ``m = 1..depth``.

    The infinite sum is cut after ``depth`` steps; the dropped tail equals the
    remainder ``delta_{D+1} exp(-3 c4 / delta_{D+1}^kappa) F(ell_{D+1})``, which
    is reported together with its a priori bound.
    """
    b = bundle
    q = q_ratio(b.gamma1, b.gamma2, b.gamma3)
    seq = build_sequence(E, ell, ell1, q, depth + 2, mode)
    cert = derive_certificate(b, ell=ell, ell1=ell1, T=fam.T, mode=seq.mode, measE=E.measure, depth=depth + 1)
    k, c1, c2, c3, c4 = cert.kappa, cert.c1, cert.c2, cert.c3, cert.c4
    factor = seq.mode.factor

    ts = [_sample_point(E, seq.midpoints[m], seq.points[m]) for m in range(depth)]
    F_pts, _ = _F_G(fam, sensors, x0, np.array(seq.points))
    F_ts, G_ts = _F_G(fam, sensors, x0, np.array(ts))
    cuts = sorted(set(sensors.mesh) | set(fam.symbol.mesh) | set(seq.points))
    pieces = _pieces(E.intervals, cuts)
    ints = piece_integrals(fam, sensors, x0, pieces, 1.0, rtol)
    mids = np.array([0.5 * (lo + hi) for lo, hi in pieces])
    gap_integral = lambda lo, hi: float(ints[(mids > lo) & (mids < hi)].sum())
    weight = [d * math.exp(-3 * c4 / d ** k) for d in seq.gaps]
    a = [_prod(weight[m], F_pts[m]) for m in range(depth + 1)]

    steps = []
    for m in range(depth):
        dm, dn = seq.gaps[m], seq.gaps[m + 1]
        lo, hi = seq.points[m + 1], seq.points[m]
        eps = cert.epsilon[m]
        Fl, Fn, Ft, Gt, t = float(F_pts[m]), float(F_pts[m + 1]), float(F_ts[m]), float(G_ts[m]), ts[m]
        big = _exp(3 * c4 / dm ** k)
        integral = gap_integral(lo, hi)
        # the steps behind the balance, on the same (s, t, eps); skipped if eps underflowed
        derivation = ()
        if eps > 0:
            sub = epsilon_balance_check(fam, sensors, b, lo, t, eps, x0, proj_family=proj_family)
            derivation = tuple(Check("balance." + c.name, c.lhs, c.rhs) for c in sub.checks[:-1])
        checks = (
            Check("exp_bounded", Fl, _prod(b.M, math.exp(b.omega * (hi - t)), Ft)),
            *derivation,
            Check("balance", Ft, _prod(c1, _exp(c2 * (t - lo) ** (-k)), _over(Gt, eps) + eps * Fn)),
            Check("combined", Fl, _prod(c3, _exp(c4 / dm ** k), _over(Gt, eps) + eps * Fn)),
            Check("before_rearrange", Fl, _prod(c3 ** 2 / q, big, Gt) + q * math.exp(-c4 / dm ** k) * Fn),
            Check("rearranged", a[m] - a[m + 1], _prod(c3 ** 2 / q * dm, Gt)),
            Check("integrated", a[m] - a[m + 1], _prod(factor * c3 ** 2 / q, integral)),
        )
        ident = abs(math.expm1(4 * c4 / dm ** k - 3 * c4 / dn ** k))
        steps.append(
            StepRecord(m + 1, hi, lo, seq.midpoints[m], dm, eps, t, Fl, Fn, Ft, Gt, integral, ident, checks)
        )

    partial_lhs = tuple(a[0] - a[j + 1] for j in range(depth))
    partial_rhs = tuple(np.cumsum([factor * c3 ** 2 / q * s.G_integral for s in steps]).tolist())
    x0_norm = float(fam.space.norm(x0))
    growth_T = b.M * math.exp(b.omega_plus * fam.T)
    remainder = a[depth]
    remainder_bound = _prod(weight[depth], growth_T, x0_norm)

    int_E = float(ints.sum())
    F_T = float(fam.space.norm(fam.apply(fam.T, 0.0, x0)))
    F1 = float(F_pts[0])
    lead = factor * c3 ** 2 / q / cert.delta1 * _exp(3 * c4 / cert.delta1 ** k)
    finals = (
        Check("telescoped_sum", partial_lhs[-1] if partial_lhs else 0.0, partial_rhs[-1] if partial_rhs else 0.0),
        Check("remainder_bound", remainder, remainder_bound),
        Check("F_ell1_truncated", F1, (partial_rhs[-1] + remainder) / weight[0] if partial_rhs and weight[0] else math.inf),
        Check("F_ell1", F1, _prod(lead, int_E)),
        Check("F_T_from_F_ell1", F_T, b.M * math.exp(b.omega * (fam.T - ell1)) * F1),
        Check("obs", F_T, _prod(cert.C_obs, int_E)),
        Check("F_ell_m_bounded", float(np.max(F_pts)), growth_T * x0_norm),
    )
    return TelescopeAudit(cert, seq, tuple(steps), partial_lhs, partial_rhs, remainder, remainder_bound, int_E, F1, F_T, finals)


# -- final-state observability -------------------------------------------------------------


@dataclass(frozen=True)
class Margin:
    x0_id: str
    lhs: float
    rhs: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "lhs", float(self.lhs))
        object.__setattr__(self, "rhs", float(self.rhs))

    @property
    def margin(self) -> float:
        if math.isinf(self.rhs):
            return math.inf
        return self.rhs - self.lhs

    def to_json(self) -> dict:
        return {"x0_id": self.x0_id, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin}


@dataclass(frozen=True)
class ObsReport:
    r: float
    C_obs: float
    C_obs_r: float
    margins: tuple[Margin, ...]
    certified: bool

    @property
    def min_margin(self) -> float:
        return min(m.margin for m in self.margins)

    @property
    def passed(self) -> bool | None:
        if not self.certified:
            return None
        return all(m.margin >= -REL_TOL * max(m.lhs, 1e-300) for m in self.margins)

    def to_json(self) -> dict:
        return {
            "r": "inf" if math.isinf(self.r) else self.r,
            "C_obs": self.C_obs,
            "C_obs_r": self.C_obs_r,
            "certified": self.certified,
            "passed": self.passed,
            "min_margin": self.min_margin,
            "margins": [m.to_json() for m in self.margins],
        }


def verify_OBS(
    fam: EvolutionFamily,
    sensors: SensorFamily,
    certificate: ObservabilityCertificate,
    E: TimeSet,
    r: float,
    batch: Sequence[np.ndarray],
    mode: str = "certify",
    ids: Sequence[str] | None = None,
    rtol: float = 1e-8,
) -> ObsReport:
    """``||U(T, 0) x0|| <= C_obs |E|^(1 - 1/r) ||G||_{L^r(E)}`` for each ``x0`` of the batch."""
    if mode not in ("certify", "diagnostic"):
        raise DomainError(f"unknown mode {mode!r}")
    certified = certificate.bundle.certified
    if mode == "certify" and not certified:
        raise UncertifiedBundleError("bundle is not certified; rerun in diagnostic mode to see margins")
    inv_r(r)
    C_r = holder_lift(certificate.C_obs, E.measure, r)
    ids = list(ids) if ids is not None else [f"x{i}" for i in range(len(batch))]
    margins = []
    for x0, name in zip(batch, ids):
        lhs = float(fam.space.norm(fam.apply(fam.T, 0.0, x0)))
        rhs = _prod(C_r, G_norm(fam, sensors, x0, E.intervals, r, rtol))
        margins.append(Margin(name, lhs, rhs))
    return ObsReport(r, certificate.C_obs, C_r, tuple(margins), certified and mode == "certify")
