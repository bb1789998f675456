"""Explicit constants of the telescoping observability argument.

Every function here is a closed-form evaluation.  Exponentials that overflow
binary64 return ``inf`` and emit :class:`VacuousBoundWarning`: the bound is
still true, it just says nothing.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

from .time_sets import Mode

__all__ = [
    "ConstantBundle",
    "InvariantViolation",
    "Mode",
    "ObservabilityCertificate",
    "VacuousBoundWarning",
    "blowup_envelope",
    "cobs_bound",
    "cobs_explicit",
    "derive_c1_c2",
    "derive_c3_c4",
    "derive_certificate",
    "epsilon_choice",
    "f_max",
    "f_value",
    "holder_lift",
    "inv_r",
    "lambda_star",
    "q_ratio",
    "remark_constants",
]


class InvariantViolation(ValueError):
    """Constants violate a hypothesis of the observability theorem."""


class VacuousBoundWarning(RuntimeWarning):
    """An exponential overflowed; the resulting bound is +inf."""


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        warnings.warn(f"exp({x:.6g}) overflows binary64; bound reported as +inf", VacuousBoundWarning, stacklevel=3)
        return math.inf


def inv_r(r: float) -> float:
    """``1/r`` with ``1/inf = 0``."""
    if not r >= 1:
        raise InvariantViolation(f"norm exponent r must lie in [1, inf], got {r}")
    return 0.0 if math.isinf(r) else 1.0 / r


def _kappa(g1: float, g2: float, g3: float) -> float:
    if not (g1 > 0 and g3 > 0):
        raise InvariantViolation("gamma1 and gamma3 must be positive")
    if not g2 > g1:
        raise InvariantViolation(f"need gamma2 > gamma1, got gamma1={g1}, gamma2={g2}")
    return g1 * g3 / (g2 - g1)


@dataclass(frozen=True)
class ConstantBundle:
    """Inputs of the observability theorem.

    ``(d0, d1, gamma1)`` come from the uncertainty principle, ``(d2, d3,
    gamma2, gamma3, gamma4)`` from the dissipation estimate, ``(M, omega)``
    from the exponential bound, and ``C_sup`` is the sup of the observation
    operator norms over ``E``.  ``extra_blowup`` is an optional constant added
    to ``c2`` when the dissipation blow-up is exponential instead of
    polynomial; it is reported separately because it is not part of the
    polynomial-blow-up formula.
    """

    d0: float
    d1: float
    gamma1: float
    d2: float
    d3: float
    gamma2: float
    gamma3: float
    gamma4: float
    M: float
    omega: float
    C_sup: float
    extra_blowup: float = 0.0
    certified: bool = field(default=False, compare=False)
    lineage: dict | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        _kappa(self.gamma1, self.gamma2, self.gamma3)
        checks = {
            "d0 > 0": self.d0 > 0,
            "d1 > 0": self.d1 > 0,
            "d2 >= 1": self.d2 >= 1,
            "d3 > 0": self.d3 > 0,
            "gamma4 >= 0": self.gamma4 >= 0,
            "M >= 1": self.M >= 1,
            "C_sup >= 0": self.C_sup >= 0,
            "extra_blowup >= 0": self.extra_blowup >= 0,
            "omega finite": math.isfinite(self.omega),
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise InvariantViolation("bundle violates " + ", ".join(bad))

    @property
    def kappa(self) -> float:
        return _kappa(self.gamma1, self.gamma2, self.gamma3)

    @property
    def omega_plus(self) -> float:
        return max(self.omega, 0.0)

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("certified", "lineage")}

    def digest(self) -> str:
        payload = json.dumps({"values": self.values(), "lineage": self.lineage}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def replace(self, **changes) -> "ConstantBundle":
        data = {**self.values(), "lineage": self.lineage, "certified": False, **changes}
        return ConstantBundle(**data)

    def to_json(self) -> dict:
        return {**self.values(), "lineage": self.lineage, "certified": self.certified, "digest": self.digest()}

    @classmethod
    def from_json(cls, data: dict) -> "ConstantBundle":
        """Rebuild a bundle; it counts as certified only if its digest still matches."""
        names = {f.name for f in fields(cls)} - {"certified"}
        bundle = cls(**{k: v for k, v in data.items() if k in names})
        ok = bool(data.get("certified")) and data.get("digest") == bundle.digest()
        object.__setattr__(bundle, "certified", ok)
        return bundle


# -- the maximisation of f(lambda) = d1 lambda^g1 - (d3/2) lambda^g2 dt^g3 ------------


def q_ratio(gamma1: float, gamma2: float, gamma3: float) -> float:
    """Geometric ratio ``(3/4) ** ((gamma2 - gamma1) / (gamma1 gamma3))``."""
    return 0.75 ** (1.0 / _kappa(gamma1, gamma2, gamma3))


def f_value(lam, d1, d3, gamma1, gamma2, gamma3, dt):
    return d1 * lam ** gamma1 - 0.5 * d3 * lam ** gamma2 * dt ** gamma3


def lambda_star(d1, d3, gamma1, gamma2, gamma3, dt) -> float:
    """Unique maximiser of ``f_value`` on ``(0, inf)``."""
    _kappa(gamma1, gamma2, gamma3)
    if dt <= 0:
        raise InvariantViolation(f"dt must be positive, got {dt}")
    e = 1.0 / (gamma2 - gamma1)
    return (2 * d1 * gamma1 / (d3 * gamma2)) ** e * (1.0 / dt) ** (gamma3 * e)


def f_max(d1, d3, gamma1, gamma2, gamma3, dt) -> float:
    kappa = _kappa(gamma1, gamma2, gamma3)
    if dt <= 0:
        raise InvariantViolation(f"dt must be positive, got {dt}")
    base = (2 * d1 * gamma1 / (d3 * gamma2)) ** (gamma1 / (gamma2 - gamma1))
    return d1 * (1 - gamma1 / gamma2) * base * (1.0 / dt) ** kappa


def blowup_envelope(gamma1, gamma2, gamma3, gamma4, dt) -> float:
    """``exp(gamma4 / kappa * dt**-kappa)``, which dominates ``max(1, dt**-gamma4)``."""
    kappa = _kappa(gamma1, gamma2, gamma3)
    if dt <= 0:
        raise InvariantViolation(f"dt must be positive, got {dt}")
    return _exp(gamma4 / kappa * dt ** (-kappa))


# -- c1 .. c4, epsilon, C_obs ----------------------------------------------------------


def derive_c1_c2(bundle: ConstantBundle) -> tuple[float, float]:
    b = bundle
    c1 = max(b.d0, (b.d0 * b.C_sup + 1) * b.d2)
    kappa = b.kappa
    c2 = f_max(b.d1, b.d3, b.gamma1, b.gamma2, b.gamma3, 1.0) + b.gamma4 / kappa + b.extra_blowup
    return c1, c2


def derive_c3_c4(c1, c2, M, omega, delta1, kappa, mode: Mode | str = Mode.GENERAL) -> tuple[float, float]:
    if delta1 <= 0:
        raise InvariantViolation(f"delta1 must be positive, got {delta1}")
    mode = Mode(mode)
    c3 = M * c1 * _exp(max(omega, 0.0) * delta1)
    c4 = c2 * mode.factor ** kappa
    return c3, c4


def epsilon_choice(c3, c4, delta_m, q, kappa) -> float:
    """``q exp(-2 c4 / delta_m**kappa) / c3``; lies in (0, 1) whenever ``c3 >= 1``."""
    if delta_m <= 0:
        raise InvariantViolation(f"delta_m must be positive, got {delta_m}")
    return q * math.exp(-2 * c4 / delta_m ** kappa) / c3


def cobs_explicit(c3, c4, q, delta1, M, omega, T, ell1, kappa, mode: Mode | str = Mode.GENERAL) -> float:
    """Observability constant for ``r = 1`` produced by the telescoping sum."""
    if delta1 <= 0:
        raise InvariantViolation(f"delta1 must be positive, got {delta1}")
    if ell1 > T:
        raise InvariantViolation(f"ell1={ell1} exceeds T={T}")
    mode = Mode(mode)
    return _exp(math.log(mode.factor * c3 ** 2 / (q * delta1) * M) + 3 * c4 / delta1 ** kappa + omega * (T - ell1))


def log_cobs_explicit(c3, c4, q, delta1, M, omega, T, ell1, kappa, mode: Mode | str = Mode.GENERAL) -> float:
    mode = Mode(mode)
    return math.log(mode.factor * c3 ** 2 / (q * delta1) * M) + 3 * c4 / delta1 ** kappa + omega * (T - ell1)


def remark_constants(bundle: ConstantBundle, q: float) -> tuple[float, float, float]:
    """``(C1, C2, C3)`` of the closed-form envelope; independent of r, T, E and the interval."""
    c1, c2 = derive_c1_c2(bundle)
    C1 = 2 * bundle.M ** 3 * c1 ** 2 / (q * (1 - q))
    C2 = 3 * c2 * (2 / (1 - q)) ** bundle.kappa
    C3 = 3 * bundle.omega_plus
    return C1, C2, C3


def cobs_bound(C1, C2, C3, tau1, tau2, T, r, kappa) -> float:
    if not tau1 < tau2 <= T:
        raise InvariantViolation(f"need tau1 < tau2 <= T, got {tau1}, {tau2}, {T}")
    width = tau2 - tau1
    return C1 / width ** inv_r(r) * _exp(C2 / width ** kappa + C3 * T)


def holder_lift(C_obs_1: float, measE: float, r: float) -> float:
    """Constant for the ``L^r(E)`` norm obtained from the ``L^1(E)`` one."""
    return C_obs_1 * measE ** (1.0 - inv_r(r))


@dataclass(frozen=True)
class ObservabilityCertificate:
    """The whole derived chain for one instance.

    ``C_obs`` is the ``r = 1`` constant; ``C_obs_r`` is lifted to the norm
    exponent ``r`` through ``|E|**(1 - 1/r)``.
    """

    bundle: ConstantBundle
    mode: Mode
    T: float
    ell: float
    ell1: float
    kappa: float
    q: float
    c1: float
    c2: float
    c3: float
    c4: float
    delta1: float
    epsilon: tuple[float, ...]
    C_obs: float
    log_C_obs: float
    r: float
    measE: float
    C_obs_r: float
    C1: float
    C2: float
    C3: float
    overflow: bool
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        expected = self.c2 * self.mode.factor ** self.kappa
        if not math.isclose(self.c4, expected, rel_tol=1e-12):
            raise InvariantViolation(f"c4={self.c4} inconsistent with mode {self.mode.value} (expected {expected})")
        if self.c1 < 1 or self.c3 < 1:
            raise InvariantViolation("c1 and c3 must be >= 1")
        # 0 is allowed: the true value is positive but can underflow binary64
        if any(not 0 <= e < 1 for e in self.epsilon):
            raise InvariantViolation("epsilon choices must lie in (0, 1)")

    def to_json(self) -> dict:
        out = asdict(self)
        out["bundle"] = self.bundle.to_json()
        out["mode"] = self.mode.value
        out["epsilon"] = list(self.epsilon)
        out["flags"] = list(self.flags)
        return out


def derive_certificate(
    bundle: ConstantBundle,
    *,
    ell: float,
    ell1: float,
    T: float,
    mode: Mode | str = Mode.GENERAL,
    r: float = 1.0,
    measE: float | None = None,
    depth: int = 0,
) -> ObservabilityCertificate:
    """Evaluate the full chain ``q -> c1..c4 -> epsilon_m -> C_obs`` for a chosen ``(ell, ell1)``."""
    mode = Mode(mode)
    if not 0 <= ell < ell1 <= T:
        raise InvariantViolation(f"need 0 <= ell < ell1 <= T, got {ell}, {ell1}, {T}")
    kappa = bundle.kappa
    q = q_ratio(bundle.gamma1, bundle.gamma2, bundle.gamma3)
    c1, c2 = derive_c1_c2(bundle)
    delta1 = (1 - q) * (ell1 - ell)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", VacuousBoundWarning)
        c3, c4 = derive_c3_c4(c1, c2, bundle.M, bundle.omega, delta1, kappa, mode)
        eps = tuple(epsilon_choice(c3, c4, q ** (m - 1) * delta1, q, kappa) for m in range(1, depth + 1))
        C_obs = cobs_explicit(c3, c4, q, delta1, bundle.M, bundle.omega, T, ell1, kappa, mode)
        log_C = log_cobs_explicit(c3, c4, q, delta1, bundle.M, bundle.omega, T, ell1, kappa, mode)
        C1, C2, C3 = remark_constants(bundle, q)
        mE = (ell1 - ell) if measE is None else measE
        C_obs_r = holder_lift(C_obs, mE, r)
    flags = []
    if caught:
        flags.append("overflow")
    if any(e == 0 for e in eps):
        flags.append("epsilon_underflow")
    if bundle.extra_blowup:
        flags.append("extra_blowup_in_c2")
    if not bundle.certified:
        flags.append("uncertified_bundle")
    return ObservabilityCertificate(
        bundle=bundle,
        mode=mode,
        T=T,
        ell=ell,
        ell1=ell1,
        kappa=kappa,
        q=q,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        delta1=delta1,
        epsilon=eps,
        C_obs=C_obs,
        log_C_obs=log_C,
        r=r,
        measE=mE,
        C_obs_r=C_obs_r,
        C1=C1,
        C2=C2,
        C3=C3,
        overflow=bool(caught) or math.isinf(C_obs),
        flags=tuple(flags),
    )
