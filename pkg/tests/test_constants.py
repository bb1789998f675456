import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from finalobs.constants import (
    ConstantBundle,
    InvariantViolation,
    Mode,
    VacuousBoundWarning,
    blowup_envelope,
    cobs_bound,
    cobs_explicit,
    derive_c1_c2,
    derive_c3_c4,
    derive_certificate,
    epsilon_choice,
    f_max,
    f_value,
    holder_lift,
    inv_r,
    lambda_star,
    log_cobs_explicit,
    q_ratio,
    remark_constants,
)
from oracles import grid_max

WORKED = dict(d0=1.0, d1=1.0, gamma1=1.0, d2=1.0, d3=2.0, gamma2=2.0, gamma3=1.0, gamma4=0.0, M=1.0, omega=0.0, C_sup=1.0)


@st.composite
def bundles(draw):
    g1 = draw(st.floats(0.3, 2.0))
    return ConstantBundle(
        d0=draw(st.floats(0.1, 5.0)),
        d1=draw(st.floats(0.01, 3.0)),
        gamma1=g1,
        d2=draw(st.floats(1.0, 4.0)),
        d3=draw(st.floats(0.05, 5.0)),
        gamma2=g1 + draw(st.floats(0.2, 3.0)),
        gamma3=draw(st.floats(0.3, 2.0)),
        gamma4=draw(st.floats(0.0, 2.0)),
        M=draw(st.floats(1.0, 3.0)),
        omega=draw(st.floats(-2.0, 2.0)),
        C_sup=draw(st.floats(0.0, 2.0)),
    )


class TestBundle:
    def test_requires_gamma_gap(self):
        with pytest.raises(InvariantViolation):
            ConstantBundle(**{**WORKED, "gamma2": 1.0})

    @pytest.mark.parametrize("key,value", [("d2", 0.5), ("M", 0.9), ("d0", 0.0), ("d3", 0.0), ("d1", -1.0)])
    def test_rejects_bad_values(self, key, value):
        with pytest.raises(InvariantViolation):
            ConstantBundle(**{**WORKED, key: value})

    def test_json_keeps_certification_only_if_untouched(self):
        b = ConstantBundle(**WORKED, certified=True, lineage={"seed": 1})
        data = b.to_json()
        assert ConstantBundle.from_json(data).certified
        data["d3"] = 20.0
        assert not ConstantBundle.from_json(data).certified

    def test_replace_drops_certification(self):
        b = ConstantBundle(**WORKED, certified=True)
        assert not b.replace(d3=20.0).certified


class TestQRatio:
    @pytest.mark.parametrize("g,want", [((1, 2, 1), 0.75), ((1, 3, 1), 0.5625), ((1, 2, 2), 0.75 ** 0.5)])
    def test_examples(self, g, want):
        assert q_ratio(*g) == pytest.approx(want, rel=1e-15)

    def test_gap_required(self):
        with pytest.raises(InvariantViolation):
            q_ratio(2, 2, 1)

    @given(bundles())
    def test_q_to_kappa_is_three_quarters(self, b):
        assert q_ratio(b.gamma1, b.gamma2, b.gamma3) ** b.kappa == pytest.approx(0.75, rel=1e-12)


class TestMaximiser:
    def test_examples(self):
        assert lambda_star(1, 2, 1, 2, 1, 1) == pytest.approx(0.5)
        assert lambda_star(1, 2, 1, 2, 1, 0.25) == pytest.approx(2.0)
        assert f_max(1, 2, 1, 2, 1, 1) == pytest.approx(0.25)
        assert f_max(1, 2, 1, 2, 1, 0.25) == pytest.approx(1.0)

    def test_against_grid_oracle(self):
        lam, val = grid_max(lambda x: f_value(x, 2, 1, 1, 3, 1, 1), 0.0, 3.0, 3_000_001)
        assert lambda_star(2, 1, 1, 3, 1, 1) == pytest.approx((4 / 3) ** 0.5, rel=1e-12)
        assert lambda_star(2, 1, 1, 3, 1, 1) == pytest.approx(lam, abs=2e-6)
        assert f_max(2, 1, 1, 3, 1, 1) == pytest.approx(2 * (2 / 3) * (4 / 3) ** 0.5, rel=1e-12)
        assert f_max(2, 1, 1, 3, 1, 1) == pytest.approx(val, rel=1e-8)

    @given(bundles(), st.floats(1e-3, 10.0))
    def test_consistency_and_maximality(self, b, dt):
        args = (b.d1, b.d3, b.gamma1, b.gamma2, b.gamma3)
        ls = lambda_star(*args, dt)
        fm = f_max(*args, dt)
        assert f_value(ls, *args, dt) == pytest.approx(fm, rel=1e-12)
        for side in (1 - 1e-3, 1 + 1e-3):
            assert f_value(ls * side, *args, dt) < fm

    def test_nonpositive_dt(self):
        with pytest.raises(InvariantViolation):
            f_max(1, 2, 1, 2, 1, 0.0)


class TestBlowup:
    def test_examples(self):
        assert blowup_envelope(1, 2, 1, 0, 0.3) == 1.0
        assert blowup_envelope(1, 2, 1, 1, 1.0) == pytest.approx(math.e)
        assert blowup_envelope(1, 2, 1, 2, 0.1) == pytest.approx(math.exp(20))
        assert blowup_envelope(1, 2, 1, 2, 0.1) >= 100

    @pytest.mark.filterwarnings("ignore::finalobs.constants.VacuousBoundWarning")
    @given(bundles(), st.floats(1e-3, 5.0))
    def test_dominates_polynomial_blowup(self, b, dt):
        env = blowup_envelope(b.gamma1, b.gamma2, b.gamma3, b.gamma4, dt)
        assert env >= max(1.0, dt ** -b.gamma4) * (1 - 1e-12)


class TestDerivedConstants:
    def test_c1_c2_examples(self):
        assert derive_c1_c2(ConstantBundle(**WORKED)) == pytest.approx((2.0, 0.25))
        assert derive_c1_c2(ConstantBundle(**{**WORKED, "gamma4": 1.0}))[1] == pytest.approx(1.25)
        assert derive_c1_c2(ConstantBundle(**{**WORKED, "d0": 3.0, "C_sup": 0.0}))[0] == 3.0

    def test_c3_c4_examples(self):
        assert derive_c3_c4(2, 0.25, 1, 0, 1, 1, Mode.GENERAL) == pytest.approx((2.0, 1.5))
        assert derive_c3_c4(2, 0.25, 1, 0, 1, 1, Mode.FULL_INTERVAL) == pytest.approx((2.0, 0.5))
        assert derive_c3_c4(1, 0.25, 2, -1, 5, 1)[0] == 2.0

    def test_epsilon_examples(self):
        assert epsilon_choice(2, 1.5, 1, 0.75, 1) == pytest.approx(0.375 * math.exp(-3), rel=1e-14)
        assert epsilon_choice(2, 1.5, 0.5, 0.75, 1) == pytest.approx(0.375 * math.exp(-6), rel=1e-14)
        near = [epsilon_choice(1, c4, 1, q, 1) for q, c4 in [(0.9, 0.1), (0.99, 0.01), (0.999, 0.001)]]
        assert near == sorted(near) and all(e < 1 for e in near)

    def test_cobs_examples(self):
        base = cobs_explicit(2, 1.5, 0.75, 1, 1, 0, 1, 1, 1, Mode.GENERAL)
        assert base == pytest.approx(32 * math.exp(4.5), rel=1e-12)
        assert cobs_explicit(2, 0.5, 0.75, 1, 1, 0, 1, 1, 1, Mode.FULL_INTERVAL) == pytest.approx(
            2 * 4 * 4 / 3 * math.exp(1.5), rel=1e-12
        )
        assert cobs_explicit(2, 1.5, 0.75, 1, 1, 1, 3, 1, 1) == pytest.approx(base * math.exp(2), rel=1e-12)

    def test_envelope_constant_examples(self):
        C1, C2, C3 = remark_constants(ConstantBundle(**WORKED), 0.75)
        assert (C1, C2, C3) == pytest.approx((2 * 4 / (0.75 * 0.25), 6.0, 0.0))
        assert remark_constants(ConstantBundle(**{**WORKED, "omega": 2.0}), 0.75)[2] == 6.0
        b = ConstantBundle(**{**WORKED, "M": 2.0, "d0": 1.0, "C_sup": 0.0})
        assert remark_constants(b, 0.5)[0] == pytest.approx(64.0)

    def test_cobs_bound_examples(self):
        C1 = 2 * 4 / (0.75 * 0.25)
        assert cobs_bound(C1, 6, 0, 0, 1, 1, 1, 1) == pytest.approx(C1 * math.exp(6))
        assert cobs_bound(C1, 6, 0, 0, 1, 1, math.inf, 1) == pytest.approx(C1 * math.exp(6))
        assert cobs_bound(C1, 6, 0, 0, 4, 4, 2, 1) == pytest.approx(C1 / 2 * math.exp(1.5))

    def test_holder_examples(self):
        assert holder_lift(10, 2, 1) == 10
        assert holder_lift(10, 4, 2) == pytest.approx(20)
        assert holder_lift(10, 4, math.inf) == 40
        assert inv_r(math.inf) == 0.0

    def test_worked_certificate(self):
        cert = derive_certificate(ConstantBundle(**WORKED), ell=0.0, ell1=4.0, T=4.0, mode="general", depth=5)
        assert (cert.q, cert.c1, cert.c2, cert.c3, cert.c4, cert.delta1) == pytest.approx((0.75, 2, 0.25, 2, 1.5, 1))
        assert cert.C_obs == pytest.approx(32 * math.exp(4.5), rel=1e-12)
        assert len(cert.epsilon) == 5
        assert "uncertified_bundle" in cert.flags

    def test_mode_mixing_rejected(self):
        cert = derive_certificate(ConstantBundle(**WORKED), ell=0.0, ell1=1.0, T=1.0, mode="general")
        with pytest.raises(InvariantViolation):
            type(cert)(**{**cert.__dict__, "mode": Mode.FULL_INTERVAL})

    def test_overflow_is_flagged(self):
        b = ConstantBundle(**{**WORKED, "d3": 1e-3})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", VacuousBoundWarning)
            cert = derive_certificate(b, ell=0.0, ell1=1e-4, T=1.0)
        assert math.isinf(cert.C_obs) and cert.overflow and "overflow" in cert.flags
        assert math.isfinite(cert.log_C_obs)
        with pytest.warns(VacuousBoundWarning):
            cobs_explicit(1, 1e4, 0.75, 1e-3, 1, 0, 1, 1, 1)


class TestProperties:
    @given(bundles(), st.floats(1e-3, 10.0))
    def test_telescoping_choice_of_q(self, b, delta):
        c1, c2 = derive_c1_c2(b)
        _, c4 = derive_c3_c4(c1, c2, b.M, b.omega, 1.0, b.kappa)
        q = q_ratio(b.gamma1, b.gamma2, b.gamma3)
        lhs = 4 * c4 / delta ** b.kappa
        rhs = 3 * c4 / (q * delta) ** b.kappa
        assert lhs == pytest.approx(rhs, rel=1e-10)

    @given(bundles(), st.floats(1e-2, 10.0), st.sampled_from(list(Mode)))
    def test_epsilon_below_one(self, b, delta, mode):
        c1, c2 = derive_c1_c2(b)
        c3, c4 = derive_c3_c4(c1, c2, b.M, b.omega, delta, b.kappa, mode)
        q = q_ratio(b.gamma1, b.gamma2, b.gamma3)
        assert c1 >= 1 and c3 >= 1
        assert 0 <= epsilon_choice(c3, c4, delta, q, b.kappa) < 1
        assert math.log(q) - 2 * c4 / delta ** b.kappa - math.log(c3) < 0

    @given(bundles(), st.floats(0.0, 0.5), st.floats(0.05, 1.0), st.floats(0.0, 2.0))
    def test_closed_form_envelope(self, b, tau1, width, extra):
        tau2 = tau1 + width
        T = tau2 + extra
        q = q_ratio(b.gamma1, b.gamma2, b.gamma3)
        cert = derive_certificate(b, ell=tau1, ell1=tau2, T=T, mode=Mode.FULL_INTERVAL)
        C1, C2, C3 = remark_constants(b, q)
        bound_log = math.log(C1 / width) + C2 / width ** b.kappa + C3 * T
        assert cert.log_C_obs <= bound_log + 1e-12 * abs(bound_log)

    @given(bundles(), st.floats(0.05, 2.0), st.floats(1.01, 2.0))
    def test_monotone_directions(self, b, delta1, bump):
        c1, c2 = derive_c1_c2(b)
        q = q_ratio(b.gamma1, b.gamma2, b.gamma3)

        def logC(c2=c2, delta1=delta1, M=b.M, omega=b.omega):
            c3, c4 = derive_c3_c4(c1, c2, M, omega, delta1, b.kappa)
            return log_cobs_explicit(c3, c4, q, delta1, M, omega, 2.0, 1.0, b.kappa)

        base = logC()
        assert logC(c2=c2 * bump) >= base
        assert logC(M=b.M * bump) >= base
        assert logC(omega=abs(b.omega) * bump + 0.1) >= logC(omega=abs(b.omega))
        # c3 carries exp(omega_+ delta1), so delta1-monotonicity needs omega <= 0
        assert logC(delta1=delta1 * bump, omega=-abs(b.omega)) <= logC(omega=-abs(b.omega))
