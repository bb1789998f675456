import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from finalobs.evolution import (
    CertificationError,
    EllipticSymbol,
    EvolutionFamily,
    GridSpace,
    NotEllipticError,
    ProjectorFamily,
    ResolutionMismatch,
    SpectralProjector,
    apply_U,
    apply_projector,
    certify_DE,
    check_ellipticity,
    estimate_exp_bound,
    multiplier_norm,
    random_field,
    read_field,
    write_field,
)
from finalobs.time_sets import DomainError
from oracles import heat_multiplier_1d

SPACE = GridSpace(1, 64)


def mode(space, k):
    return np.exp(1j * k * space.coords()[0])


def theta_symbol(thetas=(1.0, 2.0), degree=2):
    return EllipticSymbol(degree, (0.0, 0.5, 1.0), {(degree,): [-t if degree % 4 == 2 else t for t in thetas]})


class TestGridSpace:
    def test_rejects_bad_sizes(self):
        with pytest.raises(DomainError):
            GridSpace(1, 100)
        with pytest.raises(DomainError):
            GridSpace(3, 16)
        with pytest.raises(DomainError):
            GridSpace(1, 16, 0.5)

    @pytest.mark.parametrize("d", [1, 2])
    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0, math.inf])
    def test_constant_field_norm(self, d, p):
        space = GridSpace(d, 16, p)
        want = 1.0 if math.isinf(p) else (2 * math.pi) ** (d / p)
        assert space.norm(np.ones(space.shape)) == pytest.approx(want, rel=1e-14)

    def test_field_round_trip(self, tmp_path):
        space = GridSpace(2, 8, math.inf)
        x = random_field(space, np.random.default_rng(0))
        write_field(tmp_path / "x.bin", x, space)
        y, sp = read_field(tmp_path / "x.bin")
        assert sp == space and np.array_equal(x, y)

    def test_multiplier_norm_exact_cases(self):
        space = GridSpace(1, 32, 1.0)
        assert multiplier_norm(np.ones(32), space) == pytest.approx(1.0)
        assert multiplier_norm(np.ones(32), space, 2) == 1.0
        m = heat_multiplier_1d(32, 0.05)
        kernel_mass = float(np.abs(np.fft.ifft(m)).sum())
        assert multiplier_norm(m, space, math.inf) == pytest.approx(kernel_mass, rel=1e-12)


class TestEllipticity:
    def test_heat(self):
        cert = check_ellipticity(EllipticSymbol.heat())
        assert cert.passed and cert.degree == 2 and cert.c == pytest.approx(1.0)

    def test_pure_dispersion_fails(self):
        # i xi^3 = -(i xi)^3
        cert = check_ellipticity(EllipticSymbol(3, (0.0, 1.0), {(3,): [-1.0]}))
        assert not cert.passed and "principal" in cert.reason

    def test_theta_quartic(self):
        cert = check_ellipticity(EllipticSymbol(4, (0.0, 0.5, 1.0), {(4,): [1.0, 2.0]}))
        assert cert.passed and cert.degree == 4 and cert.c == pytest.approx(1.0)

    def test_degenerate(self):
        cert = check_ellipticity(EllipticSymbol(2, (0.0, 1.0), {(2,): [0.0], (0,): [1.0]}))
        assert not cert.passed and "degenerate" in cert.reason

    def test_family_refuses_non_elliptic(self):
        with pytest.raises(NotEllipticError):
            EvolutionFamily(EllipticSymbol(3, (0.0, 1.0), {(3,): [-1.0]}), SPACE)

    def test_json_round_trip(self):
        sym = theta_symbol()
        assert EllipticSymbol.from_json(sym.to_json()).evaluate(SPACE).tolist() == sym.evaluate(SPACE).tolist()


class TestApplyU:
    def test_single_heat_mode(self):
        fam = EvolutionFamily(EllipticSymbol.heat(), SPACE)
        x = mode(SPACE, 3)
        assert np.allclose(apply_U(fam, 0.3, 0.2, x), math.exp(-0.9) * x, rtol=0, atol=1e-14)

    def test_piecewise_diffusivity(self):
        fam = EvolutionFamily(theta_symbol(), SPACE)
        x = mode(SPACE, 1)
        assert np.allclose(apply_U(fam, 1.0, 0.0, x), math.exp(-1.5) * x, rtol=0, atol=1e-14)

    def test_identity_is_exact(self):
        fam = EvolutionFamily(theta_symbol(), SPACE)
        x = random_field(SPACE, np.random.default_rng(1))
        assert np.array_equal(apply_U(fam, 0.4, 0.4, x), x)

    def test_backwards_is_error(self):
        fam = EvolutionFamily(EllipticSymbol.heat(), SPACE)
        with pytest.raises(DomainError):
            apply_U(fam, 0.1, 0.2, np.zeros(64))
        with pytest.raises(DomainError):
            apply_U(fam, 1.5, 0.2, np.zeros(64))

    def test_matches_independent_multiplier(self):
        fam = EvolutionFamily(EllipticSymbol.heat(), SPACE)
        x = np.random.default_rng(2).standard_normal(64)
        want = np.fft.ifft(heat_multiplier_1d(64, 0.25) * np.fft.fft(x)).real
        assert np.allclose(apply_U(fam, 0.5, 0.25, x), want, atol=1e-14)

    def test_real_fields_stay_real(self):
        fam = EvolutionFamily(EllipticSymbol.heat(), SPACE)
        assert np.isrealobj(apply_U(fam, 0.5, 0.0, np.ones(64)))

    def test_evolve_many_matches_pointwise(self):
        fam = EvolutionFamily(theta_symbol(), SPACE)
        x = random_field(SPACE, np.random.default_rng(3), bandwidth=10)
        times = np.linspace(0.1, 1.0, 7)
        many = fam.evolve_many(x, times, s=0.1, chunk=3)
        for t, y in zip(times, many):
            assert np.allclose(y, apply_U(fam, t, 0.1, x), atol=1e-13)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.sampled_from([1.0, 2.0, math.inf]), st.integers(0, 2 ** 16))
    def test_composition_law(self, a, b, c, p, seed):
        r, s, t = sorted((a, b, c))
        space = GridSpace(1, 64, p)
        fam = EvolutionFamily(theta_symbol(), space)
        x = random_field(space, np.random.default_rng(seed), bandwidth=12)
        lhs = apply_U(fam, t, s, apply_U(fam, s, r, x))
        assert space.norm(lhs - apply_U(fam, t, r, x)) <= 1e-12 * space.norm(x)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(1, 12))
    def test_commutes_with_projectors(self, a, b, lam):
        s, t = sorted((a, b))
        fam = EvolutionFamily(theta_symbol(), SPACE)
        x = random_field(SPACE, np.random.default_rng(4))
        P = SpectralProjector(lam)
        lhs = apply_projector(P, apply_U(fam, t, s, x), SPACE)
        rhs = apply_U(fam, t, s, apply_projector(P, x, SPACE))
        assert np.allclose(lhs, rhs, atol=1e-13)


class TestProjectors:
    def test_sharp_cut(self):
        x = mode(SPACE, 1) + mode(SPACE, 3)
        assert np.allclose(apply_projector(SpectralProjector(2.0), x, SPACE), mode(SPACE, 1), atol=1e-14)
        assert np.allclose(apply_projector(SpectralProjector(2.0), x, SPACE, complement=True), mode(SPACE, 3), atol=1e-14)

    def test_sharp_is_idempotent(self):
        x = random_field(SPACE, np.random.default_rng(5))
        P = SpectralProjector(5.0)
        once = apply_projector(P, x, SPACE)
        assert np.allclose(apply_projector(P, once, SPACE), once, atol=1e-14)

    def test_smoothed_rolls_off(self):
        m = SpectralProjector(4.0, "smoothed", 2.0).multiplier(SPACE)
        rho = SPACE.freq_norm()
        assert np.all(m[rho <= 4] == 1) and np.all(m[rho >= 6] == 0)
        assert np.all((m[(rho > 4) & (rho < 6)] > 0) & (m[(rho > 4) & (rho < 6)] < 1))

    def test_bad_cutoff(self):
        with pytest.raises(DomainError):
            SpectralProjector(0.0)


class TestExpBound:
    def test_heat(self):
        b = estimate_exp_bound(EvolutionFamily(EllipticSymbol.heat(), SPACE))
        assert b.M == 1.0 and b.omega == 0.0

    def test_growing_zero_mode(self):
        b = estimate_exp_bound(EvolutionFamily(EllipticSymbol.heat(lower=-1.0), SPACE))
        assert b.M == 1.0 and b.omega == pytest.approx(1.0, rel=1e-12)

    def test_heat_sup_norm_is_exhaustively_dominated(self):
        space = GridSpace(1, 64, math.inf)
        fam = EvolutionFamily(EllipticSymbol.heat(), space)
        b = estimate_exp_bound(fam, trials=4, seed=3)
        grid = np.linspace(0, 1, 9)
        xs = random_field(space, np.random.default_rng(3), size=4)
        for i, s in enumerate(grid):
            for t in grid[i:]:
                bound = b.M * math.exp(b.omega * (t - s))
                assert multiplier_norm(fam.multiplier(t, s), space) <= bound * (1 + 1e-12)
                got = space.norm(apply_U(fam, t, s, xs)) / space.norm(xs)
                assert np.all(got <= bound * (1 + 1e-12))


LAMBDAS = [1, 2, 4, 8, 16]
TIMES = np.linspace(0, 1, 6)


class TestDE:
    def test_heat_exact(self):
        cert = certify_DE(EvolutionFamily(EllipticSymbol.heat(), SPACE), ProjectorFamily(), LAMBDAS, TIMES)
        assert (cert.d2, cert.gamma2, cert.gamma3, cert.gamma4) == (1.0, 2.0, 1.0, 0.0)
        assert cert.d3 == pytest.approx(1.0, rel=1e-10)

    def test_theta_min(self):
        cert = certify_DE(EvolutionFamily(EllipticSymbol.heat(mesh=(0, 0.5, 1), diffusivity=[0.5, 2.0]), SPACE),
                          ProjectorFamily(), LAMBDAS, TIMES)
        assert cert.d2 == 1.0
        assert cert.d3 == pytest.approx(0.5, rel=1e-8)

    def test_sup_norm_bound_dominates_grid(self):
        space = GridSpace(1, 64, math.inf)
        fam = EvolutionFamily(EllipticSymbol.heat(), space)
        cert = certify_DE(fam, ProjectorFamily(), LAMBDAS, TIMES, trials=4, seed=9)
        assert cert.d2 >= 1 and cert.d3 > 0
        for lam in np.linspace(1, 16, 31):
            tail = 1.0 - SpectralProjector(lam).multiplier(space)
            for i, s in enumerate(TIMES):
                for t in TIMES[i + 1:]:
                    got = multiplier_norm(tail * fam.multiplier(t, s), space)
                    assert got <= cert.bound(lam, t - s) * (1 + 1e-10)

    def test_resolution_lock(self):
        cert = certify_DE(EvolutionFamily(EllipticSymbol.heat(), SPACE), ProjectorFamily(), LAMBDAS, TIMES)
        cert.assert_compatible(SPACE)
        with pytest.raises(ResolutionMismatch):
            cert.assert_compatible(GridSpace(1, 128))
        with pytest.raises(ResolutionMismatch):
            cert.assert_compatible(SPACE.with_p(1))

    def test_no_decay_is_failure(self):
        fam = EvolutionFamily(EllipticSymbol(3, (0.0, 1.0), {(3,): [-1.0]}), SPACE, require_elliptic=False)
        with pytest.raises(CertificationError) as info:
            certify_DE(fam, ProjectorFamily(), LAMBDAS, TIMES)
        assert info.value.witness["ratio"] == pytest.approx(1.0)

    def test_vanished_tails_are_failure(self):
        fam = EvolutionFamily(EllipticSymbol.heat(), SPACE)
        with pytest.raises(CertificationError):
            certify_DE(fam, ProjectorFamily(), [40.0, 50.0], TIMES)

    @given(st.floats(1, 16), st.floats(0.01, 1))
    def test_heat_bound_holds_off_grid(self, lam, dt):
        fam = EvolutionFamily(EllipticSymbol.heat(), SPACE)
        x = random_field(SPACE, np.random.default_rng(0))
        tail_h = (1 - SpectralProjector(lam).multiplier(SPACE)) * fam.multiplier(dt, 0.0) * SPACE.fft(x)
        assert SPACE.l2_from_fft(tail_h) <= math.exp(-lam ** 2 * dt) * SPACE.norm(x) * (1 + 1e-10)

    def test_parseval_norm(self):
        x = random_field(SPACE, np.random.default_rng(1))
        assert SPACE.l2_from_fft(SPACE.fft(x)) == pytest.approx(SPACE.norm(x), rel=1e-13)
