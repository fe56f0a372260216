import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclevy.coefficients import (
    REGISTRY,
    CoefficientSet,
    build_periodic_plus_decay,
    coefficient_sap_defect,
    lipschitz_estimate,
    make_coefficients,
)
from helpers import noise_specs


def _custom(f, dim=1):
    zero = lambda t, x, u: np.zeros_like(np.asarray(x, dtype=float))
    return CoefficientSet(f, lambda t, xf, x: np.zeros(np.shape(x) + (1,)), zero, zero, 1.0, 1, dim, 1)


def normal_probe(rng, n):
    return rng.normal(size=(n, 2))


class TestPeriodicPlusDecay:
    def test_defect_closed_form(self):
        p = build_periodic_plus_decay(1, 1.0, 1.0)
        assert p.defect(0.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
        assert p.defect(0.0) == pytest.approx(0.632121, abs=1e-6)

    def test_zero_amplitude(self):
        p = build_periodic_plus_decay(2, 0.0, 1.0)
        assert p(3.7) == 0 and p.defect(1.0) == 0

    @given(st.floats(0, 30))
    def test_defect_ratio(self, t):
        p = build_periodic_plus_decay(1, 2.0, 1.0)
        assert p.defect(t) / p.defect(t + 1) == pytest.approx(math.e, rel=1e-12)

    @given(st.integers(0, 400), st.sampled_from([1, 2, 3]))
    def test_periodic_part_exact_on_dyadic_grid(self, j, omega):
        p = build_periodic_plus_decay(omega, 1.0, 1.0)
        t = j / 8
        assert p.periodic_part(t + omega) == p.periodic_part(t)

    def test_direct_shift_matches_defect(self):
        p = build_periodic_plus_decay(1, 1.5, 0.7)
        for t in (0.0, 0.5, 3.25):
            assert abs(p(t + 1) - p(t)) == pytest.approx(p.defect(t), abs=1e-12)

    def test_decay_rate_positive(self):
        with pytest.raises(ValueError):
            build_periodic_plus_decay(1, 1.0, 0.0)


class TestCoefficientSet:
    @pytest.mark.parametrize("w", [1.5, 0, -1, True])
    def test_omega_must_be_positive_integer(self, w):
        with pytest.raises(ValueError, match="omega must be a positive integer"):
            make_coefficients("linear", 1, 1, 0.1, w, qspec=noise_specs()[0], levy=noise_specs()[1])

    def test_unknown_family(self):
        with pytest.raises(KeyError):
            make_coefficients("nope", 1, 1, 0.1)

    def test_registry_names(self):
        assert {"zero", "linear", "saturated", "periodic", "additive"} <= set(REGISTRY)


class TestLipschitzEstimate:
    def test_two_x(self):
        c = _custom(lambda t, xf, x: 2 * xf, dim=2)
        est = lipschitz_estimate(c, "f", normal_probe, 2000, np.random.default_rng(0))
        assert 3.5 < est <= 4.0 + 1e-12

    def test_average(self):
        c = _custom(lambda t, xf, x: (xf + x) / 2, dim=2)
        est = lipschitz_estimate(c, "f", normal_probe, 5000, np.random.default_rng(1))
        assert 0.4 < est <= 0.5 + 1e-12

    def test_constant(self):
        c = _custom(lambda t, xf, x: np.ones_like(x), dim=2)
        assert lipschitz_estimate(c, "f", normal_probe, 100, np.random.default_rng(0)) == 0.0

    def test_identical_pairs_skipped(self):
        c = _custom(lambda t, xf, x: 2 * xf, dim=2)
        same = lambda rng, n: np.ones((n, 2))
        assert lipschitz_estimate(c, "f", same, 10, np.random.default_rng(0)) == 0.0

    @pytest.mark.parametrize("name", ["linear", "saturated", "periodic"])
    def test_declared_L_never_exceeded(self, name):
        q, levy = noise_specs()
        c = make_coefficients(name, 2, 1, 0.04, 1, qspec=q, levy=levy)
        rng = np.random.default_rng(2)
        for which in "fgFG":
            est = lipschitz_estimate(c, which, normal_probe, 20_000, rng, qspec=q, levy=levy, t_range=(0, 5))
            assert est <= c.lipschitz_L * (1 + 1e-9)

    def test_linear_family_is_sharp(self):
        q, levy = noise_specs()
        c = make_coefficients("linear", 2, 1, 0.04, 1, qspec=q, levy=levy)
        rng = np.random.default_rng(3)
        for which in "FG":
            assert lipschitz_estimate(c, which, normal_probe, 100, rng, qspec=q, levy=levy) == pytest.approx(0.04)


class TestSapDefect:
    def test_time_independent_f(self):
        c = _custom(lambda t, xf, x: 3 * x)
        assert coefficient_sap_defect(c, "f", 1, 2.0, [(np.ones(1), np.ones(1))]) == 0.0

    def test_modulated_f_closed_form(self):
        p = build_periodic_plus_decay(1, 1, 1)
        c = _custom(lambda t, xf, x: float(p(t)) * x)
        for t in (0.0, 1.0, 2.5):
            d = coefficient_sap_defect(c, "f", 1, t, [(np.ones(1), np.ones(1))])
            assert d == pytest.approx(math.exp(-2 * t) * (1 - math.exp(-1)) ** 2, rel=1e-10)

    def test_fixed_g(self):
        q, levy = noise_specs()
        c = make_coefficients("linear", 1, 1, 0.04, 1, qspec=q, levy=levy)
        assert coefficient_sap_defect(c, "g", 1, 1.0, [(np.ones(1), np.ones(1))], qspec=q) == 0.0

    def test_periodic_family_defects_decay(self):
        q, levy = noise_specs()
        c = make_coefficients("periodic", 1, 1, 0.04, 1, qspec=q, levy=levy)
        probes = [(np.ones(1), np.ones(1)), (-np.ones(1), 2 * np.ones(1))]
        for which in "fgFG":
            d = [coefficient_sap_defect(c, which, 1, t, probes, qspec=q, levy=levy) for t in (0.0, 5.0, 10.0)]
            assert d[0] > d[1] > d[2] >= 0

    def test_composition_inequality(self):
        # defect of f(t, Y(t)) <= 2 coefficient defect + 2 L defect of Y
        q, levy = noise_specs()
        c = make_coefficients("periodic", 1, 1, 0.04, 1, qspec=q, levy=levy)
        Y = build_periodic_plus_decay(1, 0.8, 0.3)
        for t in np.arange(0, 10, 0.5):
            y0, y1 = np.array([[Y(t)]]), np.array([[Y(t + 1)]])
            lhs = float(np.sum((c.f(t + 1, y1, y1) - c.f(t, y0, y0)) ** 2))
            rhs = 2 * coefficient_sap_defect(c, "f", 1, t, [(y1[0], y1[0])]) + 2 * c.lipschitz_L * 2 * Y.defect(t) ** 2
            assert lhs <= rhs + 1e-15

    def test_poisson_composition_inequality(self):
        q, levy = noise_specs()
        c = make_coefficients("periodic", 1, 1, 0.04, 1, qspec=q, levy=levy)
        Y = build_periodic_plus_decay(1, 0.8, 0.3)
        from fraclevy.levy_noise import integrate_against_nu
        for t in np.arange(0, 10, 0.5):
            y0, y1 = np.array([[Y(t)]]), np.array([[Y(t + 1)]])
            lhs = float(integrate_against_nu(levy, "small", lambda u: np.sum((c.F(t + 1, y1, u) - c.F(t, y0, u)) ** 2)))
            rhs = 2 * coefficient_sap_defect(c, "F", 1, t, [(y1[0], y1[0])], levy=levy) + 2 * c.lipschitz_L * Y.defect(t) ** 2
            assert lhs <= rhs + 1e-15

    def test_empty_probe_set(self):
        with pytest.raises(ValueError):
            coefficient_sap_defect(_custom(lambda t, xf, x: x), "f", 1, 0.0, [])
