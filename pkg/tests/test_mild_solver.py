import math

import numpy as np
import pytest

from fraclevy.coefficients import CoefficientSet, make_coefficients
from fraclevy.levy_noise import JumpEvent, LevyMeasureSpec, QWienerSpec, SeedSpec
from fraclevy.mild_solver import (
    TERMS,
    Ensemble,
    FrozenNoise,
    PicardReport,
    SimGrid,
    deterministic_convolution,
    gaussian_initial,
    moment_constants,
    picard_solve,
    simulate_ensemble,
    simulate_path,
    verify_picard_envelope,
)
from fraclevy.special_fn import _ml_two_param
from fraclevy.spectral_model import SectorialSpectralModel, apply_solution_operator
from helpers import ALPHA, ORACLE, linear_benchmark, noise_specs, scalar_model


def _custom(dim=1, f=None, G=None, L=0.0):
    zero = lambda t, x, u: np.zeros_like(np.asarray(x, dtype=float))
    return CoefficientSet(
        f or (lambda t, xf, x: np.zeros_like(x)),
        lambda t, xf, x: np.zeros(np.shape(x) + (1,)),
        zero, G or zero, L, 1, dim, 1)


class TestSimGrid:
    def test_nodes(self):
        g = SimGrid(2.5, 4)
        assert g.h == 0.25 and g.n_steps == 10 and g.n_nodes == 11
        np.testing.assert_array_equal(g.times, np.arange(11) / 4)

    def test_horizon_rounds_up(self):
        assert SimGrid(2.1, 4).n_steps == 9

    def test_floor_index(self):
        g = SimGrid(3, 4)
        assert [g.floor_index(j) for j in (0, 3, 4, 7, 8)] == [0, 0, 4, 4, 8]

    @pytest.mark.parametrize("m", [0, 2.5, -3])
    def test_integer_m(self, m):
        with pytest.raises(ValueError):
            SimGrid(1, m)

    def test_node_index(self):
        g = SimGrid(3, 4)
        assert g.node_index(1.25) == 5
        with pytest.raises(ValueError):
            g.node_index(1.3)
        with pytest.raises(ValueError):
            g.node_index(3.25)


class TestSimulatePath:
    def test_zero_coefficients_give_initial_term(self):
        model = SectorialSpectralModel((-1.0, -4.0), -1.0, 0.3)
        q = QWienerSpec((1.0,))
        _, levy = noise_specs()
        coeff = make_coefficients("zero", 2, 1, 0.0, qspec=q, levy=levy)
        grid = SimGrid(3, 8)
        c0 = np.array([1.0, -0.5])
        rec = simulate_path(model, ALPHA, coeff, q, levy, grid, c0, seed=1)
        expected = np.array([apply_solution_operator(model, ALPHA, t, c0) for t in grid.times])
        np.testing.assert_allclose(rec.values, expected, atol=1e-12)
        for term in TERMS[1:]:
            assert np.all(rec.terms[term] == 0)

    def test_constant_drift_against_quadrature(self):
        model = scalar_model(1.0)
        q = QWienerSpec((0.0,))
        levy = LevyMeasureSpec.none()
        coeff = _custom(f=lambda t, xf, x: np.full_like(x, 1.0))
        errs = []
        for m in (20, 40):
            grid = SimGrid(2, m)
            rec = simulate_path(model, ALPHA, coeff, q, levy, grid, [0.0])
            err = max(abs(rec.values[grid.node_index(t), 0] - deterministic_convolution(model, ALPHA, [1.0], t)[0])
                      for t in (1.0, 2.0))
            assert err <= grid.h
            errs.append(err)
        assert errs[1] < 0.6 * errs[0]

    def test_scripted_large_jump(self):
        model = scalar_model(1.0)
        levy = LevyMeasureSpec.none()
        coeff = _custom(G=lambda t, x, u: np.broadcast_to(np.asarray(u, dtype=float), np.shape(x)).copy())
        grid = SimGrid(3, 10)
        tau, u = 0.37, np.array([1.3])
        noise = FrozenNoise.silent(1, 3, 10, events=[JumpEvent(tau, u, "large")])
        rec = simulate_ensemble(model, ALPHA, coeff, QWienerSpec((0.0,)), levy, grid, [0.5], noise=noise)[0]
        for j, t in enumerate(grid.times):
            free = apply_solution_operator(model, ALPHA, t, [0.5])[0]
            jump = apply_solution_operator(model, ALPHA, t - tau, u)[0] if t > tau else 0.0
            assert rec.values[j, 0] == pytest.approx(free + jump, abs=1e-13)
        (entry,) = rec.jump_log
        assert entry.event.time == tau
        np.testing.assert_allclose(entry.post_state - entry.pre_state, u)

    def test_coincident_jumps_compose(self):
        # two jumps in one step: the second sees the first one's post-jump state
        model = scalar_model()
        G = lambda t, x, u: np.asarray(x) * np.asarray(u)
        coeff = _custom(G=G)
        evs = [JumpEvent(0.31, np.array([2.0]), "large"), JumpEvent(0.33, np.array([3.0]), "large")]
        noise = FrozenNoise.silent(1, 1, 4, events=evs)
        rec = simulate_path(model, ALPHA, coeff, QWienerSpec((1.0,)), LevyMeasureSpec.none(1),
                            SimGrid(1, 4), [1.0], noise=noise)
        first, second = rec.jump_log
        np.testing.assert_allclose(second.pre_state, first.post_state)
        x1 = rec.values[1, 0]
        np.testing.assert_allclose(second.post_state, [x1 * 3 * 4])
        ens, report = picard_solve(model, ALPHA, coeff, LevyMeasureSpec.none(1), noise, SimGrid(1, 4), [1.0])
        assert report.converged
        np.testing.assert_allclose(ens.values[0], rec.values, atol=1e-10)

    def test_term_sum_and_initial_node(self):
        model, q, levy, coeff = linear_benchmark()
        rec = simulate_path(model, ALPHA, coeff, q, levy, SimGrid(4, 16), [1.0], seed=3)
        total = sum(rec.terms[t] for t in TERMS)
        np.testing.assert_allclose(rec.values, total, rtol=1e-12, atol=1e-14)
        assert rec.values[0, 0] == 1.0
        for term in TERMS[1:]:
            assert np.all(rec.terms[term][0] == 0)

    def test_longer_horizon_keeps_prefix(self):
        model, q, levy, coeff = linear_benchmark()
        a = simulate_path(model, ALPHA, coeff, q, levy, SimGrid(3, 8), [1.0], seed=11, path_index=4)
        b = simulate_path(model, ALPHA, coeff, q, levy, SimGrid(5, 8), [1.0], seed=11, path_index=4)
        n = a.grid.n_nodes
        np.testing.assert_array_equal(a.values, b.values[:n])

    def test_ensemble_path_matches_single_path(self):
        model, q, levy, coeff = linear_benchmark()
        grid = SimGrid(2, 8)
        ens = simulate_ensemble(model, ALPHA, coeff, q, levy, grid, [1.0], seed=2, n_paths=4)
        one = simulate_path(model, ALPHA, coeff, q, levy, grid, [1.0], seed=2, path_index=3)
        np.testing.assert_allclose(ens[3].values, one.values, rtol=1e-13, atol=1e-15)

    def test_jump_log_is_ordered_and_consistent(self):
        model, q, levy, coeff = linear_benchmark(b=2.0)
        rec = simulate_path(model, ALPHA, coeff, q, levy, SimGrid(4, 8), [1.0], seed=5)
        times = [e.event.time for e in rec.jump_log]
        assert times and times == sorted(times)

    def test_dimension_mismatch(self):
        model, q, levy, _ = linear_benchmark()
        coeff = make_coefficients("linear", 2, 1, 0.01, qspec=q, levy=levy)
        with pytest.raises(ValueError):
            simulate_path(model, ALPHA, coeff, q, levy, SimGrid(1, 4), [1.0])

    def test_wiener_on_requires_multiple(self):
        q, levy = noise_specs()
        noise = FrozenNoise.sample(q, levy, 2, 6, 1, 0)
        with pytest.raises(ValueError):
            noise.wiener_on(SimGrid(2, 4))


class TestDeterministicConvolution:
    def test_trivial(self):
        model = scalar_model(1.0)
        assert deterministic_convolution(model, ALPHA, [0.0], 2.0)[0] == 0.0
        assert deterministic_convolution(model, ALPHA, [1.0], 0.0)[0] == 0.0

    def test_dual_oracle(self):
        val = deterministic_convolution(scalar_model(1.0), ALPHA, [1.0], 1.0)[0]
        assert val == pytest.approx(ORACLE["conv(1.5,-1,1)"], abs=1e-8)
        assert val == pytest.approx(_ml_two_param(1.5, 2.0, -1.0), abs=1e-6)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            deterministic_convolution(scalar_model(1.0), ALPHA, [1.0], -1.0)


class TestPicard:
    def test_state_independent_coefficients_fix_after_one_step(self):
        q, levy = noise_specs()
        coeff = make_coefficients("additive", 1, 1, 0.0, qspec=q, levy=levy)
        grid = SimGrid(3, 10)
        noise = FrozenNoise.sample(q, levy, 3, 10, 5, 1)
        _, rep = picard_solve(scalar_model(), ALPHA, coeff, levy, noise, grid, [1.0])
        assert rep.converged and rep.iterations == 3
        assert rep.iterates_sup_diff[1] == 0.0
        assert verify_picard_envelope(rep, 3).ok

    def test_zero_everything(self):
        q = QWienerSpec((0.0,))
        levy = LevyMeasureSpec.none()
        coeff = make_coefficients("zero", 1, 1, 0.0)
        noise = FrozenNoise.silent(1, 2, 8)
        ens, rep = picard_solve(scalar_model(), ALPHA, coeff, levy, noise, SimGrid(2, 8), [1.0])
        assert rep.iterates_sup_diff == [0.0] * 3 and rep.converged

    def test_limit_matches_direct_stepping(self):
        model, q, levy, coeff = linear_benchmark()
        grid = SimGrid(3, 20)
        noise = FrozenNoise.sample(q, levy, 3, 20, 20, 8)
        tol = 1e-8
        ens, rep = picard_solve(model, ALPHA, coeff, levy, noise, grid, [1.0], tol=tol)
        direct = simulate_ensemble(model, ALPHA, coeff, q, levy, grid, [1.0], noise=noise)
        assert rep.converged
        assert np.max(np.abs(ens.values - direct.values)) <= 10 * tol
        np.testing.assert_allclose(ens.values, sum(ens.terms[t] for t in TERMS), rtol=1e-12, atol=1e-14)

    def test_nonconvergence_is_reported(self):
        model, q, levy, coeff = linear_benchmark()
        noise = FrozenNoise.sample(q, levy, 3, 10, 3, 0)
        _, rep = picard_solve(model, ALPHA, coeff, levy, noise, SimGrid(3, 10), [1.0], tol=1e-14, max_iter=2)
        assert not rep.converged and rep.iterations == 2

    def test_envelope_on_linear_problem(self):
        model, q, levy, coeff = linear_benchmark(L=0.02)
        noise = FrozenNoise.sample(q, levy, 4, 10, 30, 2)
        _, rep = picard_solve(model, ALPHA, coeff, levy, noise, SimGrid(4, 10), [1.0])
        check = verify_picard_envelope(rep, 4)
        assert check.ok and len(check.ratios) == rep.iterations

    def test_random_initial_state(self):
        model, q, levy, coeff = linear_benchmark()
        c0 = gaussian_initial(3, 6, [1.0], [0.2])
        np.testing.assert_array_equal(c0, gaussian_initial(3, 6, [1.0], [0.2]))
        noise = FrozenNoise.sample(q, levy, 2, 8, 6, 3)
        ens, rep = picard_solve(model, ALPHA, coeff, levy, noise, SimGrid(2, 8), c0)
        np.testing.assert_array_equal(ens.values[:, 0], c0)


def _report(diffs, C=1.0, M=1.0):
    return PicardReport(list(diffs), C, 0.0, M, 0, 0, 0, True, len(diffs), 1e-8)


class TestEnvelope:
    def test_decreasing_below_factorial(self):
        diffs = [math.sqrt(0.9 / math.factorial(n)) for n in range(8)]
        assert verify_picard_envelope(_report(diffs), 1.0, safety_factor=1.0).ok

    def test_constant_differences_fail(self):
        check = verify_picard_envelope(_report([0.5] * 12), 1.0)
        assert not check.ok and check.ratios[-1] > 10

    def test_zero_constants_with_zero_differences(self):
        check = verify_picard_envelope(PicardReport([0.3, 0.0, 0.0], 0.0, 0.09, 0.0, 0, 0, 0, True, 3, 1e-8), 5.0)
        assert check.ok and check.C_tilde_used == pytest.approx(0.09)

    @pytest.mark.parametrize("n", [0, 2])
    def test_too_few_iterates(self, n):
        with pytest.raises(ValueError):
            verify_picard_envelope(_report([0.1] * n), 1.0)


def test_moment_constants():
    model = scalar_model(1.0)
    k = moment_constants(model, ALPHA, 0.01, 0.5, [2.0])
    C1 = ORACLE["C1(1.5,-1)"]
    assert k["c1"] == pytest.approx(5 * 4.0)
    assert k["c2"] == pytest.approx(5 * 0.01 * (2 * C1 + 5 + C1))
    assert k["M_tilde"] == pytest.approx(4 * 0.01 * (2 * C1 + 5 + C1))
    assert k["C_tilde"] == pytest.approx(4.0 * 0.01 * (4 * C1 ** 2 + 16 * ORACLE["C2(1.5,-1)"] + 4 * C1 ** 2))


def test_from_values_roundtrip():
    g = SimGrid(2, 4)
    ens = Ensemble.from_values(g, np.ones((3, g.n_nodes)))
    assert ens.values.shape == (3, 9, 1) and len(ens) == 3
    with pytest.raises(ValueError):
        Ensemble.from_values(g, np.ones((3, 5)))
