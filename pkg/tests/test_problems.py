"""Tests for the benchmark problem definitions and manufactured sources."""

import numpy as np
import pytest
from scipy.special import gamma

from fracpinn.problems import (
    CaputoMonomial,
    REGISTRY,
    fisher_nagumo_reference,
    make_problem,
)


class TestCaputoMonomial:
    def test_closed_form(self):
        cm = CaputoMonomial(exponent=2.5, alpha=0.5)
        t = np.array([0.25, 1.0, 2.0])
        np.testing.assert_allclose(
            cm.derivative(t), gamma(3.5) / gamma(3.0) * t**2.0, rtol=1e-14
        )

    def test_order_alpha_monomial_has_unit_derivative(self):
        cm = CaputoMonomial(exponent=0.3, alpha=0.3)
        assert cm.derivative(0.7) == pytest.approx(gamma(1.3), rel=1e-14)


class TestRegistry:
    def test_all_names_construct(self):
        for name in REGISTRY:
            problem = make_problem(name)
            assert problem.name == name

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="unknown problem"):
            make_problem("heat")


class TestSubdiffusion:
    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_consistency(self, dim):
        problem = make_problem(f"ntfsde{dim}d", alpha=0.7)
        assert problem.residual_consistency() <= 1e-10

    def test_zero_initial_data(self):
        problem = make_problem("ntfsde2d")
        x = np.random.default_rng(0).uniform(size=(2, 30))
        np.testing.assert_array_equal(problem.exact(x, 0.0), 0.0)

    def test_caputo_factor(self):
        problem = make_problem("ntfsde1d", alpha=0.4)
        x = np.array([[0.5]])
        t = 0.8
        expected = gamma(3.4) / 2 * t**2 * np.sin(np.pi * 0.5)
        assert problem.exact_caputo(x, t)[0] == pytest.approx(expected, rel=1e-14)


class TestBurgers:
    def test_consistency(self):
        for p in (2.0, 4.0):
            problem = make_problem("burgers", alpha=0.6, p=p)
            assert problem.residual_consistency() <= 1e-10

    def test_caputo_of_exact_is_spatial_profile(self):
        problem = make_problem("burgers", alpha=0.3)
        x = np.array([[0.25, 0.5]])
        got = problem.exact_caputo(x, 0.77)
        np.testing.assert_allclose(got, np.sin(np.pi * x[0]), rtol=1e-14)

    def test_initial_condition_and_lift(self):
        problem = make_problem("burgers", alpha=0.3)
        x = np.array([[0.1, 0.9]])
        np.testing.assert_allclose(problem.ic(x), np.sin(np.pi * x[0]), rtol=1e-14)
        base = problem.lift(x)
        np.testing.assert_allclose(base.value, problem.ic(x))
        np.testing.assert_allclose(base.dxx[0], -np.pi**2 * base.value)

    def test_initial_singularity(self):
        problem = make_problem("burgers", alpha=0.3)
        x = np.array([[0.5]])
        early = problem.exact(x, 1e-6) - problem.exact(x, 0.0)
        # v - v0 ~ t^alpha, far larger than t near zero
        assert early[0] > 1e-2 * 1e-6


class TestFisherNagumo:
    def test_reference_at_origin(self):
        ref = fisher_nagumo_reference(1, rho=1.0, phi_angle=np.pi / 2)
        assert ref(np.array([[0.0]]), 0.0)[0] == pytest.approx(0.5)

    def test_boundary_profile_formula(self):
        problem = make_problem("tffn1d", rho_reaction=1.0)
        x = np.array([[0.0]])
        got = problem.bc(x, 1.0)[0]
        assert got == pytest.approx(0.5 + 0.5 * np.tanh(-1.0 / 4.0), rel=1e-12)

    def test_reaction_roots(self):
        problem = make_problem("tffn1d", rho_reaction=1.0)

        class JetStub:
            def __init__(self, v):
                self.value = np.asarray(v)
                self.dx = [np.zeros_like(self.value)]
                self.dxx = [np.zeros_like(self.value)]

        for v in (0.0, 1.0):
            out = problem.operator(JetStub(np.array([v])), problem.params)
            assert out[0] == pytest.approx(0.0, abs=1e-15)

    def test_soft_mode_without_exact_solution(self):
        problem = make_problem("tffn2d")
        assert problem.mode == "soft"
        assert problem.exact is None


class TestInverseProblems:
    def test_tfrd_terminal_data_matches_exact(self):
        problem = make_problem("tfrd-inv")
        x = np.random.default_rng(1).uniform(size=(2, 12))
        np.testing.assert_allclose(problem.terminal(x), problem.exact(x, 1.0), rtol=1e-14)
        assert problem.unknowns == ("alpha", "lambda1", "lambda2")
        assert problem.residual_consistency() <= 1e-10

    def test_tfac_true_interface_width(self):
        problem = make_problem("tfac-inv")
        assert problem.true_params["eps"] == pytest.approx(0.11254, abs=1e-5)
        assert problem.residual_consistency() <= 1e-10

    def test_tfac_singular_variant_is_soft(self):
        problem = make_problem("tfac-inv", singular=True)
        assert problem.mode == "soft"
        assert problem.residual_consistency() <= 1e-10
        x = np.array([[0.5], [0.5]])
        assert problem.ic(x)[0] == pytest.approx(1.0, rel=1e-12)
