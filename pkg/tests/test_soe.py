"""Tests for the sum-of-exponentials kernel compression and fast evaluation."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma

from fracpinn.kernels import direct_series, omega
from fracpinn.mesh import MeshSpec, build_graded_mesh
from fracpinn.soe import (
    HistoryState,
    SoeApprox,
    SoeConstructionError,
    build_soe,
    build_soe_for_mesh,
    default_dt_cutoff,
    fast_caputo_apply,
    fast_coeff_c,
    fast_coeff_d,
    fast_coeffs,
    fast_series,
    history_update,
    initial_history,
    kernel_eval,
    local_coeffs,
)


def toy_soe(mesh, nodes):
    """Hand-built SoeApprox for coefficient limit checks."""
    nodes = np.asarray(nodes, dtype=float)
    return SoeApprox(
        alpha=mesh.alpha,
        eps=1.0e-1,
        dt_cutoff=1e-6,
        horizon=mesh.horizon,
        nodes=nodes,
        weights=np.ones_like(nodes),
        measured_max_error=0.0,
    )


class TestBuildSoe:
    def test_certificate_example(self):
        soe = build_soe(0.5, 1e-8, 1e-4, 1.0)
        assert soe.measured_max_error <= 1e-8
        assert soe.n_terms <= 150
        cert = soe.certificate()
        assert cert["Nq"] == soe.n_terms
        assert cert["measured_max_error"] == soe.measured_max_error

    def test_weights_positive(self):
        soe = build_soe(0.3, 1e-8, 1e-4, 1.0)
        assert np.all(soe.weights > 0)
        assert np.all(soe.nodes > 0)

    def test_kernel_value_at_horizon(self):
        soe = build_soe(0.5, 1e-8, 1e-4, 1.0)
        assert kernel_eval(soe, 1.0) == pytest.approx(0.56418958, abs=1e-7)
        assert kernel_eval(soe, 1.0) == pytest.approx(omega(0.5, 1.0), abs=1e-8)

    def test_dense_verification_on_sample_grid(self):
        soe = build_soe(0.9, 1e-6, 1e-4, 2.0)
        t = np.geomspace(1e-4, 2.0, 3456)
        err = np.max(np.abs(kernel_eval(soe, t) - omega(0.1, t)))
        assert err <= 1e-6

    def test_infeasible_tolerance_raises_with_measurement(self):
        # an absolute 1e-13 at dt ~ 1e-10 sits below the f64 roundoff floor
        with pytest.raises(SoeConstructionError) as exc_info:
            build_soe(0.3, 1e-13, 1e-10, 1.0)
        assert exc_info.value.measured_error > 1e-13

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            build_soe(1.5, 1e-8, 1e-4, 1.0)
        with pytest.raises(ValueError):
            build_soe(0.5, 1e-8, 2.0, 1.0)

    def test_default_cutoff_is_smallest_history_gap(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 8, 3.0, 0.5))
        expected = (1 - mesh.theta) * mesh.steps[0]
        assert default_dt_cutoff(mesh) == pytest.approx(expected, rel=1e-15)

    def test_deterministic_construction(self):
        a = build_soe(0.4, 1e-8, 1e-4, 1.0)
        b = build_soe(0.4, 1e-8, 1e-4, 1.0)
        np.testing.assert_array_equal(a.nodes, b.nodes)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestFastCoefficients:
    def test_c_tends_to_one_for_vanishing_frequency(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 6, 2.0, 0.5))
        soe = toy_soe(mesh, [1e-14, 1e-3, 1.0])
        assert fast_coeff_c(mesh, soe, 3, 0) == pytest.approx(1.0, abs=1e-10)

    def test_d_vanishes_for_small_frequency_on_uniform_mesh(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 6, 1.0, 0.5))
        soe = toy_soe(mesh, [1e-12, 1e-8])
        assert abs(fast_coeff_d(mesh, soe, 2, 0)) < 1e-10
        assert abs(fast_coeff_d(mesh, soe, 2, 1)) < 1e-6

    def test_decay_factors_in_unit_interval(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 10, 4.0, 0.3))
        soe = build_soe_for_mesh(mesh, 0.3, 1e-8)
        for n in (1, 5, 9):
            c, d, decay = fast_coeffs(mesh, soe, n)
            assert np.all(c >= 0)
            # huge frequencies underflow to exactly 0.0, which is the
            # correctly rounded value of a factor in (0, 1]
            assert np.all(decay >= 0) and np.all(decay <= 1.0)

    @pytest.mark.parametrize("alpha", [0.3, 0.9])
    def test_closed_forms_match_quadrature(self, alpha):
        mesh = build_graded_mesh(MeshSpec(1.0, 12, 2 / alpha, alpha))
        soe = build_soe_for_mesh(mesh, alpha, 1e-8)
        t, tau = mesh.nodes, mesh.steps
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, mesh.levels))
            l = int(rng.integers(0, soe.n_terms))
            s = soe.nodes[l]
            ref = t[n] + (1 - mesh.theta) * tau[n]  # t_{n+1-theta}
            c_oracle, _ = quad(lambda x: np.exp(-s * (ref - x)), t[n - 1], t[n], limit=200)
            c_oracle /= tau[n - 1]
            assert fast_coeff_c(mesh, soe, n, l) == pytest.approx(c_oracle, abs=1e-12)
            mid = (t[n - 1] + t[n]) / 2
            d_oracle, _ = quad(
                lambda x: np.exp(-s * (ref - x)) * 2 * (x - mid) / (tau[n - 1] * (tau[n - 1] + tau[n])),
                t[n - 1],
                t[n],
                limit=200,
            )
            assert fast_coeff_d(mesh, soe, n, l) == pytest.approx(d_oracle, abs=1e-12)

    def test_index_range(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 4, 2.0, 0.5))
        soe = build_soe_for_mesh(mesh, 0.5, 1e-6)
        with pytest.raises(IndexError):
            fast_coeffs(mesh, soe, 4)  # d needs tau_{n+1}


class TestHistoryRecursion:
    def test_initial_state_is_zero(self):
        soe = build_soe(0.5, 1e-6, 1e-3, 1.0)
        state = initial_history(soe, 3)
        assert state.level == 0
        assert np.all(state.values == 0.0)

    def test_zero_increments_decay_only(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 6, 2.0, 0.5))
        soe = build_soe_for_mesh(mesh, 0.5, 1e-6)
        values = np.full(soe.n_terms, 0.7)
        state = HistoryState(values=values, level=1)
        new = history_update(state, 0.0, 0.0, mesh, soe, 2)
        _, _, decay = fast_coeffs(mesh, soe, 2)
        np.testing.assert_allclose(new.values, 0.7 * decay, rtol=1e-15)

    def test_stale_state_raises(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 6, 2.0, 0.5))
        soe = build_soe_for_mesh(mesh, 0.5, 1e-6)
        state = initial_history(soe)
        with pytest.raises(RuntimeError, match="level"):
            history_update(state, 0.0, 0.0, mesh, soe, 3)

    def test_unrolled_recursion_matches_exponential_integral(self):
        # v(t) = t: quadratic interpolants are exact, so V^l(t_{k-1}) must
        # equal int_0^{t_{k-1}} e^(-s (t_{k-theta} - xi)) dxi up to rounding
        alpha = 0.5
        mesh = build_graded_mesh(MeshSpec(1.0, 8, 2 / alpha, alpha))
        soe = build_soe_for_mesh(mesh, alpha, 1e-8)
        inc = np.diff(mesh.nodes)
        state = initial_history(soe)
        for k in range(2, 9):
            state = history_update(state, inc[k - 2], inc[k - 1], mesh, soe, k - 1)
            s = soe.nodes
            u = mesh.offset(k)
            expected = (np.exp(-s * (u - mesh.nodes[k - 1])) - np.exp(-s * u)) / s
            np.testing.assert_allclose(state.values, expected, atol=1e-13)


class TestFastApply:
    def test_constant_sequence_gives_zero(self):
        alpha = 0.5
        mesh = build_graded_mesh(MeshSpec(1.0, 8, 2.0, alpha))
        soe = build_soe_for_mesh(mesh, alpha, 1e-8)
        out = fast_series(mesh, soe, np.full(9, 3.3))
        np.testing.assert_array_equal(out, 0.0)

    def test_unsynchronized_state_raises(self):
        alpha = 0.5
        mesh = build_graded_mesh(MeshSpec(1.0, 8, 2.0, alpha))
        soe = build_soe_for_mesh(mesh, alpha, 1e-8)
        a0 = local_coeffs(mesh, alpha)
        state = initial_history(soe)
        with pytest.raises(RuntimeError, match="level"):
            fast_caputo_apply(mesh.nodes[:4], state, a0[2], soe)

    def test_fast_agrees_with_direct_scheme(self):
        alpha = 0.5
        eps = 1e-10
        mesh = build_graded_mesh(MeshSpec(1.0, 32, 2 / alpha, alpha))
        soe = build_soe_for_mesh(mesh, alpha, eps)
        v = mesh.nodes ** (2 + alpha)
        fast = fast_series(mesh, soe, v)
        direct = direct_series(mesh, alpha, v)
        tol = 10 * eps * (1 + np.sum(np.abs(np.diff(v))))
        assert np.max(np.abs(fast - direct)) <= tol

    def test_singular_monomial_rate(self):
        # v = omega_{1+alpha}(t) has exact Caputo derivative 1.  Pointwise
        # errors at fixed early levels never decay on graded meshes, so the
        # rate is measured in the complementary-weighted norm that controls
        # solution error.
        from fracpinn.kernels import cached_kernels, complementary_C

        alpha = 0.5
        errs = []
        for K in (8, 16, 32):
            mesh = build_graded_mesh(MeshSpec(1.0, K, 2 / alpha, alpha))
            soe = build_soe_for_mesh(mesh, alpha, 1e-9)
            got = fast_series(mesh, soe, mesh.nodes**alpha / gamma(1 + alpha))
            weights = complementary_C(cached_kernels(mesh, alpha))
            errs.append(float(weights[::-1] @ np.abs(got - 1.0)))
        rates = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(rates >= 1.8), (errs, rates)

    def test_batched_points_match_scalar_path(self):
        alpha = 0.4
        mesh = build_graded_mesh(MeshSpec(1.0, 10, 2.0, alpha))
        soe = build_soe_for_mesh(mesh, alpha, 1e-8)
        series = np.stack([mesh.nodes**2, mesh.nodes**3], axis=1)
        batched = fast_series(mesh, soe, series)
        for col in range(2):
            single = fast_series(mesh, soe, series[:, col])
            np.testing.assert_allclose(batched[:, col], single, rtol=1e-14)


class TestWeightedMean:
    def test_offset_mean_exact_for_linear(self):
        mesh = build_graded_mesh(MeshSpec(1.0, 9, 2.5, 0.7))
        v = 0.3 + 1.9 * mesh.nodes
        mean = mesh.theta * v[:-1] + (1 - mesh.theta) * v[1:]
        np.testing.assert_allclose(mean, 0.3 + 1.9 * mesh.offsets, rtol=1e-15)
