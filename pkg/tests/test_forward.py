"""Forward solvers against closed forms, ODE reductions, self-convergence,
and the directional-derivative (remainder slope) diagnostics."""

import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from pdefisher import (
    DIV_FREE,
    BumpReaction,
    FourierCoeffs,
    HeatModel,
    NavierStokesModel,
    ReactionDiffusionModel,
    TimeMesh,
    build_eigensystem,
    evaluate_field,
    qmd_remainder_slope,
    sobolev_norm,
    solve_heat_exact,
)

LAM1 = 4 * np.pi**2


@pytest.fixture(scope="module")
def es1():
    return build_eigensystem(1, 4)


@pytest.fixture(scope="module")
def es_ns():
    return build_eigensystem(2, 4, DIV_FREE)


def _field(es, entries, const=0.0):
    u = FourierCoeffs.zeros(es)
    if const:
        u.data[es.index_of((0,) * es.d, 0)] = const
    for k, kind, val in entries:
        u.data[es.index_of(k, kind)] = val
    return u


class TestHeat:
    def test_constant_invariant(self, es1):
        f = solve_heat_exact(_field(es1, [], const=3.0), T=1.0)
        assert np.allclose(f.data[:, 0], 3.0)
        assert np.abs(f.data[:, 1:]).max() == 0.0

    def test_first_mode_decay(self, es1):
        f = solve_heat_exact(_field(es1, [([1], 1, 1.0)], const=0.0), T=1.0)
        j = es1.index_of([1], 1)
        assert f.data[-1, j] == pytest.approx(np.exp(-LAM1), rel=1e-14)

    def test_spacetime_integral_closed_form(self, es1):
        # int_0^1 int u^2 = (1 - e^{-2 lam}) / (2 lam) for theta = e_1
        mesh = TimeMesh.graded(1.0, levels=16, steps_per_block=256)
        f = solve_heat_exact(_field(es1, [([1], 1, 1.0)]), T=1.0, mesh=mesh)
        exact = (1 - np.exp(-2 * LAM1)) / (2 * LAM1)
        assert f.spacetime_l2() ** 2 == pytest.approx(exact, abs=1e-12)


class ZeroReaction:
    def f(self, u):
        return np.zeros_like(u)

    def df(self, u):
        return np.zeros_like(u)

    def d2f(self, u):
        return np.zeros_like(u)


class TestReactionDiffusion:
    def test_zero_reaction_reduces_to_heat(self, es1):
        mesh = TimeMesh.uniform(1.0, 64)
        theta = _field(es1, [([1], 1, 0.5), ([2], 2, 0.3)], const=0.2)
        rd = ReactionDiffusionModel(es1, T=1.0, reaction=ZeroReaction(), mesh=mesh)
        heat = HeatModel(es1, T=1.0, mesh=mesh)
        np.testing.assert_allclose(rd.solve(theta).data, heat.solve(theta).data, atol=1e-10)

    def test_constant_state_matches_ode(self, es1):
        # spatially constant solutions follow du/dt = f(u); oracle: RK45 at 1e-12
        reaction = BumpReaction(2.0, 2.5)
        mesh = TimeMesh.uniform(0.5, 256)
        rd = ReactionDiffusionModel(es1, T=0.5, reaction=reaction, mesh=mesh)
        sol = rd.solve(_field(es1, [], const=0.4))
        ode = solve_ivp(
            lambda t, y: reaction.f(y), [0, 0.5], [0.4], rtol=1e-12, atol=1e-14
        )
        j0 = es1.index_of([0], 0)
        assert sol.data[-1, j0] == pytest.approx(ode.y[0, -1], abs=1e-8)
        assert np.abs(np.delete(sol.data, j0, axis=1)).max() < 1e-14

    def test_time_step_self_convergence(self, es1):
        # halving the step against a quarter-step reference: order-4 scheme
        theta = _field(es1, [([1], 1, 0.6), ([2], 1, 0.2)], const=0.3)
        reaction = BumpReaction(3.0, 2.5)

        def final(m):
            rd = ReactionDiffusionModel(
                es1, T=0.25, reaction=reaction, mesh=TimeMesh.uniform(0.25, m)
            )
            return rd.solve(theta).data[-1]

        ref = final(256)
        err_h = np.abs(final(64) - ref).max()
        err_h2 = np.abs(final(128) - ref).max()
        rate = err_h / err_h2
        assert 8.0 < rate < 40.0  # ~2^4 with reference contamination slack

    def test_blowup_detection(self, es1):
        class Explosive:
            def f(self, u):
                return u**3 + 50.0

            def df(self, u):
                return 3 * u**2

        rd = ReactionDiffusionModel(
            es1, T=5.0, reaction=Explosive(), mesh=TimeMesh.uniform(5.0, 8)
        )
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(RuntimeError):
                rd.solve(_field(es1, [], const=50.0))


class TestLinearizeRD:
    def test_zero_reaction_is_heat_flow(self, es1):
        mesh = TimeMesh.uniform(1.0, 64)
        rd = ReactionDiffusionModel(es1, T=1.0, reaction=ZeroReaction(), mesh=mesh)
        theta0 = _field(es1, [([1], 1, 0.5)])
        h = _field(es1, [([2], 1, 1.0)])
        U = rd.linearize(theta0, h)
        H = HeatModel(es1, T=1.0, mesh=mesh).solve(h)
        np.testing.assert_allclose(U.data, H.data, atol=1e-12)

    def test_linearity(self, es1):
        mesh = TimeMesh.uniform(0.5, 64)
        rd = ReactionDiffusionModel(es1, T=0.5, reaction=BumpReaction(), mesh=mesh)
        theta0 = _field(es1, [([1], 1, 0.4)], const=0.3)
        h1 = _field(es1, [([1], 2, 1.0)])
        h2 = _field(es1, [([3], 1, 1.0)])
        lhs = rd.linearize(theta0, 2.0 * h1 + (-0.7) * h2)
        rhs = 2.0 * rd.linearize(theta0, h1).data - 0.7 * rd.linearize(theta0, h2).data
        np.testing.assert_allclose(lhs.data, rhs, atol=1e-10)

    def test_finite_difference_slope(self, es1):
        mesh = TimeMesh.uniform(0.5, 128)
        rd = ReactionDiffusionModel(es1, T=0.5, reaction=BumpReaction(2.0, 2.5), mesh=mesh)
        theta0 = _field(es1, [([1], 1, 0.4), ([2], 2, 0.2)], const=0.3)
        h = _field(es1, [([1], 1, 1.0)])
        out = qmd_remainder_slope(rd, theta0, h, [1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
        assert abs(out["slope"] - 2.0) < 0.15

    def test_batch_matches_single(self, es1):
        mesh = TimeMesh.uniform(0.5, 32)
        rd = ReactionDiffusionModel(es1, T=0.5, reaction=BumpReaction(), mesh=mesh)
        theta0 = _field(es1, [([1], 1, 0.4)], const=0.2)
        cols = np.eye(es1.size, 3)
        batch = rd.linearize(theta0, cols)
        for b in range(3):
            single = rd.linearize(theta0, FourierCoeffs(es1, cols[:, b]))
            np.testing.assert_allclose(batch.data[:, :, b], single.data, atol=1e-13)


class TestNavierStokes:
    def test_single_mode_exact_decay(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.5, mesh=TimeMesh.uniform(0.5, 128))
        j = es_ns.index_of([1, 0], 1)
        f = ns.solve(FourierCoeffs.unit(es_ns, j))
        exact = np.exp(-0.05 * es_ns.lam[j] * ns.mesh.nodes)
        assert np.abs(f.data[:, j] - exact).max() < 1e-10
        assert np.abs(np.delete(f.data, j, axis=1)).max() < 1e-14

    def test_divergence_free_coefficients(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.25, mesh=TimeMesh.uniform(0.25, 64))
        theta = _field(es_ns, [([1, 0], 1, 0.4), ([0, 1], 2, 0.3), ([1, 1], 1, 0.2)])
        f = ns.solve(theta)
        assert ns.lattice_divergence(f) < 1e-12

    def test_energy_identity(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.5, mesh=TimeMesh.uniform(0.5, 128))
        theta = _field(es_ns, [([1, 0], 1, 0.4), ([0, 1], 2, 0.3), ([1, 1], 1, 0.2)])
        assert ns.energy_balance_residual(ns.solve(theta)) < 1e-6

    def test_forcing_steady_contribution(self, es_ns):
        # with theta = 0 and small forcing the flow grows toward the forced mode
        forcing = _field(es_ns, [([1, 0], 1, 0.3)])
        ns = NavierStokesModel(
            es_ns, viscosity=0.1, T=0.5, forcing=forcing, mesh=TimeMesh.uniform(0.5, 64)
        )
        f = ns.solve(FourierCoeffs.zeros(es_ns))
        j = es_ns.index_of([1, 0], 1)
        lam = es_ns.lam[j]
        # curl maps velocity forcing to vorticity; single-mode response is linear
        expected = 0.3 * (1 - np.exp(-0.1 * lam * 0.5)) / (0.1 * lam)
        assert f.data[-1, j] == pytest.approx(expected, rel=1e-8)

    def test_linearize_zero_base_is_stokes(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.5, mesh=TimeMesh.uniform(0.5, 64))
        h = _field(es_ns, [([1, 1], 1, 1.0), ([0, 1], 2, 0.5)])
        U = ns.linearize(FourierCoeffs.zeros(es_ns), h)
        stokes = h.data[None, :] * np.exp(-0.05 * np.outer(ns.mesh.nodes, es_ns.lam))
        np.testing.assert_allclose(U.data, stokes, atol=1e-12)

    def test_linearity(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.25, mesh=TimeMesh.uniform(0.25, 64))
        theta0 = _field(es_ns, [([1, 0], 1, 0.4), ([0, 1], 2, 0.3)])
        h1 = _field(es_ns, [([1, 1], 1, 1.0)])
        h2 = _field(es_ns, [([0, 1], 1, 1.0)])
        lhs = ns.linearize(theta0, 1.5 * h1 + 2.0 * h2)
        rhs = 1.5 * ns.linearize(theta0, h1).data + 2.0 * ns.linearize(theta0, h2).data
        np.testing.assert_allclose(lhs.data, rhs, atol=1e-10)

    def test_finite_difference_slope(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.25, mesh=TimeMesh.uniform(0.25, 64))
        theta0 = _field(es_ns, [([1, 0], 1, 0.4), ([0, 1], 2, 0.3), ([1, 1], 1, 0.2)])
        h = _field(es_ns, [([0, 1], 1, 1.0)])
        out = qmd_remainder_slope(ns, theta0, h, [1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
        assert abs(out["slope"] - 2.0) < 0.2


class TestReactionDiffusion2D:
    def test_zero_reaction_reduces_to_heat_2d(self):
        es = build_eigensystem(2, 3)
        mesh = TimeMesh.uniform(0.25, 32)
        theta = FourierCoeffs.zeros(es)
        theta.data[es.index_of([1, 0], 1)] = 0.5
        theta.data[es.index_of([0, 2], 2)] = 0.3
        rd = ReactionDiffusionModel(es, T=0.25, reaction=ZeroReaction(), mesh=mesh)
        heat = HeatModel(es, T=0.25, mesh=mesh)
        np.testing.assert_allclose(rd.solve(theta).data, heat.solve(theta).data, atol=1e-10)

    def test_constant_state_ode_2d(self):
        reaction = BumpReaction(2.0, 2.5)
        es = build_eigensystem(2, 2)
        rd = ReactionDiffusionModel(es, T=0.5, reaction=reaction, mesh=TimeMesh.uniform(0.5, 128))
        sol = rd.solve(_field(es, [], const=0.4))
        ode = solve_ivp(lambda t, y: reaction.f(y), [0, 0.5], [0.4], rtol=1e-12, atol=1e-14)
        j0 = es.index_of([0, 0], 0)
        assert sol.data[-1, j0] == pytest.approx(ode.y[0, -1], abs=1e-8)

    def test_fd_slope_2d(self):
        es = build_eigensystem(2, 3)
        mesh = TimeMesh.uniform(0.25, 64)
        rd = ReactionDiffusionModel(es, T=0.25, reaction=BumpReaction(), mesh=mesh)
        theta0 = _field(es, [([1, 0], 1, 0.4)], const=0.3)
        h = _field(es, [([0, 1], 1, 1.0)])
        out = qmd_remainder_slope(rd, theta0, h, [1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
        assert abs(out["slope"] - 2.0) < 0.15


class TestForcedLinearization:
    def test_forcing_enters_base_flow_only(self, es_ns):
        # finite differences of the forced flow still match the tangent:
        # the forcing is state-independent, so it must not leak into it
        forcing = _field(es_ns, [([1, 0], 1, 0.2), ([1, 1], 2, 0.1)])
        ns = NavierStokesModel(
            es_ns, viscosity=0.05, T=0.25, forcing=forcing, mesh=TimeMesh.uniform(0.25, 64)
        )
        theta0 = _field(es_ns, [([0, 1], 2, 0.3)])
        h = _field(es_ns, [([1, 0], 1, 1.0)])
        out = qmd_remainder_slope(ns, theta0, h, [1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
        assert abs(out["slope"] - 2.0) < 0.2


class TestQmdRemainder:
    def test_heat_exactly_linear(self, es1):
        heat = HeatModel(es1, T=1.0, mesh=TimeMesh.uniform(1.0, 64))
        theta0 = _field(es1, [([1], 1, 0.5)], const=0.2)
        h = _field(es1, [([2], 1, 1.0)])
        out = qmd_remainder_slope(heat, theta0, h, [1e-3, 1e-2, 1e-1, 1.0])
        assert max(out["remainders"]) < 1e-12

    def test_normalized_remainder_decreasing(self, es1):
        rd = ReactionDiffusionModel(
            es1, T=0.25, reaction=BumpReaction(), mesh=TimeMesh.uniform(0.25, 64)
        )
        theta0 = _field(es1, [([1], 1, 0.4)], const=0.3)
        h = _field(es1, [([1], 2, 1.0)])
        out = qmd_remainder_slope(rd, theta0, h, [1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1])
        assert np.all(np.diff(out["normalized"]) > 0)  # decreasing toward s -> 0


class TestEvaluateField:
    def test_constant(self, es1):
        f = solve_heat_exact(_field(es1, [], const=2.5), T=1.0)
        got = evaluate_field(f, [0.3, 0.9], [[0.1], [0.7]])
        np.testing.assert_allclose(got, 2.5, atol=1e-13)

    def test_heat_mode_closed_form(self, es1):
        mesh = TimeMesh.uniform(1.0, 2000)
        f = solve_heat_exact(_field(es1, [([1], 1, 1.0)]), T=1.0, mesh=mesh)
        rng = np.random.default_rng(8)
        t = rng.uniform(0, 1, 64)
        x = rng.uniform(0, 1, (64, 1))
        exact = np.exp(-LAM1 * t) * np.sqrt(2) * np.cos(2 * np.pi * x[:, 0])
        np.testing.assert_allclose(f.evaluate(t, x), exact, atol=1e-8)

    def test_nodes_reproduced(self, es1):
        mesh = TimeMesh.uniform(1.0, 32)
        theta = _field(es1, [([1], 1, 0.7), ([2], 2, 0.4)])
        f = solve_heat_exact(theta, T=1.0, mesh=mesh)
        x = np.array([[0.25]])
        for i in (0, 7, 32):
            t = mesh.nodes[i]
            direct = f.data[i] @ _basis_row(es1, 0.25)
            assert f.evaluate([t], x)[0] == pytest.approx(direct, abs=1e-12)

    def test_out_of_range(self, es1):
        f = solve_heat_exact(_field(es1, [], const=1.0), T=1.0)
        with pytest.raises(ValueError):
            f.evaluate([1.5], [[0.2]])

    def test_vector_field_evaluation(self, es_ns):
        ns = NavierStokesModel(es_ns, viscosity=0.05, T=0.5, mesh=TimeMesh.uniform(0.5, 64))
        j = es_ns.index_of([1, 0], 1)
        f = ns.solve(FourierCoeffs.unit(es_ns, j))
        # mode k=(1,0), cos: direction k_perp/|k| = (0,1)
        t = np.array([0.25])
        x = np.array([[0.2, 0.6]])
        val = f.evaluate(t, x)
        expected = np.exp(-0.05 * es_ns.lam[j] * 0.25) * np.sqrt(2) * np.cos(2 * np.pi * 0.2)
        assert val[0, 0] == pytest.approx(0.0, abs=1e-9)
        assert val[0, 1] == pytest.approx(expected, abs=1e-9)


def _basis_row(es, x):
    from pdefisher.spectral import basis_values_at

    return basis_values_at(es, np.array([[x]]))[0]


class TestSerialization:
    def test_field_roundtrip(self, es1, tmp_path):
        mesh = TimeMesh.graded(1.0, levels=6, steps_per_block=8)
        theta = _field(es1, [([1], 1, 0.7), ([2], 2, 0.4)], const=0.1)
        f = solve_heat_exact(theta, T=1.0, mesh=mesh)
        stem = str(tmp_path / "field")
        f.save(stem, model_kind="heat")
        import pdefisher

        g = pdefisher.SpaceTimeField.load(stem)
        np.testing.assert_array_equal(g.data, f.data)
        np.testing.assert_array_equal(g.mesh.nodes, f.mesh.nodes)
        np.testing.assert_allclose(g.mesh.weights, f.mesh.weights)
        assert g.es == f.es


class TestSmoothing:
    def test_positive_time_regularization_band(self, es1):
        # ||flow(h)(t)||_{D^2} at t >= t0 stays bounded by C ||h||_{D^-3}
        mesh = TimeMesh.uniform(1.0, 64)
        rd = ReactionDiffusionModel(es1, T=1.0, reaction=BumpReaction(), mesh=mesh)
        theta0 = _field(es1, [([1], 1, 0.4)], const=0.3)
        rng = np.random.default_rng(9)
        i0 = np.searchsorted(mesh.nodes, 0.25)
        ratios = []
        for _ in range(12):
            h = FourierCoeffs(es1, rng.standard_normal(es1.size))
            U = rd.linearize(theta0, h)
            sup_d2 = max(
                sobolev_norm(FourierCoeffs(es1, U.data[i]), 2.0)
                for i in range(i0, mesh.n_nodes)
            )
            ratios.append(sup_d2 / sobolev_norm(h, -3.0))
        band = max(ratios) / min(ratios)
        assert np.isfinite(band) and band < 50.0
