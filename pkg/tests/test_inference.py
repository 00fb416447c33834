"""Data simulation, likelihood ratios, the LAN expansion at moderate scale,
and the influence-function estimator (exactness in the linear-Gaussian case)."""

import numpy as np
import pytest

from pdefisher import (
    DesignMeasure,
    FourierCoeffs,
    HeatModel,
    TimeMesh,
    assemble_information_matrix,
    build_eigensystem,
    efficient_influence_estimate,
    lan_montecarlo,
    lan_norm,
    log_likelihood_ratio,
    make_noise,
    pairing,
    simulate_dataset,
)
from pdefisher.inference import build_influence_field, influence_values

LAM1 = 4 * np.pi**2


@pytest.fixture(scope="module")
def setup():
    es = build_eigensystem(1, 4)
    mesh = TimeMesh.graded(1.0, levels=14, steps_per_block=64)
    model = HeatModel(es, T=1.0, mesh=mesh)
    noise = make_noise("gaussian", variance=1.0)
    design = DesignMeasure(1.0)
    theta0 = FourierCoeffs.zeros(es)
    theta0.data[es.index_of([0], 0)] = 0.5
    theta0.data[es.index_of([1], 1)] = 0.3
    M = assemble_information_matrix(model, theta0, noise, design, 9)
    return es, model, noise, design, theta0, M


class TestSimulateDataset:
    def test_near_noiseless_residuals(self, setup):
        es, model, _, design, theta0, _ = setup
        tiny = make_noise("gaussian", variance=1e-12)
        rng = np.random.default_rng(0)
        data = simulate_dataset(model, theta0, design, tiny, 2000, rng)
        field = model.solve(theta0)
        resid = data.y - field.evaluate(data.t, data.x)
        assert np.std(resid) < 1e-5

    def test_design_law(self, setup):
        es, model, noise, design, theta0, _ = setup
        rng = np.random.default_rng(1)
        data = simulate_dataset(model, theta0, design, noise, 20000, rng)
        assert abs(np.mean(data.t) - 0.5) < 3 * np.std(data.t) / np.sqrt(data.n)
        assert np.all((data.x >= 0) & (data.x < 1))

    def test_regression_recovers_mode(self, setup):
        # regress Y on the heat-decayed first mode: coefficient -> 1
        es, model, noise, design, _, _ = setup
        theta = FourierCoeffs.unit(es, es.index_of([1], 1))
        rng = np.random.default_rng(2)
        data = simulate_dataset(model, theta, design, noise, 10000, rng)
        regressor = np.exp(-LAM1 * data.t) * np.sqrt(2) * np.cos(2 * np.pi * data.x[:, 0])
        coef = (regressor @ data.y) / (regressor @ regressor)
        stderr = 1.0 / np.sqrt(regressor @ regressor)
        assert abs(coef - 1.0) < 3 * stderr


class TestVectorData:
    def test_ns_bivariate_pipeline(self):
        # end-to-end p=2: simulate velocities, compute a likelihood ratio
        from pdefisher import NavierStokesModel, build_eigensystem
        from pdefisher.spectral import DIV_FREE

        es = build_eigensystem(2, 3, DIV_FREE)
        mesh = TimeMesh.uniform(0.25, 32)
        ns = NavierStokesModel(es, viscosity=0.05, T=0.25, mesh=mesh)
        noise = make_noise("gaussian2", cov=np.array([[0.5, 0.1], [0.1, 0.8]]))
        design = DesignMeasure(0.25)
        theta0 = FourierCoeffs.zeros(es)
        theta0.data[es.index_of([1, 0], 1)] = 0.4
        rng = np.random.default_rng(30)
        data = simulate_dataset(ns, theta0, design, noise, 300, rng)
        assert data.y.shape == (300, 2)
        h = FourierCoeffs.unit(es, es.index_of([0, 1], 1))
        f0 = ns.solve(theta0)
        f1 = ns.solve(theta0 + (1 / np.sqrt(300)) * h)
        llr = log_likelihood_ratio(data, f0, f1, noise)
        assert np.isfinite(llr)
        assert log_likelihood_ratio(data, f0, f0, noise) == 0.0


class TestLogLikelihoodRatio:
    def test_zero_direction(self, setup):
        es, model, noise, design, theta0, _ = setup
        rng = np.random.default_rng(3)
        data = simulate_dataset(model, theta0, design, noise, 500, rng)
        f0 = model.solve(theta0)
        assert log_likelihood_ratio(data, f0, f0, noise) == 0.0

    def test_gaussian_quadratic_identity(self, setup):
        # oracle: for Gaussian noise the ratio is exactly
        # sum[ d_i (y_i - g0_i) - d_i^2 / 2 ] / sigma^2 with d = g1 - g0
        es, model, noise, design, theta0, _ = setup
        h = FourierCoeffs.unit(es, es.index_of([2], 1))
        n = 400
        rng = np.random.default_rng(4)
        data = simulate_dataset(model, theta0, design, noise, n, rng)
        theta1 = theta0 + (1 / np.sqrt(n)) * h
        f0, f1 = model.solve(theta0), model.solve(theta1)
        got = log_likelihood_ratio(data, f0, f1, noise)
        g0 = f0.evaluate(data.t, data.x)
        g1 = f1.evaluate(data.t, data.x)
        d = g1 - g0
        exact = float(np.sum(d * (data.y - g0) - 0.5 * d**2))
        assert got == pytest.approx(exact, abs=1e-8)

    def test_support_escape_counted(self, setup):
        # compact noise + huge shift: -inf ratios occur and are reported
        es, model, _, design, theta0, M = setup
        bump = make_noise("cosine_bump")
        h = FourierCoeffs(es, np.zeros(es.size))
        h.data[es.index_of([1], 1)] = 3.0  # shift ~0.3 at the cos peaks
        rep = lan_montecarlo(
            model, theta0, h, bump, design, n=200, replicates=100, rng_seed=5, M=M
        )
        assert rep["support_escapes"] > 0
        assert rep["support_escapes"] < 100  # a mix, not a wipe-out
        assert np.isfinite(rep["mean"])


class TestLanMonteCarlo:
    def test_heat_gaussian_null(self, setup):
        es, model, noise, design, theta0, M = setup
        h = FourierCoeffs.unit(es, es.index_of([1], 1))
        h = h * (1.0 / lan_norm(h, M))
        rep = lan_montecarlo(
            model, theta0, h, noise, design, n=2000, replicates=200, rng_seed=6, M=M
        )
        assert abs(rep["mean"] - (-0.5)) < 3 * rep["mean_stderr"]
        assert abs(rep["var"] - 1.0) < 0.3
        assert rep["ks_pvalue"] > 0.01

    def test_alternative_contiguity(self, setup):
        es, model, noise, design, theta0, M = setup
        h = FourierCoeffs.unit(es, es.index_of([1], 1))
        h = h * (1.0 / lan_norm(h, M))
        rep = lan_montecarlo(
            model, theta0, h, noise, design, n=2000, replicates=200, rng_seed=7,
            M=M, under="alternative",
        )
        assert abs(rep["mean"] - 0.5) < 3 * rep["mean_stderr"]

    def test_quadratic_scaling_of_target(self, setup):
        es, model, noise, design, theta0, M = setup
        h = FourierCoeffs.unit(es, es.index_of([1], 1))
        h = h * (1.0 / lan_norm(h, M))
        rep1 = lan_montecarlo(model, theta0, h, noise, design, 500, 50, 8, M=M)
        rep2 = lan_montecarlo(model, theta0, 2.0 * h, noise, design, 500, 50, 8, M=M)
        assert rep2["target_mean"] == pytest.approx(4 * rep1["target_mean"])
        assert abs(rep2["mean"] - rep2["target_mean"]) < 4 * rep2["mean_stderr"]

    def test_jensen_negative_mean(self, setup):
        # E log(dP1/dP0) <= 0 under the null
        es, model, noise, design, theta0, M = setup
        h = FourierCoeffs.unit(es, es.index_of([1], 1))
        h = h * (0.8 / lan_norm(h, M))
        rep = lan_montecarlo(model, theta0, h, noise, design, 1000, 150, 9, M=M)
        assert rep["mean"] + 3 * rep["mean_stderr"] < 0

    def test_workers_deterministic(self, setup):
        es, model, noise, design, theta0, M = setup
        h = FourierCoeffs.unit(es, es.index_of([1], 1))
        a = lan_montecarlo(model, theta0, h, noise, design, 200, 20, 10, M=M, workers=1)
        b = lan_montecarlo(model, theta0, h, noise, design, 200, 20, 10, M=M, workers=4)
        assert a["mean"] == b["mean"] and a["var"] == b["var"]


class TestInfluenceEstimator:
    def test_zero_target(self, setup):
        es, model, noise, design, theta0, M = setup
        rng = np.random.default_rng(11)
        data = simulate_dataset(model, theta0, design, noise, 200, rng)
        psi = FourierCoeffs.zeros(es)
        est = efficient_influence_estimate(psi, data, theta0, M, model, noise)
        assert est == 0.0

    def test_exact_unbiasedness_linear_gaussian(self, setup):
        es, model, noise, design, theta0, M = setup
        psi = FourierCoeffs.unit(es, es.index_of([1], 1))
        field0 = model.solve(theta0)
        infl = build_influence_field(psi, theta0, M, model)
        truth = pairing(psi, theta0)
        ss = np.random.SeedSequence(12)
        ests = []
        for child in ss.spawn(400):
            rng = np.random.default_rng(child)
            data = simulate_dataset(model, None, design, noise, 500, rng, field=field0)
            chi = influence_values(data, field0, infl, noise)
            ests.append(truth + chi.mean())
        ests = np.array(ests)
        stderr = ests.std(ddof=1) / np.sqrt(ests.size)
        assert abs(ests.mean() - truth) < 3 * stderr
        # variance attains the bound within MC resolution
        bound = M.inv_quadform(M.coeff_vector(psi))
        mc_var = 500 * ests.var(ddof=1)
        assert abs(mc_var - bound) < 4 * bound * np.sqrt(2.0 / (ests.size - 1))

    def test_influence_mean_zero_under_null(self, setup):
        es, model, noise, design, theta0, M = setup
        psi = FourierCoeffs.unit(es, es.index_of([2], 2))
        field0 = model.solve(theta0)
        infl = build_influence_field(psi, theta0, M, model)
        rng = np.random.default_rng(13)
        data = simulate_dataset(model, None, design, noise, 50000, rng, field=field0)
        chi = influence_values(data, field0, infl, noise)
        assert abs(chi.mean()) < 3 * chi.std() / np.sqrt(chi.size)

    def test_vector_influence_centered(self):
        # p=2: the score pairing stays mean-zero under the data-generating law
        from pdefisher import NavierStokesModel, assemble_information_matrix, build_eigensystem
        from pdefisher.spectral import DIV_FREE

        es = build_eigensystem(2, 3, DIV_FREE)
        mesh = TimeMesh.uniform(0.25, 32)
        ns = NavierStokesModel(es, viscosity=0.05, T=0.25, mesh=mesh)
        noise = make_noise("gaussian2", cov=np.array([[0.5, 0.1], [0.1, 0.8]]))
        design = DesignMeasure(0.25)
        theta0 = FourierCoeffs.zeros(es)
        theta0.data[es.index_of([1, 0], 1)] = 0.4
        M = assemble_information_matrix(ns, theta0, noise, design, 8)
        psi = FourierCoeffs.unit(es, es.index_of([0, 1], 1))
        field0 = ns.solve(theta0)
        infl = build_influence_field(psi, theta0, M, ns)
        rng = np.random.default_rng(31)
        data = simulate_dataset(ns, None, design, noise, 40000, rng, field=field0)
        chi = influence_values(data, field0, infl, noise)
        assert abs(chi.mean()) < 3 * chi.std() / np.sqrt(chi.size)

    def test_unbiased_under_nonuniform_design(self):
        # the estimator uses the canonical score pairing; with X ~ lambda the
        # local expectation is <psi, delta> for any bounded design density
        from pdefisher import assemble_information_matrix

        es = build_eigensystem(1, 4)
        mesh = TimeMesh.graded(1.0, levels=14, steps_per_block=64)
        model = HeatModel(es, T=1.0, mesh=mesh)
        noise = make_noise("gaussian", variance=0.8)
        design = DesignMeasure(1.0, kind="cosine", amplitude=0.6)
        theta0 = FourierCoeffs.zeros(es)
        theta0.data[0] = 0.5
        M = assemble_information_matrix(model, theta0, noise, design, 9)
        psi = FourierCoeffs.unit(es, es.index_of([1], 1))
        delta = FourierCoeffs.unit(es, es.index_of([1], 1)) * 0.2
        theta = theta0 + delta
        field = model.solve(theta)
        field0 = model.solve(theta0)
        infl = build_influence_field(psi, theta0, M, model)
        rng = np.random.default_rng(32)
        data = simulate_dataset(model, None, design, noise, 200_000, rng, field=field)
        chi = influence_values(data, field0, infl, noise)
        target = pairing(psi, delta)  # heat is linear: exact identity
        stderr = chi.std() / np.sqrt(chi.size)
        assert abs(chi.mean() - target) < 3 * stderr

    def test_noise_scale_doubles_bound_and_variance(self, setup):
        # doubling sigma scales the bound by 4 exactly and the MC variance by ~4
        from pdefisher import assemble_information_matrix, efficiency_report

        es, model, _, design, theta0, M1 = setup
        psi = FourierCoeffs.unit(es, es.index_of([1], 1))
        noise2 = make_noise("gaussian", variance=4.0)
        M2 = assemble_information_matrix(model, theta0, noise2, design, 9)
        b1 = M1.inv_quadform(M1.coeff_vector(psi))
        b2 = M2.inv_quadform(M2.coeff_vector(psi))
        assert b2 == pytest.approx(4 * b1, rel=1e-10)
        noise1 = make_noise("gaussian", variance=1.0)
        rep1 = efficiency_report(model, psi, theta0, noise1, design, M1, 400, 300, 15)
        rep2 = efficiency_report(model, psi, theta0, noise2, design, M2, 400, 300, 15)
        assert rep2["mc_variance"] / rep1["mc_variance"] == pytest.approx(4.0, rel=0.35)

    def test_local_shift_regularity(self, setup):
        # under theta0 + h/sqrt(N): sqrt(N)(est - <psi, theta>) has mean ~ 0
        es, model, noise, design, theta0, M = setup
        psi = FourierCoeffs.unit(es, es.index_of([1], 1))
        h = FourierCoeffs.unit(es, es.index_of([1], 2)) * 2.0
        n = 500
        theta = theta0 + (1 / np.sqrt(n)) * h
        field = model.solve(theta)
        field0 = model.solve(theta0)
        infl = build_influence_field(psi, theta0, M, model)
        truthN = pairing(psi, theta)
        truth0 = pairing(psi, theta0)
        ss = np.random.SeedSequence(14)
        vals = []
        for child in ss.spawn(300):
            rng = np.random.default_rng(child)
            data = simulate_dataset(model, None, design, noise, n, rng, field=field)
            chi = influence_values(data, field0, infl, noise)
            vals.append(np.sqrt(n) * (truth0 + chi.mean() - truthN))
        vals = np.array(vals)
        assert abs(vals.mean()) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)
