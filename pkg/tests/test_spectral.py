"""Eigensystem, transform, and norm checks against independent oracles."""

import json

import numpy as np
import pytest

from pdefisher import (
    DIV_FREE,
    FULL,
    MEAN_ZERO,
    FourierCoeffs,
    build_eigensystem,
    pairing,
    sobolev_norm,
)
from pdefisher.spectral import (
    coeffs_from_values,
    dealiased_product,
    load_coeffs,
    values_from_coeffs,
)

PI2 = np.pi**2


class TestEigenSystem:
    def test_d1_k2_eigenvalues(self):
        es = build_eigensystem(1, 2, FULL)
        np.testing.assert_allclose(es.lam, [0, 4 * PI2, 4 * PI2, 16 * PI2, 16 * PI2])
        np.testing.assert_allclose(es.tau, 1.0 + es.lam)

    def test_divfree_spectral_gap(self):
        es = build_eigensystem(2, 1, DIV_FREE)
        assert es.lam.min() == pytest.approx(4 * PI2)
        np.testing.assert_allclose(es.tau, es.lam)
        # unit directions orthogonal to their wavevectors
        dots = np.einsum("md,md->m", es.dirs, es.kvecs.astype(float))
        np.testing.assert_allclose(dots, 0.0, atol=1e-14)
        np.testing.assert_allclose((es.dirs**2).sum(axis=1), 1.0)

    def test_weyl_exponent_d2(self):
        # oracle: the eigenvalues ARE the enumerated lattice values; the
        # log-log slope over j in [50, 500] must be 2/d = 1
        es = build_eigensystem(2, 16, FULL)
        j = np.arange(1, es.size)  # skip the zero mode
        sel = (j >= 50) & (j <= 500)
        slope = np.polyfit(np.log(j[sel]), np.log(es.lam[1:][sel]), 1)[0]
        assert abs(slope - 1.0) < 0.1

    def test_ordering_deterministic(self):
        a = build_eigensystem(2, 6, MEAN_ZERO)
        b = build_eigensystem(2, 6, MEAN_ZERO)
        np.testing.assert_array_equal(a.kvecs, b.kvecs)
        np.testing.assert_array_equal(a.kind, b.kind)
        assert np.all(np.diff(a.lam) >= 0)

    def test_invalid_combinations(self):
        with pytest.raises(ValueError):
            build_eigensystem(1, 4, DIV_FREE)
        with pytest.raises(ValueError):
            build_eigensystem(3, 4, FULL)
        with pytest.raises(ValueError):
            build_eigensystem(1, 0, FULL)


class TestSobolevNorm:
    def test_single_mode(self):
        es = build_eigensystem(1, 4)
        for j in (0, 1, 4):
            u = FourierCoeffs.unit(es, j)
            for s in (-2.0, 0.0, 1.0, 3.0):
                assert sobolev_norm(u, s) == pytest.approx(es.tau[j] ** (s / 2))

    def test_parseval_two_modes(self):
        es = build_eigensystem(1, 4)
        u = FourierCoeffs.unit(es, 1) + FourierCoeffs.unit(es, 2)
        assert sobolev_norm(u, 0.0) == pytest.approx(np.sqrt(2.0))

    def test_brute_force_sum(self):
        # oracle: direct summation of tau^s u^2
        es = build_eigensystem(1, 64)
        u = FourierCoeffs(es, (1.0 + es.lam) ** (-1.0))
        expected = np.sqrt(sum((1 + lam) ** 1 * (1 + lam) ** (-2) for lam in es.lam))
        assert sobolev_norm(u, 1.0) == pytest.approx(expected, rel=1e-12)

    def test_outside_subspace_rejected(self):
        full = build_eigensystem(1, 4, FULL)
        mz = build_eigensystem(1, 4, MEAN_ZERO)
        u = FourierCoeffs.unit(full, 0)  # pure constant
        with pytest.raises(ValueError):
            sobolev_norm(u, 1.0, mz)
        # a mean-zero field re-indexes cleanly
        v = FourierCoeffs.unit(full, 1)
        assert sobolev_norm(v, 1.0, mz) == pytest.approx(mz.tau[0] ** 0.5)


class TestPairing:
    def test_orthonormality(self):
        es = build_eigensystem(2, 3)
        rng = np.random.default_rng(1)
        for _ in range(5):
            i, j = rng.integers(0, es.size, 2)
            got = pairing(FourierCoeffs.unit(es, i), FourierCoeffs.unit(es, j))
            assert got == pytest.approx(1.0 if i == j else 0.0, abs=1e-15)

    def test_pairing_is_s0_norm(self):
        es = build_eigensystem(1, 8)
        u = FourierCoeffs(es, np.random.default_rng(2).standard_normal(es.size))
        assert pairing(u, u) == pytest.approx(sobolev_norm(u, 0.0) ** 2, rel=1e-13)

    def test_grid_quadrature_oracle(self):
        # oracle: uniform-grid mean (trapezoid on the torus) of the product
        es = build_eigensystem(2, 16)
        rng = np.random.default_rng(3)
        u = FourierCoeffs(es, rng.standard_normal(es.size))
        v = FourierCoeffs(es, rng.standard_normal(es.size))
        n = es.min_grid_points(dealias=True)
        quad = float(np.mean(values_from_coeffs(es, u.data, n) * values_from_coeffs(es, v.data, n)))
        assert abs(pairing(u, v) - quad) < 1e-10

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            pairing(
                FourierCoeffs.unit(build_eigensystem(1, 4), 0),
                FourierCoeffs.unit(build_eigensystem(1, 8), 0),
            )


def _complex_coeffs(es, data, kmax):
    """Independent realified -> complex converter (test-local oracle helper)."""
    c = {}
    for j in range(es.size):
        k = tuple(int(v) for v in es.kvecs[j])
        kind = int(es.kind[j])
        if kind == 0:
            c[k] = c.get(k, 0) + data[j]
        elif kind == 1:
            c[k] = c.get(k, 0) + data[j] / np.sqrt(2)
            mk = tuple(-v for v in k)
            c[mk] = c.get(mk, 0) + data[j] / np.sqrt(2)
        else:
            c[k] = c.get(k, 0) - 1j * data[j] / np.sqrt(2)
            mk = tuple(-v for v in k)
            c[mk] = c.get(mk, 0) + 1j * data[j] / np.sqrt(2)
    return c


class TestTransforms:
    def test_roundtrip(self):
        es = build_eigensystem(2, 5)
        n = es.min_grid_points()
        rng = np.random.default_rng(4)
        vals = values_from_coeffs(es, rng.standard_normal(es.size), n)
        back = values_from_coeffs(es, coeffs_from_values(es, vals), n)
        np.testing.assert_allclose(back, vals, atol=1e-12)

    def test_cosine_transform(self):
        es = build_eigensystem(1, 8)
        n = es.min_grid_points()
        x = np.arange(n) / n
        c = coeffs_from_values(es, np.cos(2 * np.pi * x))
        # complex amplitude at k=+-1 has modulus 1/2
        amps = _complex_coeffs(es, c, 8)
        assert abs(amps[(1,)]) == pytest.approx(0.5, abs=1e-14)
        assert abs(amps[(-1,)]) == pytest.approx(0.5, abs=1e-14)
        rest = [a for k, a in amps.items() if k not in ((1,), (-1,))]
        assert max(abs(a) for a in rest) < 1e-14

    def test_dealiased_product_vs_convolution_oracle(self):
        # oracle: O(K^2) direct convolution of complex coefficients
        es = build_eigensystem(1, 8)
        rng = np.random.default_rng(5)
        u = rng.standard_normal(es.size)
        v = rng.standard_normal(es.size)
        cu = _complex_coeffs(es, u, 8)
        cv = _complex_coeffs(es, v, 8)
        exact = {}
        for k1, a in cu.items():
            for k2, b in cv.items():
                k = (k1[0] + k2[0],)
                if abs(k[0]) <= 8:
                    exact[k] = exact.get(k, 0) + a * b
        got = _complex_coeffs(es, dealiased_product(es, u, v), 8)
        for k, val in exact.items():
            assert got.get(k, 0) == pytest.approx(val, abs=1e-12)

    def test_divfree_values_are_divergence_free(self):
        es = build_eigensystem(2, 4, DIV_FREE)
        rng = np.random.default_rng(6)
        u = rng.standard_normal(es.size)
        n = 2 * es.min_grid_points()
        vals = values_from_coeffs(es, u, n)  # (2, n, n)
        k = np.fft.fftfreq(n, 1.0 / n)
        div = (
            2j * np.pi * k[:, None] * np.fft.fft2(vals[0])
            + 2j * np.pi * k[None, :] * np.fft.fft2(vals[1])
        )
        assert np.abs(div).max() / np.abs(np.fft.fft2(vals[0])).max() < 1e-12
        # and the projection roundtrips
        np.testing.assert_allclose(coeffs_from_values(es, vals), u, atol=1e-12)


class TestDump:
    def test_dump_roundtrip_and_ordering(self):
        es = build_eigensystem(2, 3, MEAN_ZERO)
        u = FourierCoeffs(es, np.random.default_rng(7).standard_normal(es.size))
        blob = u.dumps()
        obj = json.loads(blob)
        assert obj["subspace"] == MEAN_ZERO
        assert len(obj["entries"]) == es.size
        back = load_coeffs(blob)
        np.testing.assert_allclose(back.data, u.data, atol=1e-15)
