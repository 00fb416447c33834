"""Sampling the efficient limiting Gaussian N(0, M^{-1}) in the eigenbasis,
support diagnostics across the negative-order scale, and Monte-Carlo
pushforward bounds through the shipped smooth functionals.

Truncation bias is always reported: moments carry their truncation level and
the K-trace, never a single bare number.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .spectral import DIV_FREE, values_from_coeffs


class GaussianSampleBatch:
    """m draws from N(0, M^{-1}) in the retained eigenbasis."""

    def __init__(self, samples, n_basis, seed_info=None):
        self.samples = samples
        self.m = samples.shape[0]
        self.n_basis = n_basis
        self.seed_info = seed_info

    def dump(self):
        return {
            "K": self.n_basis,
            "m": self.m,
            "seed": self.seed_info,
        }

    def save(self, path_stem, model_hash=None):
        """<stem>.json header {K, m, seed, model-hash} + <stem>.f64 matrix (m x K)."""
        import json

        header = dict(self.dump())
        header["model-hash"] = model_hash
        header["dtype"] = "<f8"
        with open(f"{path_stem}.json", "w") as fh:
            json.dump(header, fh, sort_keys=True, indent=2)
        self.samples.astype("<f8").tofile(f"{path_stem}.f64")

    @classmethod
    def load(cls, path_stem):
        import json

        with open(f"{path_stem}.json") as fh:
            header = json.load(fh)
        samples = np.fromfile(f"{path_stem}.f64", dtype="<f8").reshape(
            header["m"], header["K"]
        )
        return cls(samples, header["K"], seed_info=header.get("seed"))


def sample_efficient_gaussian(M, m, rng):
    """Draw L^{-T} z with L the Cholesky factor of M, so the covariance is M^{-1}."""
    L = M.cholesky_lower()
    z = rng.standard_normal((m, M.n_basis))
    samples = solve_triangular(L, z.T, lower=True, trans="T").T
    return GaussianSampleBatch(samples, M.n_basis)


def support_diagnostic(
    M, es, beta_list, k_grid, kappa, alpha, m_mc=0, rng=None, mc_k=None
):
    """Exact second moments E||G_K||^2 of the truncated Gaussian in the
    D^{-beta} scale, with plateau/growth flags against the beta > kappa+alpha
    threshold and an optional Monte-Carlo cross-check.
    """
    k_grid = sorted(int(k) for k in k_grid)
    if not beta_list or not k_grid:
        raise ValueError("need nonempty beta and truncation grids")
    if k_grid[-1] > M.n_basis:
        raise ValueError("truncation grid exceeds the assembled basis")
    inv_diags = {}
    for k in k_grid:
        inv_diags[k] = M.leading(k).inv_diag()
    report = {
        "kappa": kappa,
        "alpha": alpha,
        "threshold": kappa + alpha,
        "k_grid": k_grid,
        "betas": [],
    }
    for beta in beta_list:
        wts = es.tau ** (-float(beta))
        moments = [float(np.sum(wts[:k] * inv_diags[k])) for k in k_grid]
        rel_inc = (moments[-1] - moments[-2]) / moments[-1] if len(moments) > 1 else 0.0
        divergent = rel_inc > 0.05
        entry = {
            "beta": float(beta),
            "moments": moments,
            "last_rel_increment": rel_inc,
            "divergent": divergent,
            "predicted_convergent": beta > kappa + alpha,
        }
        if divergent and len(k_grid) >= 3:
            slope = np.polyfit(np.log(k_grid), np.log(moments), 1)[0]
            entry["fitted_growth"] = float(slope)
        report["betas"].append(entry)

    if m_mc and rng is not None:
        k = int(mc_k if mc_k is not None else k_grid[0])
        batch = sample_efficient_gaussian(M.leading(k), m_mc, rng)
        report["mc"] = {"k": k, "m": m_mc, "betas": []}
        for beta in beta_list:
            wts = es.tau[:k] ** (-float(beta))
            per_sample = (batch.samples**2 * wts[None, :]).sum(axis=1)
            exact = float(np.sum(wts * M.leading(k).inv_diag()))
            report["mc"]["betas"].append(
                {
                    "beta": float(beta),
                    "estimate": float(per_sample.mean()),
                    "stderr": float(per_sample.std(ddof=1) / np.sqrt(m_mc)),
                    "exact": exact,
                }
            )
    return report


# ---------------------------------------------------------------------------
# pushforward bounds through smooth functionals
# ---------------------------------------------------------------------------


def _window_l2_sq(batch, i0, i1, w_win):
    """Squared space-time L^2 over the node window for each batch column."""
    prof = np.einsum("tmb,tmb->tb", batch.data[i0 : i1 + 1], batch.data[i0 : i1 + 1])
    return w_win @ prof


def _window_sup(batch, i0, i1, oversample=4):
    """Sup of |field| over the window, on an oversampled grid."""
    es = batch.es
    n = es.min_grid_points() * oversample // 2 * 2
    sup = np.zeros(batch.data.shape[2])
    for i in range(i0, i1 + 1):
        vals = values_from_coeffs(es, batch.data[i].T, n)
        if es.subspace == DIV_FREE:
            mag = np.sqrt((vals**2).sum(axis=1))
        else:
            mag = np.abs(vals)
        sup = np.maximum(sup, mag.reshape(mag.shape[0], -1).max(axis=1))
    return sup


def _ns_nonlinearity_values(model, base_field, batch, i):
    """Values of (U . grad) u0 + (u0 . grad) U at node i for all columns."""
    es = batch.es
    n = model.n
    u0 = values_from_coeffs(es, base_field.data[i], n)  # (2, n, n)
    U = values_from_coeffs(es, batch.data[i].T, n)  # (B, 2, n, n)

    def grad(vals):
        # vals (..., n, n) -> d/dx1, d/dx2 spectrally
        w = np.fft.fft2(vals)
        kx = model.kx
        ky = model.ky
        return (
            np.fft.ifft2(2j * np.pi * kx * w).real,
            np.fft.ifft2(2j * np.pi * ky * w).real,
        )

    g0x, g0y = grad(u0)  # (2, n, n) each
    gUx, gUy = grad(U)  # (B, 2, n, n)
    out = (
        U[:, 0:1] * g0x[None] + U[:, 1:2] * g0y[None]
        + u0[None, 0:1] * gUx + u0[None, 1:2] * gUy
    )
    return out  # (B, 2, n, n)


def functional_pushforward_bound(
    model, theta0, M, samples, functional, loss, t0, t1, power=2.0
):
    """Monte-Carlo estimate of E || dF[G] ||^power over the sample batch.

    functional: "trajectory" (the linearized flow restricted to positive
    times) or "ns-nonlinearity" (derivative of u -> (u.grad)u).
    loss: "l2" (space-time L^2 on [t0,t1] x Omega) or "sup".
    """
    if t0 <= 0.0:
        raise ValueError(
            "t0 must be strictly positive: the smoothing that makes the "
            "pushforward bound finite is only available at positive times"
        )
    if t1 <= t0 or t1 > model.T + 1e-12:
        raise ValueError("need 0 < t0 < t1 <= T")
    if functional not in ("trajectory", "ns-nonlinearity"):
        raise ValueError(f"unknown functional {functional!r}")
    if loss not in ("l2", "sup"):
        raise ValueError(f"unknown loss {loss!r}")
    if functional == "ns-nonlinearity" and model.kind != "ns":
        raise ValueError("the nonlinearity functional needs the Navier-Stokes model")

    es = model.es
    i0, i1 = model.mesh.window_slice(t0, t1)
    w_win = model.mesh.window_weights(i0, i1)
    sample_data = samples.samples  # (m, K)
    m = sample_data.shape[0]
    values = np.empty(m)
    base_field = model.solve(theta0) if functional == "ns-nonlinearity" else None

    chunk = 64
    for start in range(0, m, chunk):
        cols = np.zeros((es.size, min(chunk, m - start)))
        cols[: samples.n_basis] = sample_data[start : start + cols.shape[1]].T
        batch = model.linearize(theta0, cols)
        if functional == "trajectory":
            if loss == "l2":
                vals = np.sqrt(_window_l2_sq(batch, i0, i1, w_win))
            else:
                vals = _window_sup(batch, i0, i1)
        else:
            n = model.n
            if loss == "l2":
                acc = np.zeros(cols.shape[1])
                for i in range(i0, i1 + 1):
                    f = _ns_nonlinearity_values(model, base_field, batch, i)
                    acc += w_win[i - i0] * (f**2).sum(axis=1).reshape(f.shape[0], -1).mean(axis=1)
                vals = np.sqrt(acc)
            else:
                sup = np.zeros(cols.shape[1])
                for i in range(i0, i1 + 1):
                    f = _ns_nonlinearity_values(model, base_field, batch, i)
                    mag = np.sqrt((f**2).sum(axis=1))
                    sup = np.maximum(sup, mag.reshape(mag.shape[0], -1).max(axis=1))
                vals = sup
        values[start : start + cols.shape[1]] = vals

    powered = values ** float(power)
    return {
        "functional": functional,
        "loss": loss,
        "power": float(power),
        "t0": t0,
        "t1": t1,
        "n_basis": samples.n_basis,
        "m": m,
        "estimate": float(powered.mean()),
        "stderr": float(powered.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0,
    }
