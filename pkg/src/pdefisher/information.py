"""Galerkin realization of the score/information operators.

Everything dual is reduced to the Gram matrix M of the linearized forward
map in the Laplacian eigenbasis,

    M_ij = < I[e_i], I_eps I[e_j] >_{L2_lambda},

assembled from one linearized solve per basis vector and the mesh time
quadrature.  The LAN norm is sqrt(h^T M h), the dual norm of a target psi
is sqrt(psi^T M^{-1} psi) (reported as a truncation trace, never a single
number), and the efficient Gaussian has covariance M^{-1}.
"""

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import cho_factor, cho_solve, eigh

from .forward import SpaceTimeBatch
from .noise import fisher_matrix as compute_fisher
from .spectral import DIV_FREE, values_from_coeffs

_BATCH_LIMIT = 4e7  # snapshot-array entries above which heat assembly streams


class DesignMeasure:
    """Sampling law of the design points on the cylinder [0,T] x T^d.

    Shipped densities are time-independent: lambda(t, x) = g(x) / T with
    g band-limited, so grid means integrate products with band-limited
    fields exactly.
    """

    def __init__(self, T, kind="uniform", amplitude=0.0, axis=0):
        if kind not in ("uniform", "cosine"):
            raise ValueError(f"unknown design kind {kind!r}")
        if kind == "cosine" and not (0 <= abs(amplitude) < 1):
            raise ValueError("cosine design needs |amplitude| < 1")
        self.T = float(T)
        self.kind = kind
        self.amplitude = float(amplitude)
        self.axis = int(axis)
        if kind == "uniform":
            self.lambda_min = self.lambda_max = 1.0 / self.T
            self.spatial_band = 0
        else:
            self.lambda_min = (1.0 - abs(self.amplitude)) / self.T
            self.lambda_max = (1.0 + abs(self.amplitude)) / self.T
            self.spatial_band = 1
        self._sampler = None

    @property
    def is_uniform(self):
        return self.kind == "uniform"

    def density(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.is_uniform:
            return np.full(x.shape[0], 1.0 / self.T)
        g = 1.0 + self.amplitude * np.cos(2 * np.pi * x[:, self.axis])
        return g / self.T

    def spatial_density_values(self, d, n):
        """Values of T * lambda on the uniform n^d grid."""
        if self.is_uniform:
            return np.ones((n,) * d)
        ax = np.arange(n) / n
        g = 1.0 + self.amplitude * np.cos(2 * np.pi * ax)
        if d == 1:
            return g if self.axis == 0 else np.ones(n)
        out = np.ones((n, n))
        if self.axis == 0:
            out *= g[:, None]
        else:
            out *= g[None, :]
        return out

    def sample(self, rng, n, d):
        """n i.i.d. design points; draw order (t, then x) is part of the contract."""
        t = rng.uniform(0.0, self.T, size=n)
        x = rng.uniform(0.0, 1.0, size=(n, d))
        if not self.is_uniform:
            if self._sampler is None:
                u = np.linspace(0.0, 1.0, 4097)
                cdf = u + self.amplitude * np.sin(2 * np.pi * u) / (2 * np.pi)
                self._sampler = PchipInterpolator(cdf, u, extrapolate=False)
            x[:, self.axis] = self._sampler(x[:, self.axis])
        return t, x


# ---------------------------------------------------------------------------
# weighted space-time Gram quadrature
# ---------------------------------------------------------------------------


def _mode_weights(es, fisher):
    """Diagonal spatial weight of the pointwise noise form on basis modes."""
    if fisher is None:
        return np.ones(es.size)
    if es.p == 1:
        return np.full(es.size, float(fisher.matrix[0, 0]))
    return np.einsum("ma,ab,mb->m", es.dirs, fisher.matrix, es.dirs)


def spacetime_gram(batch, design, fisher=None, node_weights=None):
    """Gram matrix G_ij = int <U_i, I_eps U_j> lambda dx dt for a field batch."""
    es = batch.es
    w_t = batch.mesh.weights if node_weights is None else node_weights
    data = batch.data  # (nodes, nm, B)
    if design.is_uniform:
        wm = _mode_weights(es, fisher) / design.T
        scaled = data * np.sqrt(w_t)[:, None, None] * np.sqrt(wm)[None, :, None]
        flat = scaled.reshape(-1, data.shape[2])
        g = flat.T @ flat
    else:
        n = _quad_grid_points(es, design)
        gx = design.spatial_density_values(es.d, n) / design.T
        g = np.zeros((data.shape[2], data.shape[2]))
        for i in range(data.shape[0]):
            if w_t[i] == 0.0:
                continue
            vals = _component_values(es, data[i].T, n)  # (B, p, grid...)
            if fisher is not None and es.p == 2:
                iv = np.einsum("ab,nb...->na...", fisher.matrix, vals)
            elif fisher is not None:
                iv = float(fisher.matrix[0, 0]) * vals
            else:
                iv = vals
            prod = np.einsum("ip...,jp...->ij...", vals, iv)
            g += w_t[i] * (prod * gx).reshape(data.shape[2], data.shape[2], -1).mean(axis=2)
    return 0.5 * (g + g.T)


def _component_values(es, coeff_rows, n):
    vals = values_from_coeffs(es, coeff_rows, n)
    if es.subspace == DIV_FREE:
        return vals  # (B, 2, n, n)
    return vals[:, None, ...]


def _quad_grid_points(es, design):
    n = 2 * es.kmax + design.spatial_band + 2
    return n + (n % 2)


def spacetime_quadform(field, design, fisher=None, node_weights=None):
    """int <U, I_eps U> lambda dx dt for a single field."""
    batch = SpaceTimeBatch(field.es, field.mesh, field.data[:, :, None])
    return float(spacetime_gram(batch, design, fisher, node_weights)[0, 0])


def l2lambda_norm(field, design):
    """|| field ||_{L2_lambda} by spectral space / mesh time quadrature."""
    return float(np.sqrt(spacetime_quadform(field, design)))


# ---------------------------------------------------------------------------
# information matrix
# ---------------------------------------------------------------------------


class InformationMatrix:
    """K x K Galerkin matrix of the information operator, with factorization."""

    def __init__(self, matrix, es, meta=None, cond_limit=1e12):
        matrix = 0.5 * (matrix + matrix.T)
        self.matrix = matrix
        self.es = es
        self.n_basis = matrix.shape[0]
        self.meta = dict(meta or {})
        try:
            self._cho = cho_factor(matrix, lower=True)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                "information matrix is not positive definite at this truncation: "
                "the linearized forward map looks non-injective on the retained modes"
            ) from exc
        evals = np.linalg.eigvalsh(matrix)
        self.eig_min = float(evals[0])
        self.eig_max = float(evals[-1])
        self.cond = self.eig_max / max(self.eig_min, 1e-300)
        if self.cond > cond_limit:
            raise RuntimeError(
                f"information matrix condition {self.cond:.2e} exceeds {cond_limit:.0e}; "
                "results at this truncation would be numerically meaningless"
            )

    def solve(self, rhs):
        return cho_solve(self._cho, rhs)

    def cholesky_lower(self):
        L = np.tril(self._cho[0])
        return L

    def inv_quadform(self, psi):
        """psi^T M^{-1} psi."""
        return float(psi @ self.solve(psi))

    def inv_diag(self):
        return np.diag(self.solve(np.eye(self.n_basis)))

    def leading(self, k):
        if not (1 <= k <= self.n_basis):
            raise ValueError("leading block size out of range")
        if k == self.n_basis:
            return self
        return InformationMatrix(self.matrix[:k, :k].copy(), self.es, self.meta)

    def coeff_vector(self, psi):
        """Coefficients of psi in the retained basis; error if psi leaves the span."""
        data = psi.data if hasattr(psi, "data") else np.asarray(psi, dtype=float)
        if data.shape[0] > self.n_basis and np.any(data[self.n_basis :] != 0.0):
            raise ValueError("field has components outside the retained basis span")
        out = np.zeros(self.n_basis)
        out[: min(self.n_basis, data.shape[0])] = data[: self.n_basis]
        return out


def assemble_information_matrix(model, theta0, noise, design, n_basis, method="auto"):
    """M_ij = <I[e_i], I_eps I[e_j]>_{L2_lambda} from one linearized solve per
    basis vector.

    method "batch" materializes all linearized fields; "diagonal-flow" is an
    algebraically identical reassociation available for the heat model under
    a uniform design (the propagator is diagonal in the eigenbasis), used
    automatically for large truncations where the batch would not fit.
    """
    es = model.es
    if n_basis > es.size:
        raise ValueError(f"n_basis {n_basis} exceeds eigensystem size {es.size}")
    if noise is not None and noise.p != es.p:
        raise ValueError("noise dimension does not match field components")
    fisher = compute_fisher(noise) if noise is not None else None

    if method == "auto":
        big = model.mesh.n_nodes * es.size * n_basis > _BATCH_LIMIT
        method = "diagonal-flow" if (
            big and model.kind == "heat" and design.is_uniform
        ) else "batch"

    if method == "diagonal-flow":
        if model.kind != "heat" or not design.is_uniform:
            raise ValueError("diagonal-flow assembly needs the heat model and a uniform design")
        wm = _mode_weights(es, fisher) / design.T
        decay = np.exp(-2.0 * np.outer(model.mesh.nodes, es.lam[:n_basis]))
        diag = (model.mesh.weights @ decay) * wm[:n_basis]
        matrix = np.diag(diag)
    elif method == "batch":
        cols = np.eye(es.size, n_basis)
        batch = model.linearize(theta0, cols)
        matrix = spacetime_gram(batch, design, fisher)
    else:
        raise ValueError(f"unknown assembly method {method!r}")

    meta = {
        "model": model.kind,
        "noise": getattr(noise, "family", None),
        "design": design.kind,
        "n_basis": n_basis,
        "method": method,
    }
    return InformationMatrix(matrix, es, meta)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def lan_norm(h, M):
    """sqrt(h^T M h) for h in the span of the retained basis."""
    v = M.coeff_vector(h)
    return float(np.sqrt(v @ M.matrix @ v))


def lan_norm_direct(model, theta0, h, noise, design):
    """Definitional || I_eps^(1/2) I[h] ||_{L2_lambda} via one linearized solve."""
    fisher = compute_fisher(noise)
    field = model.linearize(theta0, h)
    return float(np.sqrt(spacetime_quadform(field, design, fisher)))


def s_norm_truncated(psi, M, k_grid=None):
    """Dual-norm truncation trace psi_K'^T M_K'^{-1} psi_K', nondecreasing in K'.

    Divergence of the trace is the numerical signature of a target outside
    the dual space (infinite efficiency bound).
    """
    v = M.coeff_vector(psi)
    if k_grid is None:
        k_grid = sorted({2**a for a in range(2, 30) if 2**a < M.n_basis} | {M.n_basis})
    values = []
    for k in k_grid:
        blk = M.leading(int(k))
        values.append(blk.inv_quadform(v[: int(k)]))
    return {"k_grid": [int(k) for k in k_grid], "values": values, "value": values[-1]}


def octave_divergence_flag(k_grid, values, rel_increment=0.02):
    """Flag a truncation trace that keeps growing instead of plateauing.

    Returns (flag, increments).  A trace with a finite limit has per-octave
    increments collapsing to zero; the flag fires when the last increment
    still exceeds ``rel_increment`` of the accumulated value.
    """
    inc = np.diff(np.asarray(values, dtype=float))
    if inc.size == 0:
        return False, []
    total = max(float(values[-1]), 1e-300)
    return bool(inc[-1] > rel_increment * total), inc.tolist()


def orthonormalize_h(M):
    """Modified Gram-Schmidt (one re-orthogonalization pass) in the M metric.

    Returns H with H^T M H = I; column j expresses the j-th orthonormal
    vector in the retained eigenbasis.
    """
    k = M.n_basis
    A = M.matrix
    H = np.zeros((k, k))
    for j in range(k):
        v = np.zeros(k)
        v[j] = 1.0
        for _ in range(2):  # MGS + re-orthogonalization
            for i in range(j):
                v -= (H[:, i] @ (A @ v)) * H[:, i]
        nrm = np.sqrt(v @ A @ v)
        if not np.isfinite(nrm) or nrm < 1e-14:
            raise RuntimeError(f"loss of rank in Gram-Schmidt at column {j}")
        H[:, j] = v / nrm
    return H


def gram_residual(H, M):
    return float(np.max(np.abs(H.T @ M.matrix @ H - np.eye(M.n_basis))))


# ---------------------------------------------------------------------------
# two-sided norm equivalence diagnostic
# ---------------------------------------------------------------------------


def norm_equivalence_diagnostic(model, theta0, design, n_basis_list, trials, kappa, rng):
    """Ratios || I[h] ||_{L2_lambda} / || h ||_{D^-kappa} over random unit
    directions, plus exact extremal bounds from the generalized eigenproblem
    of (Gram, scale-Gram).  Reported per truncation so stability under
    refinement is visible.
    """
    if trials < 10:
        raise ValueError("need at least 10 trial directions")
    es = model.es
    n_max = int(max(n_basis_list))
    cols = np.eye(es.size, n_max)
    batch = model.linearize(theta0, cols)
    G = spacetime_gram(batch, design, fisher=None)
    out = {"kappa": kappa, "per_k": []}
    for k in sorted(int(k) for k in n_basis_list):
        gk = G[:k, :k]
        dk = es.tau[:k] ** (-float(kappa))
        evals = eigh(gk, np.diag(dk), eigvals_only=True)
        z = rng.standard_normal((trials, k))
        hs = z / np.sqrt((z**2 * dk[None, :]).sum(axis=1))[:, None]
        ratios = np.sqrt(np.einsum("nk,kl,nl->n", hs, gk, hs))
        mode_ratios = np.sqrt(np.diag(gk) / dk)
        out["per_k"].append(
            {
                "n_basis": k,
                "ratio_min": float(ratios.min()),
                "ratio_max": float(ratios.max()),
                "eig_min": float(np.sqrt(max(evals[0], 0.0))),
                "eig_max": float(np.sqrt(evals[-1])),
                "cond": float(evals[-1] / max(evals[0], 1e-300)),
                "mode_ratios": mode_ratios.tolist(),
            }
        )
    last = out["per_k"][-1]
    out["ratio_min"] = last["ratio_min"]
    out["ratio_max"] = last["ratio_max"]
    return out
