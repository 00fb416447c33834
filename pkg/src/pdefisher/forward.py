"""Forward maps of the shipped evolution models and their linearizations.

* heat flow (closed form, the linear oracle model)
* reaction-diffusion u_t - Lap u = f(u) with compactly supported smooth f
* incompressible 2D Navier-Stokes in vorticity-streamfunction form

Nonlinear solves use a fourth-order exponential integrator (the stiff
Laplacian is integrated exactly; phi-coefficients by the standard contour
quadrature).  Linearized flows are co-integrated with the base flow, i.e.
the tangent scheme is the exact derivative of the discrete step, so
finite-difference consistency checks see a clean O(s^2) remainder.

Time meshes are uniform by default; geometrically graded meshes (small
steps near t = 0) are available because space-time Gram integrals of
linearized flows have e^{-2 lambda t} boundary layers that a uniform
Simpson rule cannot resolve for stiff modes.
"""

import numpy as np

from . import _kernels as kernels
from .spectral import (
    DIV_FREE,
    FourierCoeffs,
    coeffs_from_values,
    values_from_coeffs,
)


class TimeMesh:
    """Stored time nodes grouped in uniform blocks, with Simpson weights."""

    def __init__(self, nodes, blocks):
        self.nodes = np.asarray(nodes, dtype=float)
        self.blocks = blocks  # list of (first_node_index, n_steps, h)
        self.weights = self._simpson_weights()

    @classmethod
    def uniform(cls, T, m):
        if m % 2 or m < 4:
            raise ValueError("uniform mesh needs an even number >= 4 of intervals")
        nodes = np.linspace(0.0, T, m + 1)
        return cls(nodes, [(0, m, T / m)])

    @classmethod
    def graded(cls, T, levels, steps_per_block=16):
        """Geometric blocks [0, T 2^-levels], [T 2^-levels, T 2^-levels+1], ..., [T/2, T]."""
        if steps_per_block % 2 or steps_per_block < 4:
            raise ValueError("steps per block must be even and >= 4")
        edges = [0.0] + [T * 2.0 ** (-m) for m in range(levels, -1, -1)]
        nodes = [0.0]
        blocks = []
        for a, b in zip(edges[:-1], edges[1:]):
            h = (b - a) / steps_per_block
            blocks.append((len(nodes) - 1, steps_per_block, h))
            nodes.extend(a + h * np.arange(1, steps_per_block + 1))
        nodes = np.asarray(nodes)
        nodes[-1] = T
        return cls(nodes, blocks)

    @property
    def T(self):
        return float(self.nodes[-1])

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    def _simpson_weights(self):
        w = np.zeros_like(self.nodes)
        for i0, nsteps, h in self.blocks:
            bw = np.zeros(nsteps + 1)
            bw[0] = bw[-1] = 1.0
            bw[1:-1:2] = 4.0
            bw[2:-1:2] = 2.0
            w[i0 : i0 + nsteps + 1] += bw * (h / 3.0)
        return w

    def window_slice(self, t0, t1, rtol=1e-9):
        """Node index range covering [t0, t1]; endpoints must be nodes."""
        i0 = int(np.argmin(np.abs(self.nodes - t0)))
        i1 = int(np.argmin(np.abs(self.nodes - t1)))
        if abs(self.nodes[i0] - t0) > rtol * max(1.0, self.T) or abs(
            self.nodes[i1] - t1
        ) > rtol * max(1.0, self.T):
            raise ValueError("window endpoints must coincide with mesh nodes")
        return i0, i1

    def window_weights(self, i0, i1):
        """Composite Simpson weights for the node subrange [i0, i1]."""
        sub = self.nodes[i0 : i1 + 1]
        if sub.shape[0] < 3 or (sub.shape[0] - 1) % 2:
            raise ValueError("window needs an even number >= 2 of intervals")
        w = np.zeros_like(sub)
        for a in range(0, sub.shape[0] - 2, 2):
            t0, t1, t2 = sub[a], sub[a + 1], sub[a + 2]
            # quadratic through three (possibly non-equidistant) nodes
            h0, h1 = t1 - t0, t2 - t1
            c = (h0 + h1) / 6.0
            w[a] += c * (2.0 - h1 / h0)
            w[a + 1] += c * (h0 + h1) ** 2 / (h0 * h1)
            w[a + 2] += c * (2.0 - h0 / h1)
        return w


class SpaceTimeField:
    """Coefficient snapshots of a space-time field on a time mesh."""

    def __init__(self, es, mesh, data):
        data = np.asarray(data, dtype=float)
        if data.shape != (mesh.n_nodes, es.size):
            raise ValueError("snapshot array does not match mesh/eigensystem")
        self.es = es
        self.mesh = mesh
        self.data = data

    def coeffs_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_range(t)
        return kernels.interp_coeffs(self.mesh.nodes, self.data, t)

    def evaluate(self, t, x):
        """Values at scattered points: exact Fourier sum in space, cubic in time."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self._check_range(t)
        if self.es.subspace == DIV_FREE:
            return kernels.eval_vector(
                self.mesh.nodes, self.data, self.es.kvecs, self.es.kind,
                self.es.dirs, t, x,
            )
        return kernels.eval_scalar(
            self.mesh.nodes, self.data, self.es.kvecs, self.es.kind, t, x
        )

    def _check_range(self, t):
        if np.any(t < -1e-12) or np.any(t > self.mesh.T + 1e-12):
            raise ValueError("evaluation time outside [0, T]")

    def squared_l2_profile(self):
        """Spatial L^2 norm squared at every node (Parseval)."""
        return np.einsum("tm,tm->t", self.data, self.data)

    def spacetime_l2(self):
        """L^2([0,T] x Omega) norm via the mesh quadrature."""
        return float(np.sqrt(self.mesh.weights @ self.squared_l2_profile()))

    def save(self, path_stem, model_kind="unknown"):
        """Write <stem>.json (header) and <stem>.f64 (little-endian snapshots).

        The binary holds the node times followed by the row-major snapshot
        matrix; the sidecar records shapes and the eigensystem identity.
        """
        import json

        header = {
            "model": model_kind,
            "T": self.mesh.T,
            "M": self.mesh.n_nodes - 1,
            "grid": {"d": self.es.d, "K": self.es.kmax, "subspace": self.es.subspace,
                     "components": self.es.p},
            "blocks": [[int(i0), int(n), float(h)] for i0, n, h in self.mesh.blocks],
            "n_modes": self.es.size,
            "dtype": "<f8",
            "layout": "nodes, then row-major snapshots (n_nodes x n_modes)",
        }
        with open(f"{path_stem}.json", "w") as fh:
            json.dump(header, fh, sort_keys=True, indent=2)
        with open(f"{path_stem}.f64", "wb") as fh:
            self.mesh.nodes.astype("<f8").tofile(fh)
            self.data.astype("<f8").tofile(fh)

    @classmethod
    def load(cls, path_stem):
        import json

        from .spectral import build_eigensystem

        with open(f"{path_stem}.json") as fh:
            header = json.load(fh)
        g = header["grid"]
        es = build_eigensystem(g["d"], g["K"], g["subspace"])
        raw = np.fromfile(f"{path_stem}.f64", dtype="<f8")
        n_nodes = header["M"] + 1
        nodes = raw[:n_nodes]
        data = raw[n_nodes:].reshape(n_nodes, header["n_modes"])
        mesh = TimeMesh(nodes, [tuple(b) for b in header["blocks"]])
        return cls(es, mesh, data)


class SpaceTimeBatch:
    """Batch of fields sharing mesh and eigensystem; data (n_nodes, nm, B)."""

    def __init__(self, es, mesh, data):
        self.es = es
        self.mesh = mesh
        self.data = data

    @property
    def n_fields(self):
        return self.data.shape[2]

    def field(self, b):
        return SpaceTimeField(self.es, self.mesh, np.ascontiguousarray(self.data[:, :, b]))


def evaluate_field(field, t, x):
    return field.evaluate(t, x)


# ---------------------------------------------------------------------------
# exponential integrator machinery
# ---------------------------------------------------------------------------


def _etdrk4_coeffs(h, lin, n_contour=32):
    """Cox-Matthews ETDRK4 coefficients for diagonal linear part ``lin``.

    phi-functions evaluated by averaging over a complex contour around h*lin,
    which is stable through lin = 0.
    """
    z0 = h * lin
    roots = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
    z = z0[..., None] + roots
    ez = np.exp(z)
    q = h * np.mean((np.exp(z / 2.0) - 1.0) / z, axis=-1).real
    f1 = h * np.mean((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z**3, axis=-1).real
    f2 = h * np.mean((2.0 + z + ez * (z - 2.0)) / z**3, axis=-1).real
    f3 = h * np.mean((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z**3, axis=-1).real
    return {
        "E": np.exp(z0),
        "E2": np.exp(z0 / 2.0),
        "Q": q,
        "f1": f1,
        "f2": f2,
        "f3": f3,
    }


def _etdrk4_step(u, nonlin, c):
    """One ETDRK4 step of u' = L u + N(u) with precomputed coefficients."""
    n0 = nonlin(u)
    a = c["E2"] * u + c["Q"] * n0
    n1 = nonlin(a)
    b = c["E2"] * u + c["Q"] * n1
    n2 = nonlin(b)
    cc = c["E2"] * a + c["Q"] * (2.0 * n2 - n0)
    n3 = nonlin(cc)
    return c["E"] * u + c["f1"] * n0 + 2.0 * c["f2"] * (n1 + n2) + c["f3"] * n3


def _etdrk4_pair_step(u, v, nonlin, dnonlin, c):
    """Co-integrated step of the base state u and tangent columns v.

    The tangent update is the exact Jacobian-vector product of the base
    step: stage potentials come from the base stages.
    """
    n0 = nonlin(u)
    a = c["E2"] * u + c["Q"] * n0
    n1 = nonlin(a)
    b = c["E2"] * u + c["Q"] * n1
    n2 = nonlin(b)
    cc = c["E2"] * a + c["Q"] * (2.0 * n2 - n0)
    n3 = nonlin(cc)
    u_new = c["E"] * u + c["f1"] * n0 + 2.0 * c["f2"] * (n1 + n2) + c["f3"] * n3

    m0 = dnonlin(u, v)
    va = c["E2"] * v + c["Q"] * m0
    m1 = dnonlin(a, va)
    vb = c["E2"] * v + c["Q"] * m1
    m2 = dnonlin(b, vb)
    vc = c["E2"] * va + c["Q"] * (2.0 * m2 - m0)
    m3 = dnonlin(cc, vc)
    v_new = c["E"] * v + c["f1"] * m0 + 2.0 * c["f2"] * (m1 + m2) + c["f3"] * m3
    return u_new, v_new


# ---------------------------------------------------------------------------
# heat flow (closed form)
# ---------------------------------------------------------------------------


class HeatModel:
    """u_t = Lap u; coefficientwise decay e^(-lambda t), exact at any node."""

    kind = "heat"

    def __init__(self, es, T=1.0, mesh=None):
        self.es = es
        self.mesh = mesh if mesh is not None else TimeMesh.uniform(T, 256)
        if abs(self.mesh.T - T) > 1e-12:
            raise ValueError("mesh horizon does not match T")
        self.T = float(T)

    def solve(self, theta):
        data = np.exp(-np.outer(self.mesh.nodes, self.es.lam)) * theta.data[None, :]
        return SpaceTimeField(self.es, self.mesh, data)

    def linearize(self, theta0, h):
        # linear model: the linearization is the flow itself
        if isinstance(h, FourierCoeffs):
            return self.solve(h)
        decay = np.exp(-np.outer(self.mesh.nodes, self.es.lam))
        data = decay[:, :, None] * np.asarray(h)[None, :, :]
        return SpaceTimeBatch(self.es, self.mesh, data)


def solve_heat_exact(theta, T, mesh=None):
    model = HeatModel(theta.es, T=T, mesh=mesh)
    return model.solve(theta)


# ---------------------------------------------------------------------------
# reaction-diffusion
# ---------------------------------------------------------------------------


class BumpReaction:
    """f(u) = A u (1 - u^2) chi(u), chi a C^inf bump supported on [-R, R]."""

    def __init__(self, amplitude=2.0, radius=2.5):
        self.amplitude = float(amplitude)
        self.radius = float(radius)

    def _chi(self, u):
        r2 = (u / self.radius) ** 2
        inside = r2 < 1.0 - 2e-3  # chi underflows to exactly 0 beyond this
        g = np.where(inside, 1.0 / np.where(inside, 1.0 - r2, 1.0), 0.0)
        chi = np.where(inside, np.exp(1.0 - g), 0.0)
        return chi, g, inside

    def f(self, u):
        u = np.asarray(u, dtype=float)
        chi, _, _ = self._chi(u)
        return self.amplitude * u * (1.0 - u * u) * chi

    def df(self, u):
        u = np.asarray(u, dtype=float)
        chi, g, inside = self._chi(u)
        r = self.radius
        gp = np.where(inside, (2.0 * u / r**2) * g * g, 0.0)
        chip = -gp * chi
        return self.amplitude * ((1.0 - 3.0 * u * u) * chi + u * (1.0 - u * u) * chip)

    def d2f(self, u):
        u = np.asarray(u, dtype=float)
        chi, g, inside = self._chi(u)
        r = self.radius
        gp = np.where(inside, (2.0 * u / r**2) * g * g, 0.0)
        gpp = np.where(inside, (2.0 / r**2) * g * g + (8.0 * u * u / r**4) * g**3, 0.0)
        chip = -gp * chi
        chipp = (gp * gp - gpp) * chi
        return self.amplitude * (
            -6.0 * u * chi
            + 2.0 * (1.0 - 3.0 * u * u) * chip
            + u * (1.0 - u * u) * chipp
        )


class ReactionDiffusionModel:
    kind = "rd"

    def __init__(self, es, T=1.0, reaction=None, mesh=None, substeps=1, grid_n=None):
        if es.subspace == DIV_FREE:
            raise ValueError("reaction-diffusion is scalar")
        self.es = es
        self.T = float(T)
        self.reaction = reaction if reaction is not None else BumpReaction()
        self.mesh = mesh if mesh is not None else TimeMesh.uniform(T, 256)
        if abs(self.mesh.T - T) > 1e-12:
            raise ValueError("mesh horizon does not match T")
        self.substeps = int(substeps)
        self.grid_n = grid_n if grid_n is not None else es.min_grid_points(dealias=True)

    def _nonlin(self, u):
        vals = values_from_coeffs(self.es, u, self.grid_n)
        return coeffs_from_values(self.es, self.reaction.f(vals))

    def _dnonlin(self, u, v):
        base_vals = values_from_coeffs(self.es, u, self.grid_n)
        fp = self.reaction.df(base_vals)
        tvals = values_from_coeffs(self.es, np.moveaxis(v, -1, 0), self.grid_n)
        prod = fp[None, ...] * tvals
        return np.moveaxis(coeffs_from_values(self.es, prod), 0, -1)

    def _march(self, u0, v0=None):
        lin = -self.es.lam
        n_nodes = self.mesh.n_nodes
        snaps = np.empty((n_nodes, self.es.size))
        snaps[0] = u0
        vsnaps = None
        v = None
        if v0 is not None:
            vsnaps = np.empty((n_nodes, self.es.size, v0.shape[1]))
            vsnaps[0] = v0
            v = v0.copy()
        u = u0.copy()
        coeff_cache = {}
        for i0, nsteps, h_store in self.mesh.blocks:
            h = h_store / self.substeps
            if h not in coeff_cache:
                coeff_cache[h] = _etdrk4_coeffs(h, lin)
            c = coeff_cache[h]
            cv = None
            if v is not None:
                cv = {k: (a[:, None] if np.ndim(a) else a) for k, a in c.items()}
            for s in range(nsteps):
                for _ in range(self.substeps):
                    if v is None:
                        u = _etdrk4_step(u, self._nonlin, c)
                    else:
                        n0 = self._nonlin(u)
                        a = c["E2"] * u + c["Q"] * n0
                        n1 = self._nonlin(a)
                        b = c["E2"] * u + c["Q"] * n1
                        n2 = self._nonlin(b)
                        cc = c["E2"] * a + c["Q"] * (2.0 * n2 - n0)
                        n3 = self._nonlin(cc)
                        m0 = self._dnonlin(u, v)
                        va = cv["E2"] * v + cv["Q"] * m0
                        m1 = self._dnonlin(a, va)
                        vb = cv["E2"] * v + cv["Q"] * m1
                        m2 = self._dnonlin(b, vb)
                        vc = cv["E2"] * va + cv["Q"] * (2.0 * m2 - m0)
                        m3 = self._dnonlin(cc, vc)
                        u = c["E"] * u + c["f1"] * n0 + 2.0 * c["f2"] * (n1 + n2) + c["f3"] * n3
                        v = cv["E"] * v + cv["f1"] * m0 + 2.0 * cv["f2"] * (m1 + m2) + cv["f3"] * m3
                if not np.all(np.isfinite(u)):
                    raise RuntimeError(f"reaction-diffusion solve blew up at t={self.mesh.nodes[i0+s+1]:.4g}")
                snaps[i0 + s + 1] = u
                if v is not None:
                    vsnaps[i0 + s + 1] = v
        return snaps, vsnaps

    def solve(self, theta):
        snaps, _ = self._march(theta.data)
        return SpaceTimeField(self.es, self.mesh, snaps)

    def linearize(self, theta0, h):
        """Tangent flow U_t = Lap U + f'(u_theta0) U, U(0) = h."""
        single = isinstance(h, FourierCoeffs)
        cols = h.data[:, None] if single else np.asarray(h, dtype=float)
        _, vsnaps = self._march(theta0.data, cols)
        if single:
            return SpaceTimeField(self.es, self.mesh, np.ascontiguousarray(vsnaps[:, :, 0]))
        return SpaceTimeBatch(self.es, self.mesh, vsnaps)


def solve_rd(model, theta):
    return model.solve(theta)


def linearize_rd(model, theta0, h):
    return model.linearize(theta0, h)


# ---------------------------------------------------------------------------
# 2D incompressible Navier-Stokes (vorticity-streamfunction)
# ---------------------------------------------------------------------------


class NavierStokesModel:
    kind = "ns"

    def __init__(self, es, viscosity, T=1.0, forcing=None, mesh=None, substeps=1, grid_n=None):
        if es.subspace != DIV_FREE:
            raise ValueError("Navier-Stokes needs the divergence-free eigensystem")
        self.es = es
        self.nu = float(viscosity)
        self.T = float(T)
        self.mesh = mesh if mesh is not None else TimeMesh.uniform(T, 256)
        if abs(self.mesh.T - T) > 1e-12:
            raise ValueError("mesh horizon does not match T")
        self.substeps = int(substeps)
        self.n = grid_n if grid_n is not None else es.min_grid_points(dealias=True)

        n = self.n
        k = np.fft.fftfreq(n, d=1.0 / n)
        self.kx = k[:, None] * np.ones((1, n))
        self.ky = np.ones((n, 1)) * k[None, :]
        self.lam = 4.0 * np.pi**2 * (self.kx**2 + self.ky**2)
        self.mask = (np.abs(self.kx) <= es.kmax) & (np.abs(self.ky) <= es.kmax)
        self.lam_safe = np.where(self.lam > 0, self.lam, 1.0)

        # eigen index -> lattice positions for velocity <-> vorticity maps
        shape = (n, n)
        self._pos = np.array(
            [
                np.ravel_multi_index((int(kv[0]) % n, int(kv[1]) % n), shape)
                for kv in es.kvecs
            ],
            dtype=np.int64,
        )
        self._neg = np.array(
            [
                np.ravel_multi_index(((-int(kv[0])) % n, (-int(kv[1])) % n), shape)
                for kv in es.kvecs
            ],
            dtype=np.int64,
        )
        self._two_pi_absk = 2.0 * np.pi * np.sqrt((es.kvecs**2).sum(axis=1).astype(float))
        self._is_cos = es.kind == 1

        if forcing is not None and forcing.es != es:
            raise ValueError("forcing must live in the model eigensystem")
        self.forcing_hat = None
        if forcing is not None and np.any(forcing.data):
            self.forcing_hat = self._vorticity_lattice(self._curl_coeffs(forcing.data))

    # -- coefficient plumbing ------------------------------------------------

    def _curl_coeffs(self, vel_coeffs):
        """Scalar vorticity (cos, sin) coefficients from div-free velocity coeffs."""
        w = np.empty_like(vel_coeffs)
        cos_idx = self._is_cos
        # curl(dir * sqrt2 cos) = -2 pi |k| sqrt2 sin ; curl(dir * sqrt2 sin) = +2 pi |k| sqrt2 cos
        w[cos_idx] = self._two_pi_absk[~cos_idx] * vel_coeffs[~cos_idx]
        w[~cos_idx] = -self._two_pi_absk[cos_idx] * vel_coeffs[cos_idx]
        return w

    def _vorticity_lattice(self, w_coeffs):
        """Realified vorticity coefficients -> numpy-convention DFT array."""
        n = self.n
        flat = np.zeros(n * n, dtype=complex)
        amp = np.where(self._is_cos, w_coeffs, 0.0) / np.sqrt(2.0) + 1j * np.where(
            self._is_cos, 0.0, -w_coeffs
        ) / np.sqrt(2.0)
        np.add.at(flat, self._pos, amp)
        np.add.at(flat, self._neg, np.conj(amp))
        return flat.reshape(n, n) * (n * n)

    def _velocity_coeffs(self, what):
        """DFT vorticity array(s) -> div-free velocity coefficients (..., nm)."""
        n = self.n
        flat = what.reshape(what.shape[:-2] + (n * n,)) / (n * n)
        a = flat[..., self._pos]
        w_cos = np.sqrt(2.0) * a.real
        w_sin = -np.sqrt(2.0) * a.imag
        out = np.empty(what.shape[:-2] + (self.es.size,))
        cos_idx = self._is_cos
        out[..., cos_idx] = -w_sin[..., cos_idx] / self._two_pi_absk[cos_idx]
        out[..., ~cos_idx] = w_cos[..., ~cos_idx] / self._two_pi_absk[~cos_idx]
        return out

    # -- spectral operators ----------------------------------------------------

    def _velocity_values(self, what):
        psi = np.where(self.mask, -what / self.lam_safe, 0.0)
        psi[..., 0, 0] = 0.0
        u1 = np.fft.ifft2(-2j * np.pi * self.ky * psi).real
        u2 = np.fft.ifft2(2j * np.pi * self.kx * psi).real
        return u1, u2

    def _nonlin(self, what):
        u1, u2 = self._velocity_values(what)
        wx = np.fft.ifft2(2j * np.pi * self.kx * what).real
        wy = np.fft.ifft2(2j * np.pi * self.ky * what).real
        adv = np.fft.fft2(u1 * wx + u2 * wy)
        out = np.where(self.mask, -adv, 0.0)
        if self.forcing_hat is not None:
            out = out + self.forcing_hat
        return out

    def _dnonlin(self, what, vhat):
        u1, u2 = self._velocity_values(what)
        wx = np.fft.ifft2(2j * np.pi * self.kx * what).real
        wy = np.fft.ifft2(2j * np.pi * self.ky * what).real
        tu1, tu2 = self._velocity_values(vhat)
        twx = np.fft.ifft2(2j * np.pi * self.kx * vhat).real
        twy = np.fft.ifft2(2j * np.pi * self.ky * vhat).real
        adv = np.fft.fft2(u1 * twx + u2 * twy + tu1 * wx + tu2 * wy)
        return np.where(self.mask, -adv, 0.0)

    # -- time marching ---------------------------------------------------------

    def _march(self, w0_hat, v0_hat=None):
        lin = -self.nu * self.lam
        n_nodes = self.mesh.n_nodes
        snaps = np.empty((n_nodes, self.es.size))
        snaps[0] = self._velocity_coeffs(w0_hat)
        vsnaps = None
        v = None
        if v0_hat is not None:
            vsnaps = np.empty((n_nodes, self.es.size, v0_hat.shape[0]))
            vsnaps[0] = np.moveaxis(self._velocity_coeffs(v0_hat), 0, -1)
            v = v0_hat.copy()
        u = w0_hat.copy()
        cache = {}
        for i0, nsteps, h_store in self.mesh.blocks:
            h = h_store / self.substeps
            if h not in cache:
                cache[h] = _etdrk4_coeffs(h, lin)
            c = cache[h]
            for s in range(nsteps):
                for _ in range(self.substeps):
                    if v is None:
                        u = _etdrk4_step(u, self._nonlin, c)
                    else:
                        u, v = _etdrk4_pair_step(u, v, self._nonlin, self._dnonlin, c)
                if not np.all(np.isfinite(u)):
                    raise RuntimeError(
                        f"Navier-Stokes solve blew up at t={self.mesh.nodes[i0+s+1]:.4g}"
                    )
                snaps[i0 + s + 1] = self._velocity_coeffs(u)
                if v is not None:
                    vsnaps[i0 + s + 1] = np.moveaxis(self._velocity_coeffs(v), 0, -1)
        return snaps, vsnaps

    def solve(self, theta):
        """Velocity trajectory for initial condition theta (div-free coeffs)."""
        w0 = self._vorticity_lattice(self._curl_coeffs(theta.data))
        snaps, _ = self._march(w0)
        return SpaceTimeField(self.es, self.mesh, snaps)

    def linearize(self, theta0, h):
        single = isinstance(h, FourierCoeffs)
        cols = h.data[:, None] if single else np.asarray(h, dtype=float)
        w0 = self._vorticity_lattice(self._curl_coeffs(theta0.data))
        v0 = np.stack(
            [
                self._vorticity_lattice(self._curl_coeffs(cols[:, b]))
                for b in range(cols.shape[1])
            ],
            axis=0,
        )
        _, vsnaps = self._march(w0, v0)
        if single:
            return SpaceTimeField(self.es, self.mesh, np.ascontiguousarray(vsnaps[:, :, 0]))
        return SpaceTimeBatch(self.es, self.mesh, vsnaps)

    def lattice_divergence(self, field):
        """Max |div u| over lattice coefficients of reconstructed velocity.

        Zero by construction (velocity lives in the div-free basis); exposed
        as the projection diagnostic.
        """
        worst = 0.0
        for i in range(field.mesh.n_nodes):
            w_hat = self._vorticity_lattice(self._curl_coeffs(field.data[i]))
            psi = np.where(self.mask, -w_hat / self.lam_safe, 0.0)
            u1_hat = -2j * np.pi * self.ky * psi
            u2_hat = 2j * np.pi * self.kx * psi
            div = 2j * np.pi * (self.kx * u1_hat + self.ky * u2_hat)
            scale = max(np.abs(u1_hat).max(), np.abs(u2_hat).max(), 1e-300)
            worst = max(worst, float(np.abs(div).max()) / scale)
        return worst

    def energy_balance_residual(self, field):
        """|E(T) - E(0) + nu int ||grad u||^2 - int <f,u>| / T (f=0 supported)."""
        if self.forcing_hat is not None:
            raise NotImplementedError("energy residual implemented for f = 0")
        energy = 0.5 * field.squared_l2_profile()
        enstrophy = np.einsum("m,tm->t", self.es.lam, field.data**2)
        lhs = energy[-1] - energy[0]
        rhs = -self.nu * float(field.mesh.weights @ enstrophy)
        return abs(lhs - rhs) / field.mesh.T


def solve_ns(model, theta):
    return model.solve(theta)


def linearize_ns(model, theta0, h):
    return model.linearize(theta0, h)


# ---------------------------------------------------------------------------
# directional differentiability diagnostic
# ---------------------------------------------------------------------------


def qmd_remainder_slope(model, theta0, h, s_grid):
    """Remainders rho(s) = || G(theta0 + s h) - G(theta0) - s I[h] ||_L2 and
    the log-log slope (2.0 for smooth models, identically 0 for linear ones).
    """
    s_grid = np.asarray(sorted(s_grid), dtype=float)
    if s_grid.size < 4:
        raise ValueError("need at least 4 perturbation sizes")
    base = model.solve(theta0)
    tangent = model.linearize(theta0, h)
    remainders = []
    for s in s_grid:
        pert = model.solve(theta0 + s * h)
        resid = pert.data - base.data - s * tangent.data
        val = float(np.sqrt(model.mesh.weights @ np.einsum("tm,tm->t", resid, resid)))
        remainders.append(val / np.sqrt(model.mesh.T))  # uniform design density 1/T
    remainders = np.array(remainders)
    good = remainders > 1e-14
    slope = float("nan")
    if good.sum() >= 2:
        slope = float(np.polyfit(np.log(s_grid[good]), np.log(remainders[good]), 1)[0])
    return {
        "s": s_grid.tolist(),
        "remainders": remainders.tolist(),
        "normalized": (remainders / s_grid).tolist(),
        "slope": slope,
    }
