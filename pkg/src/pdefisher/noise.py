"""Error densities q with sqrt(q) in H^1(R^p): evaluation, scores, sampling,
and the Fisher information matrix by quadrature.

The score convention is the total function -2 (grad sqrt q / sqrt q)(y),
set to zero wherever q(y) = 0 (densities whose sqrt belongs to H^1 admit a
gradient version vanishing on the zero set, so this is consistent).
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import PchipInterpolator
from scipy.stats import norm as _normal_dist

_QUAD_NODES = 24


class FisherMatrix:
    """Symmetric positive-definite p x p noise information matrix."""

    def __init__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        matrix = 0.5 * (matrix + matrix.T)
        evals, evecs = np.linalg.eigh(matrix)
        if evals.min() <= 0:
            raise ValueError(
                f"noise information matrix is not positive definite (min eig {evals.min():.3e})"
            )
        self.matrix = matrix
        self.evals = evals
        self.sqrt = (evecs * np.sqrt(evals)) @ evecs.T
        self.inv = (evecs / evals) @ evecs.T

    @property
    def p(self):
        return self.matrix.shape[0]

    def quad_form(self, values):
        """Pointwise y^T I y for values of shape (..., p)."""
        if self.p == 1:
            return float(self.matrix[0, 0]) * np.asarray(values) ** 2
        v = np.asarray(values)
        return np.einsum("...a,ab,...b->...", v, self.matrix, v)


class NoiseModel:
    """Base class; concrete families implement pdf/logpdf/sqrt_grad/sampling.

    support: None for all of R^p, else per-axis (lo, hi) bounds
    breakpoints: interior kink locations of sqrt(q) per axis (quadrature
    panels never straddle them)
    """

    family = "base"
    p = 1
    support = None
    breakpoints = ()

    def pdf(self, y):
        raise NotImplementedError

    def logpdf(self, y):
        q = self.pdf(y)
        with np.errstate(divide="ignore"):
            return np.log(q)

    def sqrt_grad(self, y):
        raise NotImplementedError

    def std_scale(self):
        raise NotImplementedError

    def sample(self, rng, n):
        raise NotImplementedError

    def params(self):
        return {}

    # -- quadrature helpers ------------------------------------------------

    def quad_halfwidth(self):
        # truncation of all-space quadratures; families with heavier-than-
        # Gaussian tails override so the cut mass stays below 1e-13
        return 12.0 * self.std_scale()

    def quad_domain(self):
        if self.support is not None:
            return self.support
        r = self.quad_halfwidth()
        return [(-r, r)] * self.p

    def score(self, y):
        """-2 grad sqrt(q) / sqrt(q), zero on {q = 0}."""
        y = np.asarray(y, dtype=float)
        q = self.pdf(y)
        g = self.sqrt_grad(y)
        sq = np.sqrt(np.where(q > 0, q, 1.0))
        if self.p == 1:
            return np.where(q > 0, -2.0 * g / sq, 0.0)
        return np.where(q[..., None] > 0, -2.0 * g / sq[..., None], 0.0)


def _panels(lo, hi, breakpoints, n_panels):
    cuts = [lo] + [b for b in breakpoints if lo < b < hi] + [hi]
    edges = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(round(n_panels * (b - a) / (hi - lo))))
        edges.append(np.linspace(a, b, m + 1))
    return edges


def _gl_grid_1d(lo, hi, breakpoints, n_panels):
    xg, wg = leggauss(_QUAD_NODES)
    nodes, weights = [], []
    for edge in _panels(lo, hi, breakpoints, n_panels):
        a, b = edge[:-1], edge[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes.append((mid[:, None] + half[:, None] * xg[None, :]).ravel())
        weights.append((half[:, None] * wg[None, :]).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def _fisher_once(noise, n_panels):
    dom = noise.quad_domain()
    if noise.p == 1:
        y, w = _gl_grid_1d(dom[0][0], dom[0][1], noise.breakpoints, n_panels)
        g = noise.sqrt_grad(y)
        return np.array([[4.0 * np.sum(w * g * g)]])
    y1, w1 = _gl_grid_1d(dom[0][0], dom[0][1], (), n_panels)
    y2, w2 = _gl_grid_1d(dom[1][0], dom[1][1], (), n_panels)
    yy = np.stack(np.meshgrid(y1, y2, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = (w1[:, None] * w2[None, :]).ravel()
    g = noise.sqrt_grad(yy)
    mat = 4.0 * np.einsum("n,na,nb->ab", ww, g, g)
    return mat


def fisher_matrix(noise, rel_tol=1e-10, max_doublings=4):
    """4 int (grad sqrt q)(grad sqrt q)^T dy by panel-doubled Gauss-Legendre."""
    n_panels = 32 if noise.p == 1 else 24
    prev = _fisher_once(noise, n_panels)
    for _ in range(max_doublings):
        n_panels *= 2
        cur = _fisher_once(noise, n_panels)
        err = np.max(np.abs(cur - prev)) / max(np.max(np.abs(cur)), 1e-300)
        prev = cur
        if err < rel_tol:
            return FisherMatrix(cur)
    raise RuntimeError(f"Fisher quadrature did not converge (last rel change {err:.2e})")


def score(noise, y):
    return noise.score(y)


def sample_noise(noise, rng, n):
    """n i.i.d. draws from q; deterministic given the generator state."""
    if n < 1:
        raise ValueError("need n >= 1")
    return noise.sample(rng, n)


def sqrt_density_h1_check(noise, eps_grid=None, probe_points=2**17):
    """Check sqrt(q) in H^1 and the zero-set gradient convention.

    h1_energy is int |grad sqrt q|^2 from the supplied gradient.  A
    difference-quotient probe E(eps) = int ((sqrt q(y+eps) - sqrt q(y))/eps)^2
    must stabilize near h1_energy; boundary jumps (uniform density) make it
    grow like 1/eps and the model is rejected.
    """
    if noise.p != 1:
        raise ValueError("H1 probe implemented for p = 1 densities")
    dom = noise.quad_domain()[0]
    lo, hi = dom[0] - 1.0, dom[1] + 1.0
    y = np.linspace(lo, hi, probe_points)
    dy = y[1] - y[0]
    sq = np.sqrt(noise.pdf(y))
    if eps_grid is None:
        eps_grid = [2.0 ** (-i) for i in range(4, 11)]
    energies = []
    for eps in eps_grid:
        shift = int(round(eps / dy))
        eps_eff = shift * dy
        diff = (sq[shift:] - sq[:-shift]) / eps_eff
        energies.append(float(np.sum(diff**2) * dy))
    tail_growth = energies[-1] / max(energies[-3], 1e-300)

    # energy from the supplied gradient: panel quadrature honoring kinks
    yq, wq = _gl_grid_1d(dom[0], dom[1], noise.breakpoints, 128)
    gq = noise.sqrt_grad(yq)
    h1_energy = float(np.sum(wq * gq**2))

    g = noise.sqrt_grad(y)
    q = noise.pdf(y)
    zero_set = q == 0.0
    zero_consistency = float(np.max(np.abs(g[zero_set]))) if zero_set.any() else 0.0

    # jump mass makes E(eps) double per halving of eps
    rejected = bool(tail_growth > 1.6) or not np.isfinite(h1_energy)
    if rejected:
        h1_energy = float("inf")
    return {
        "h1_energy": h1_energy,
        "zero_set_consistency": zero_consistency,
        "probe_energies": energies,
        "probe_eps": list(eps_grid),
        "rejected": rejected,
    }


# ---------------------------------------------------------------------------
# shipped families
# ---------------------------------------------------------------------------


class _TabulatedSampler:
    """Inverse-CDF sampler: monotone cubic interpolation of 2^14 CDF knots."""

    def __init__(self, cdf, lo, hi, knots=2**14):
        y = np.linspace(lo, hi, knots)
        c = cdf(y)
        keep = np.concatenate(([True], np.diff(c) > 0))
        y, c = y[keep], c[keep]
        self._quantile = PchipInterpolator(c, y, extrapolate=False)
        self._clo, self._chi = c[0], c[-1]

    def draw(self, rng, n):
        u = rng.uniform(self._clo, self._chi, size=n)
        return np.asarray(self._quantile(u))


class GaussianNoise(NoiseModel):
    family = "gaussian"

    def __init__(self, variance=1.0):
        if variance <= 0:
            raise ValueError("variance must be positive")
        self.variance = float(variance)
        self.sigma = float(np.sqrt(variance))
        # samplers are stateless lookup tables, built once so threaded
        # replicate loops never construct them concurrently
        self._sampler = _TabulatedSampler(
            lambda t: _normal_dist.cdf(t, scale=self.sigma),
            -14 * self.sigma,
            14 * self.sigma,
        )

    def params(self):
        return {"variance": self.variance}

    def std_scale(self):
        return self.sigma

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(-0.5 * y**2 / self.variance) / np.sqrt(2 * np.pi * self.variance)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        return -0.5 * y**2 / self.variance - 0.5 * np.log(2 * np.pi * self.variance)

    def sqrt_grad(self, y):
        y = np.asarray(y, dtype=float)
        return -0.5 * (y / self.variance) * np.sqrt(self.pdf(y))

    def sample(self, rng, n):
        return self._sampler.draw(rng, n)


class BivariateGaussianNoise(NoiseModel):
    family = "gaussian2"
    p = 2

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (2, 2):
            raise ValueError("covariance must be 2x2")
        self.cov = 0.5 * (cov + cov.T)
        self.prec = np.linalg.inv(self.cov)
        self.chol = np.linalg.cholesky(self.cov)
        self._norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(self.cov)))

    def params(self):
        return {"cov": self.cov.tolist()}

    def std_scale(self):
        return float(np.sqrt(np.max(np.diag(self.cov))))

    def quad_domain(self):
        r = 12.0 * np.sqrt(np.diag(self.cov))
        return [(-r[0], r[0]), (-r[1], r[1])]

    def pdf(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        quad = np.einsum("...a,ab,...b->...", y, self.prec, y)
        return self._norm * np.exp(-0.5 * quad)

    def logpdf(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        quad = np.einsum("...a,ab,...b->...", y, self.prec, y)
        return np.log(self._norm) - 0.5 * quad

    def sqrt_grad(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return -0.5 * (y @ self.prec) * np.sqrt(self.pdf(y))[..., None]

    def sample(self, rng, n):
        z = rng.standard_normal((n, 2))
        return z @ self.chol.T


class LaplaceNoise(NoiseModel):
    family = "laplace"
    breakpoints = (0.0,)

    def __init__(self, scale=1.0):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)
        b = self.scale
        cdf = lambda t: np.where(t < 0, 0.5 * np.exp(t / b), 1 - 0.5 * np.exp(-t / b))
        self._sampler = _TabulatedSampler(cdf, -20 * b, 20 * b)

    def params(self):
        return {"scale": self.scale}

    def std_scale(self):
        return float(np.sqrt(2.0) * self.scale)

    def quad_halfwidth(self):
        return 32.0 * self.scale  # e^-32 tail

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(-np.abs(y) / self.scale) / (2 * self.scale)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        return -np.abs(y) / self.scale - np.log(2 * self.scale)

    def sqrt_grad(self, y):
        y = np.asarray(y, dtype=float)
        return -np.sign(y) / (2 * self.scale) * np.sqrt(self.pdf(y))

    def sample(self, rng, n):
        return self._sampler.draw(rng, n)


class LogisticNoise(NoiseModel):
    family = "logistic"

    def __init__(self, scale=1.0):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)
        s = self.scale
        self._sampler = _TabulatedSampler(
            lambda t: 1.0 / (1.0 + np.exp(-t / s)), -30 * s, 30 * s
        )

    def params(self):
        return {"scale": self.scale}

    def std_scale(self):
        return float(self.scale * np.pi / np.sqrt(3.0))

    def quad_halfwidth(self):
        return 34.0 * self.scale

    def pdf(self, y):
        z = np.asarray(y, dtype=float) / self.scale
        sech2 = 1.0 / np.cosh(0.5 * z) ** 2
        return sech2 / (4 * self.scale)

    def logpdf(self, y):
        z = np.asarray(y, dtype=float) / self.scale
        return -2.0 * np.log(2 * np.cosh(0.5 * z)) - np.log(self.scale)

    def sqrt_grad(self, y):
        y = np.asarray(y, dtype=float)
        scr = np.tanh(0.5 * y / self.scale) / self.scale
        return -0.5 * scr * np.sqrt(self.pdf(y))

    def sample(self, rng, n):
        return self._sampler.draw(rng, n)


class CosineBumpNoise(NoiseModel):
    """q(y) = cos^2(pi y / 2) on [-1, 1]: compactly supported, sqrt kinked at the edges."""

    family = "cosine_bump"
    support = [(-1.0, 1.0)]
    breakpoints = ()

    def __init__(self):
        cdf = lambda t: 0.5 * (t + 1.0) + np.sin(np.pi * t) / (2 * np.pi)
        self._sampler = _TabulatedSampler(cdf, -1.0, 1.0)

    def params(self):
        return {}

    def std_scale(self):
        # variance = 1/3 - 2/pi^2
        return float(np.sqrt(1.0 / 3.0 - 2.0 / np.pi**2))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        inside = np.abs(y) <= 1.0
        return np.where(inside, np.cos(0.5 * np.pi * y) ** 2, 0.0)

    def sqrt_grad(self, y):
        y = np.asarray(y, dtype=float)
        inside = np.abs(y) < 1.0
        return np.where(inside, -0.5 * np.pi * np.sin(0.5 * np.pi * y), 0.0)

    def sample(self, rng, n):
        return self._sampler.draw(rng, n)


class UniformNoise(NoiseModel):
    """Uniform on [0, 1]: sqrt(q) jumps at the support boundary, so the
    location model is not quadratic-mean differentiable.  Shipped only as
    the rejection fixture for the H^1 probe."""

    family = "uniform"
    support = [(0.0, 1.0)]

    def params(self):
        return {}

    def std_scale(self):
        return float(np.sqrt(1.0 / 12.0))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y >= 0.0) & (y <= 1.0), 1.0, 0.0)

    def sqrt_grad(self, y):
        # a.e. pointwise derivative; misses the boundary jump mass on purpose
        return np.zeros_like(np.asarray(y, dtype=float))

    def sample(self, rng, n):
        return rng.uniform(0.0, 1.0, size=n)


_FAMILIES = {
    "gaussian": GaussianNoise,
    "gaussian2": BivariateGaussianNoise,
    "laplace": LaplaceNoise,
    "logistic": LogisticNoise,
    "cosine_bump": CosineBumpNoise,
    "uniform": UniformNoise,
}


def make_noise(family, **params):
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown noise family {family!r}") from None
    return cls(**params)


def validate_noise(noise, tol=1e-8):
    """Quadrature check of unit mass and zero mean."""
    dom = noise.quad_domain()
    if noise.p == 1:
        y, w = _gl_grid_1d(dom[0][0], dom[0][1], noise.breakpoints, 256)
        q = noise.pdf(y)
        mass = float(np.sum(w * q))
        mean = float(np.sum(w * y * q))
        return {"mass": mass, "mean": mean, "ok": abs(mass - 1) < tol and abs(mean) < tol}
    y1, w1 = _gl_grid_1d(dom[0][0], dom[0][1], (), 64)
    y2, w2 = _gl_grid_1d(dom[1][0], dom[1][1], (), 64)
    yy = np.stack(np.meshgrid(y1, y2, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = (w1[:, None] * w2[None, :]).ravel()
    q = noise.pdf(yy)
    mass = float(np.sum(ww * q))
    mean = np.abs(np.einsum("n,na->a", ww * q, yy)).max()
    return {"mass": mass, "mean": float(mean), "ok": abs(mass - 1) < tol and mean < tol}
