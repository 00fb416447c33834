"""Fourier analysis on the unit torus T^d (d in {1,2}).

Fields are represented by real coefficients in an orthonormal eigenbasis of
the periodic Laplacian: the constant mode, and sqrt(2)*cos(2 pi k.x) /
sqrt(2)*sin(2 pi k.x) pairs over a half lattice of wavevectors.  Three
subspaces are supported:

* ``full``      -- scalar fields, constant mode included, tau_j = 1 + lambda_j
* ``mean-zero`` -- scalar fields with zero mean, tau_j = 1 + lambda_j
* ``div-free``  -- mean-zero divergence-free vector fields on T^2 (p = 2),
                   basis k_perp/|k| times the scalar modes, tau_j = lambda_j

Eigenpairs are ordered by nondecreasing eigenvalue, ties broken
lexicographically on the wavevector and then cos before sin, so index maps
are reproducible across runs.
"""

import json

import numpy as np

FULL = "full"
MEAN_ZERO = "mean-zero"
DIV_FREE = "divergence-free-mean-zero"

_SUBSPACES = (FULL, MEAN_ZERO, DIV_FREE)

# kind codes for basis functions
KIND_CONST = 0
KIND_COS = 1
KIND_SIN = 2

TWO_PI = 2.0 * np.pi


class TorusGrid:
    """Uniform grid on [0,1)^d with n points per axis, for p components."""

    def __init__(self, d, n, p=1):
        if d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {d}")
        if n % 2 != 0 or n < 8:
            raise ValueError(f"points per axis must be even and >= 8, got {n}")
        if p < 1:
            raise ValueError("component count must be >= 1")
        self.d = d
        self.n = n
        self.p = p

    def axes(self):
        x = np.arange(self.n) / self.n
        return (x,) * self.d

    def meshgrid(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def supports_modes(self, kmax):
        # retained modes must not alias: n >= 2*kmax + 2
        return self.n >= 2 * kmax + 2


def _half_lattice(d, kmax):
    """Wavevectors k != 0 with |k_i| <= kmax, one per conjugate pair.

    Convention: first nonzero component positive; lexicographic order.
    """
    out = []
    if d == 1:
        for k1 in range(1, kmax + 1):
            out.append((k1,))
    else:
        for k1 in range(0, kmax + 1):
            for k2 in range(-kmax, kmax + 1):
                if k1 == 0 and k2 <= 0:
                    continue
                out.append((k1, k2))
        out.sort()
    return out


class EigenSystem:
    """Ordered eigensystem of the periodic Laplacian on a retained subspace.

    Attributes
    ----------
    kvecs : (nm, d) int array of wavevectors (zero vector for the constant)
    kind  : (nm,) array of KIND_* codes
    lam   : (nm,) eigenvalues 4 pi^2 |k|^2, nondecreasing
    tau   : (nm,) scale weights (1 + lam on scalar scales, lam on div-free)
    dirs  : (nm, 2) unit vectors k_perp/|k| for the div-free subspace, else None
    """

    def __init__(self, d, kmax, subspace, kvecs, kind, lam, tau, dirs=None, p=1):
        self.d = d
        self.kmax = kmax
        self.subspace = subspace
        self.kvecs = kvecs
        self.kind = kind
        self.lam = lam
        self.tau = tau
        self.dirs = dirs
        self.p = p

    @property
    def size(self):
        return self.lam.shape[0]

    def min_grid_points(self, dealias=False):
        """Smallest even grid resolving the retained modes.

        With ``dealias`` the grid resolves exact products of two retained
        fields (3/2-rule: n >= 3*kmax + 1).
        """
        need = 3 * self.kmax + 1 if dealias else 2 * self.kmax + 2
        n = max(8, need)
        if n % 2:
            n += 1
        return n

    def grid(self, dealias=False, n=None):
        if n is None:
            n = self.min_grid_points(dealias=dealias)
        g = TorusGrid(self.d, n, p=self.p)
        if not g.supports_modes(self.kmax):
            raise ValueError(f"grid n={n} aliases modes up to kmax={self.kmax}")
        return g

    def index_of(self, kvec, kind):
        """Index of a basis function, -1 if not retained."""
        kvec = tuple(int(c) for c in np.atleast_1d(kvec))
        return self._lookup.get((kvec, int(kind)), -1)

    def __eq__(self, other):
        return (
            isinstance(other, EigenSystem)
            and self.d == other.d
            and self.kmax == other.kmax
            and self.subspace == other.subspace
        )

    def __hash__(self):
        return hash((self.d, self.kmax, self.subspace))


def build_eigensystem(d, kmax, subspace=FULL):
    """Enumerate and sort the retained eigenpairs.

    div-free requires d = 2 and yields vector-valued (p = 2) modes
    k_perp/|k| * sqrt(2) cos/sin(2 pi k.x) with a spectral gap lambda_1 > 0.
    """
    if subspace not in _SUBSPACES:
        raise ValueError(f"unknown subspace {subspace!r}")
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    if subspace == DIV_FREE and d != 2:
        raise ValueError("divergence-free subspace requires d=2")
    if d not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {d}")

    rows = []  # (lam, kvec, kind)
    if subspace == FULL:
        rows.append((0.0, (0,) * d, KIND_CONST))
    for k in _half_lattice(d, kmax):
        lam = 4.0 * np.pi**2 * sum(c * c for c in k)
        rows.append((lam, k, KIND_COS))
        rows.append((lam, k, KIND_SIN))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))

    kvecs = np.array([r[1] for r in rows], dtype=np.int64).reshape(len(rows), d)
    kind = np.array([r[2] for r in rows], dtype=np.int8)
    lam = np.array([r[0] for r in rows])

    if subspace == DIV_FREE:
        tau = lam.copy()
        norms = np.sqrt((kvecs**2).sum(axis=1)).astype(float)
        dirs = np.stack([-kvecs[:, 1] / norms, kvecs[:, 0] / norms], axis=1)
        es = EigenSystem(d, kmax, subspace, kvecs, kind, lam, tau, dirs=dirs, p=2)
    else:
        tau = 1.0 + lam
        es = EigenSystem(d, kmax, subspace, kvecs, kind, lam, tau, p=1)

    es._lookup = {
        (tuple(int(c) for c in kvecs[j]), int(kind[j])): j for j in range(len(rows))
    }
    return es


class FourierCoeffs:
    """A real field (or div-free vector field) as coefficients in an eigensystem."""

    def __init__(self, es, data):
        data = np.asarray(data, dtype=float)
        if data.shape != (es.size,):
            raise ValueError(f"expected {es.size} coefficients, got shape {data.shape}")
        self.es = es
        self.data = data

    @classmethod
    def zeros(cls, es):
        return cls(es, np.zeros(es.size))

    @classmethod
    def unit(cls, es, j):
        u = np.zeros(es.size)
        u[j] = 1.0
        return cls(es, u)

    def copy(self):
        return FourierCoeffs(self.es, self.data.copy())

    def __add__(self, other):
        self._check(other)
        return FourierCoeffs(self.es, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return FourierCoeffs(self.es, self.data - other.data)

    def __mul__(self, c):
        return FourierCoeffs(self.es, self.data * float(c))

    __rmul__ = __mul__

    def _check(self, other):
        if other.es != self.es:
            raise ValueError("eigensystem mismatch")

    def dump(self):
        """JSON coefficient dump, ordered by eigensystem index.

        Each entry carries the complex amplitude of exp(2i pi k.x) carried by
        that single (realified) basis function: cos modes map to
        (u/sqrt(2), 0), sin modes to (0, -u/sqrt(2)),
        the constant mode to (u, 0).
        """
        entries = []
        for j in range(self.es.size):
            u = float(self.data[j])
            kind = int(self.es.kind[j])
            if kind == KIND_CONST:
                re, im = u, 0.0
            elif kind == KIND_COS:
                re, im = u / np.sqrt(2.0), 0.0
            else:
                re, im = 0.0, -u / np.sqrt(2.0)
            entries.append({"k": [int(c) for c in self.es.kvecs[j]], "re": re, "im": im})
        return {
            "d": self.es.d,
            "K": self.es.kmax,
            "subspace": self.es.subspace,
            "components": self.es.p,
            "entries": entries,
        }

    def dumps(self):
        return json.dumps(self.dump())


def load_coeffs(obj, es=None):
    """Inverse of :meth:`FourierCoeffs.dump`."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    if es is None:
        es = build_eigensystem(obj["d"], obj["K"], obj["subspace"])
    data = np.zeros(es.size)
    for j, e in enumerate(obj["entries"]):
        kind = int(es.kind[j])
        if kind == KIND_CONST:
            data[j] = e["re"]
        elif kind == KIND_COS:
            data[j] = e["re"] * np.sqrt(2.0)
        else:
            data[j] = -e["im"] * np.sqrt(2.0)
    return FourierCoeffs(es, data)


# ---------------------------------------------------------------------------
# transforms between coefficients and grid values
# ---------------------------------------------------------------------------


class _LatticeMap:
    """Index maps between eigensystem entries and the complex FFT lattice."""

    def __init__(self, es, n):
        d = es.d
        shape = (n,) * d
        pos = np.zeros(es.size, dtype=np.int64)
        neg = np.zeros(es.size, dtype=np.int64)
        for j in range(es.size):
            k = es.kvecs[j]
            pos[j] = np.ravel_multi_index(tuple(int(c) % n for c in k), shape)
            neg[j] = np.ravel_multi_index(tuple((-int(c)) % n for c in k), shape)
        self.es = es
        self.n = n
        self.shape = shape
        self.pos = pos
        self.neg = neg
        self.is_const = es.kind == KIND_CONST
        self.is_cos = es.kind == KIND_COS
        self.is_sin = es.kind == KIND_SIN


_lattice_cache = {}


def _lattice(es, n):
    key = (id(es), n)
    lm = _lattice_cache.get(key)
    if lm is None or lm.es is not es:
        lm = _LatticeMap(es, n)
        _lattice_cache[key] = lm
    return lm


def _coeffs_to_lattice(es, data, n):
    """Real coefficients (..., nm) -> complex DFT array c(k) of shape (..., n[,n]).

    Scalar fields only (the div-free case scatters per component via dirs).
    """
    lm = _lattice(es, n)
    batch = data.shape[:-1]
    flat = np.zeros(batch + (n**es.d,), dtype=complex)
    amp = np.zeros(batch + (es.size,), dtype=complex)
    amp[..., lm.is_const] = data[..., lm.is_const]
    amp[..., lm.is_cos] = data[..., lm.is_cos] / np.sqrt(2.0)
    amp[..., lm.is_sin] = -1j * data[..., lm.is_sin] / np.sqrt(2.0)
    # cos and sin of the same wavevector hit the same lattice point: accumulate
    np.add.at(flat, (Ellipsis, lm.pos), amp)
    mask = ~lm.is_const
    np.add.at(flat, (Ellipsis, lm.neg[mask]), np.conj(amp[..., mask]))
    return flat.reshape(batch + lm.shape)


def values_from_coeffs(es, data, n):
    """Evaluate fields on the uniform n^d grid.

    data: (..., nm) real coefficients.  Returns (..., n[, n]) for scalar
    fields and (..., 2, n, n) for the div-free subspace.
    """
    data = np.asarray(data, dtype=float)
    if es.subspace == DIV_FREE:
        comps = []
        for c in range(2):
            lat = _coeffs_to_lattice(es, data * es.dirs[:, c], n)
            comps.append((n**es.d) * np.fft.ifftn(lat, axes=(-2, -1)).real)
        return np.stack(comps, axis=-3)
    lat = _coeffs_to_lattice(es, data, n)
    axes = tuple(range(-es.d, 0))
    return (n**es.d) * np.fft.ifftn(lat, axes=axes).real


def coeffs_from_values(es, values):
    """Project grid values onto the retained modes (exact if band-limited).

    values: (..., n[, n]) scalar or (..., 2, n, n) for div-free.
    """
    if es.subspace == DIV_FREE:
        n = values.shape[-1]
        out = 0.0
        for c in range(2):
            out = out + _scalar_coeffs_from_values(es, values[..., c, :, :], n) * es.dirs[:, c]
        return out
    n = values.shape[-1]
    return _scalar_coeffs_from_values(es, values, n)


def _scalar_coeffs_from_values(es, values, n):
    lm = _lattice(es, n)
    axes = tuple(range(-es.d, 0))
    chat = np.fft.fftn(values, axes=axes) / (n**es.d)
    flat = chat.reshape(values.shape[: -es.d] + (n**es.d,))
    a = flat[..., lm.pos]
    out = np.zeros(values.shape[: -es.d] + (es.size,))
    out[..., lm.is_const] = a[..., lm.is_const].real
    out[..., lm.is_cos] = np.sqrt(2.0) * a[..., lm.is_cos].real
    out[..., lm.is_sin] = -np.sqrt(2.0) * a[..., lm.is_sin].imag
    return out


def dealiased_product(es, u, v):
    """Coefficients of the pointwise product of two scalar fields.

    Computed on a 3/2-padded grid, hence exact for the retained modes.
    """
    n = es.min_grid_points(dealias=True)
    uu = values_from_coeffs(es, np.asarray(u, dtype=float), n)
    vv = values_from_coeffs(es, np.asarray(v, dtype=float), n)
    return coeffs_from_values(es, uu * vv)


# ---------------------------------------------------------------------------
# norms and pairings
# ---------------------------------------------------------------------------


def pairing(u, v):
    """L^2 inner product via Parseval (the pivot pairing)."""
    if u.es != v.es:
        raise ValueError("eigensystem mismatch")
    return float(u.data @ v.data)


def _coerce_coeffs(u, es):
    if u.es == es:
        return u.data
    # re-index by (wavevector, kind); any unrepresentable mass is an error
    data = np.zeros(es.size)
    for j in range(u.es.size):
        if u.data[j] == 0.0:
            continue
        tgt = es.index_of(u.es.kvecs[j], u.es.kind[j])
        if tgt < 0:
            raise ValueError(
                "field has components outside the requested subspace "
                f"(mode k={u.es.kvecs[j].tolist()} kind={int(u.es.kind[j])})"
            )
        data[tgt] = u.data[j]
    return data


def sobolev_norm(u, s, es=None):
    """Scale norm (sum_j tau_j^s u_j^2)^(1/2) on the eigensystem's subspace."""
    if es is None:
        es = u.es
    data = _coerce_coeffs(u, es)
    return float(np.sqrt(np.sum(es.tau**s * data**2)))


def basis_values_at(es, x):
    """Evaluate all basis functions at scattered points x of shape (nq, d).

    Returns (nq, nm) for scalar subspaces; vector values for div-free are
    dirs[m] * result[:, m].
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phase = TWO_PI * (x @ es.kvecs.T.astype(float))
    out = np.empty((x.shape[0], es.size))
    out[:, es.kind == KIND_CONST] = 1.0
    c = es.kind == KIND_COS
    s = es.kind == KIND_SIN
    out[:, c] = np.sqrt(2.0) * np.cos(phase[:, c])
    out[:, s] = np.sqrt(2.0) * np.sin(phase[:, s])
    return out
