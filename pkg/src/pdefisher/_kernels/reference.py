"""Pure-numpy reference implementation of the hot evaluation kernels.

These routines dominate the Monte-Carlo paths (dataset simulation,
likelihood ratios, influence functions): evaluating a band-limited
space-time field at many scattered (t, x) points.  The compiled extension
in ``_fast.pyx`` implements the same contract; parity is enforced by tests.
"""

import numpy as np

IMPL = "reference"

_CHUNK = 2048


def _time_stencils(nodes, tq):
    """4-point Lagrange stencils and weights on an arbitrary node grid.

    nodes: (M+1,) increasing; tq: (nq,) query times inside [nodes[0], nodes[-1]].
    Returns (idx, w) of shapes (nq, 4).
    """
    m = nodes.shape[0]
    j = np.searchsorted(nodes, tq, side="right") - 1
    j = np.clip(j, 0, m - 2)
    start = np.clip(j - 1, 0, m - 4) if m >= 4 else np.zeros_like(j)
    if m < 4:
        raise ValueError("need at least 4 time nodes for cubic interpolation")
    idx = start[:, None] + np.arange(4)[None, :]
    tn = nodes[idx]  # (nq, 4)
    w = np.ones((tq.shape[0], 4))
    for a in range(4):
        for b in range(4):
            if a == b:
                continue
            w[:, a] *= (tq - tn[:, b]) / (tn[:, a] - tn[:, b])
    return idx, w


def interp_coeffs(nodes, snapshots, tq):
    """Cubic-in-time interpolation of coefficient snapshots.

    snapshots: (M+1, nm); returns (nq, nm).
    """
    tq = np.asarray(tq, dtype=float)
    idx, w = _time_stencils(nodes, tq)
    out = np.empty((tq.shape[0], snapshots.shape[1]))
    for start in range(0, tq.shape[0], _CHUNK):
        sl = slice(start, min(start + _CHUNK, tq.shape[0]))
        gathered = snapshots[idx[sl]]  # (chunk, 4, nm)
        out[sl] = np.einsum("qa,qam->qm", w[sl], gathered)
    return out


def eval_scalar(nodes, snapshots, kvecs, kind, tq, xq):
    """Evaluate a scalar space-time field at scattered points.

    nodes: (M+1,) time nodes; snapshots: (M+1, nm) coefficients in the
    realified basis; kvecs: (nm, d) int wavevectors; kind: (nm,) codes
    (0 const, 1 cos, 2 sin); tq: (nq,), xq: (nq, d).  Returns (nq,).
    """
    tq = np.asarray(tq, dtype=float)
    xq = np.atleast_2d(np.asarray(xq, dtype=float))
    idx, w = _time_stencils(nodes, tq)
    kf = kvecs.astype(float)
    sqrt2 = np.sqrt(2.0)
    out = np.empty(tq.shape[0])
    for start in range(0, tq.shape[0], _CHUNK):
        sl = slice(start, min(start + _CHUNK, tq.shape[0]))
        coeffs = np.einsum("qa,qam->qm", w[sl], snapshots[idx[sl]])
        phase = 2.0 * np.pi * (xq[sl] @ kf.T)
        basis = np.where(
            kind == 1, sqrt2 * np.cos(phase), sqrt2 * np.sin(phase)
        )
        basis[:, kind == 0] = 1.0
        out[sl] = np.einsum("qm,qm->q", coeffs, basis)
    return out


def eval_vector(nodes, snapshots, kvecs, kind, dirs, tq, xq):
    """Divergence-free vector field version of :func:`eval_scalar`.

    dirs: (nm, 2) unit direction per mode.  Returns (nq, 2).
    """
    tq = np.asarray(tq, dtype=float)
    xq = np.atleast_2d(np.asarray(xq, dtype=float))
    idx, w = _time_stencils(nodes, tq)
    kf = kvecs.astype(float)
    sqrt2 = np.sqrt(2.0)
    out = np.empty((tq.shape[0], 2))
    for start in range(0, tq.shape[0], _CHUNK):
        sl = slice(start, min(start + _CHUNK, tq.shape[0]))
        coeffs = np.einsum("qa,qam->qm", w[sl], snapshots[idx[sl]])
        phase = 2.0 * np.pi * (xq[sl] @ kf.T)
        basis = np.where(
            kind == 1, sqrt2 * np.cos(phase), sqrt2 * np.sin(phase)
        )
        basis[:, kind == 0] = 1.0
        weighted = coeffs * basis
        out[sl, 0] = weighted @ dirs[:, 0]
        out[sl, 1] = weighted @ dirs[:, 1]
    return out
