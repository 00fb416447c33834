"""Hot evaluation kernels: compiled extension when available, numpy fallback.

Set ``PDEFISHER_FORCE_REFERENCE=1`` to force the pure-numpy path (used by the
parity tests and the benchmark).
"""

import os

from . import reference

if os.environ.get("PDEFISHER_FORCE_REFERENCE", "") == "1":
    _impl = reference
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = reference

IMPL = _impl.IMPL
interp_coeffs = _impl.interp_coeffs
eval_scalar = _impl.eval_scalar
eval_vector = _impl.eval_vector
