"""Hot stereo kernels.

The compiled Cython module is used when it was built and importable; otherwise
(or when ``COMPOUNDEYE_PURE_PYTHON=1``) the NumPy versions in ``_pykernels``
are selected.  Both expose the same functions with identical results.
"""

import os

from . import _pykernels

if os.environ.get("COMPOUNDEYE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "numpy"

census_transform = _impl.census_transform
census_cost_volume = _impl.census_cost_volume
sgm_aggregate = _impl.sgm_aggregate
select_left = _impl.select_left
select_right = _impl.select_right
fgs_smooth = _impl.fgs_smooth
zero_masked_costs = _impl.zero_masked_costs


def get_backend(name):
    """Return the kernel module called ``name`` ("cython" or "numpy")."""
    if name == "numpy":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
