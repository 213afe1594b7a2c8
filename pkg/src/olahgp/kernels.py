"""Backend selection for the hot objective kernels.

The compiled extension is used when it was built; set ``OLAHGP_BACKEND=python``
to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
bcm_cost_grad = _kernels_py.bcm_cost_grad

if os.environ.get("OLAHGP_BACKEND", "").lower() != "python":
    try:
        from ._kernels import bcm_cost_grad  # noqa: F811
    except ImportError:
        pass
    else:
        BACKEND = "cython"

misclass_terms = _kernels_py.misclass_terms

__all__ = ["BACKEND", "bcm_cost_grad", "misclass_terms"]
