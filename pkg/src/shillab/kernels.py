"""Backend selection for the recommender SGD kernel.

The compiled extension is used when importable; set ``SHILLAB_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
sgd_epoch = _fallback.sgd_epoch

if not os.environ.get("SHILLAB_PURE_PYTHON"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        sgd_epoch = _kernels.sgd_epoch
        BACKEND = "cython"

BACKENDS = {"python": _fallback.sgd_epoch}
try:
    from . import _kernels as _k

    BACKENDS["cython"] = _k.sgd_epoch
except ImportError:
    pass
