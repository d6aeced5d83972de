"""Hot numerical kernels, compiled when available.

The Cython build (``bljes._ckernels``) is used if it imports; otherwise the
numpy versions in ``bljes._pykernels`` are used. Set ``BLJES_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _pykernels

if os.environ.get("BLJES_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

rff_eval = _impl.rff_eval
rff_eval_grad = _impl.rff_eval_grad
log_ndtr = _impl.log_ndtr
trunc_log_ratio = _impl.trunc_log_ratio
log_normal_pdf = _pykernels.log_normal_pdf

__all__ = ["BACKEND", "rff_eval", "rff_eval_grad", "log_ndtr", "trunc_log_ratio", "log_normal_pdf"]
