"""Hot kernels: numba-compiled when available, numpy otherwise.

Set ``MRFSIG_DISABLE_NUMBA=1`` to force the numpy path.
"""
import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("MRFSIG_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _numba

        _impl = _numba
        BACKEND = "numba"
    except ImportError:  # pragma: no cover
        pass

energies = _impl.energies
pl_obs = _impl.pl_obs
pl_value_grad = _impl.pl_value_grad
pl_hessian = _impl.pl_hessian
ascent = _impl.ascent
gibbs = _impl.gibbs

__all__ = ["BACKEND", "energies", "pl_obs", "pl_value_grad", "pl_hessian", "ascent", "gibbs"]
