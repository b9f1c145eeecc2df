"""Select the scoring kernels at import time.

The compiled core (:mod:`bmdl._ckernels`) is used when it was built;
otherwise, or when ``BMDL_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementation in :mod:`bmdl._pykernels` is used.
Both expose ``uni_terms``, ``bi_estimate``, ``bi_terms_given``, ``bi_terms``.
"""
import os

from . import _pykernels as python

_force_python = os.environ.get("BMDL_PURE_PYTHON", "") not in ("", "0")

compiled = None
if not _force_python:
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

active = compiled if compiled is not None else python

IMPLEMENTATION = active.IMPLEMENTATION
uni_terms = active.uni_terms
bi_estimate = active.bi_estimate
bi_terms_given = active.bi_terms_given
bi_terms = active.bi_terms

__all__ = ["IMPLEMENTATION", "uni_terms", "bi_estimate", "bi_terms_given", "bi_terms",
           "python", "compiled"]
