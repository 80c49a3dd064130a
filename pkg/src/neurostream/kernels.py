"""Kernel backend selection.

The compiled module is used when it imports; set ``NEUROSTREAM_KERNELS=numpy`` to force
the numpy fallback. Both expose ``sosfilt``, ``vol2col``, ``col2vol``, ``maxpool3d`` and
``maxunpool3d`` with identical signatures.
"""
import os

from . import _pykernels


def _select():
    if os.environ.get("NEUROSTREAM_KERNELS", "").lower() in ("numpy", "python", "pure"):
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels
    return _ckernels


backend = _select()
NAME = backend.NAME

sosfilt = backend.sosfilt
vol2col = backend.vol2col
col2vol = backend.col2vol
maxpool3d = backend.maxpool3d
maxunpool3d = backend.maxunpool3d


def available():
    """Every importable backend, keyed by name."""
    found = {_pykernels.NAME: _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found[_ckernels.NAME] = _ckernels
    return found
