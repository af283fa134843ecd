"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy versions in ``_pykernels`` are used. Set ``PERCEPTUAL_ATTACK_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("PERCEPTUAL_ATTACK_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

gaussian_filter_valid = _impl.gaussian_filter_valid
srgb_to_lab = _impl.srgb_to_lab
ciede2000 = _impl.ciede2000
conv3x3_valid = _impl.conv3x3_valid
ssim_mean = _impl.ssim_mean
draw_categorical = _impl.draw_categorical
categorical_step = _impl.categorical_step


def backends():
    """Return ``{name: module}`` for every backend importable in this install."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
