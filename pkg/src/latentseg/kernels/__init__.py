"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``LATENTSEG_NUMBA`` is set to ``0``/``false``/``off``. Both
backends stay importable as ``kernels.numpy_backend`` and
``kernels.numba_backend`` (the latter is ``None`` without numba) so they can
be compared directly.
"""

import os

from . import _numpy as numpy_backend

try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

ENV_FLAG = "LATENTSEG_NUMBA"


def _numba_requested():
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in {"0", "false", "off", "no"}


USE_NUMBA = numba_backend is not None and _numba_requested()
backend = numba_backend if USE_NUMBA else numpy_backend
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"

iou_matrix = backend.iou_matrix
nms_keep = backend.nms_keep
covered_area = backend.covered_area
bilinear_resize = backend.bilinear_resize
vote_count = backend.vote_count
overlap_counts = backend.overlap_counts
equalize_lut = backend.equalize_lut

__all__ = [
    "BACKEND_NAME",
    "USE_NUMBA",
    "bilinear_resize",
    "covered_area",
    "equalize_lut",
    "iou_matrix",
    "nms_keep",
    "numba_backend",
    "numpy_backend",
    "overlap_counts",
    "vote_count",
]
