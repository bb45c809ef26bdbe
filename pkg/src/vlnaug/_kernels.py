"""Bilinear panorama resampling kernels.

The remap is the hot inner loop of view extraction (36 views per panorama,
every trajectory step, every variant). Two interchangeable backends exist:
a numba ``@njit`` kernel and a vectorized pure-numpy one. Selection order:

* ``RAM_PURE_NUMPY=1`` in the environment forces the numpy path;
* otherwise numba is used when importable, numpy if not.

Both paths share the exact arithmetic: horizontal wrap, vertical clamp,
pixel centers at half-integer coordinates, and half-up rounding to uint8.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FORCE_NUMPY = os.environ.get("RAM_PURE_NUMPY", "").strip() in ("1", "true", "yes")

try:  # pragma: no cover - import guard
    if _FORCE_NUMPY:
        raise ImportError("numpy path forced via RAM_PURE_NUMPY")
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def active_backend() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


def remap_bilinear_numpy(pano: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``pano`` (H, W, 3) uint8 at float coordinates (u, v).

    u wraps horizontally (equirectangular topology), v clamps vertically.
    """
    src_h, src_w = pano.shape[:2]
    fu = u - 0.5
    fv = v - 0.5
    x0 = np.floor(fu)
    y0 = np.floor(fv)
    a = fu - x0
    b = fv - y0

    x0i = np.mod(x0.astype(np.int64), src_w)
    x1i = np.mod(x0i + 1, src_w)
    y0i = np.clip(y0.astype(np.int64), 0, src_h - 1)
    y1i = np.clip(y0i + 1, 0, src_h - 1)

    p = pano.astype(np.float64)
    a3 = a[..., None]
    b3 = b[..., None]
    val = (
        (1.0 - a3) * (1.0 - b3) * p[y0i, x0i]
        + a3 * (1.0 - b3) * p[y0i, x1i]
        + (1.0 - a3) * b3 * p[y1i, x0i]
        + a3 * b3 * p[y1i, x1i]
    )
    return np.floor(val + 0.5).astype(np.uint8)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _remap_bilinear_jit(pano, u, v):  # pragma: no cover - numba-compiled
        src_h, src_w = pano.shape[0], pano.shape[1]
        out_h, out_w = u.shape
        out = np.empty((out_h, out_w, 3), dtype=np.uint8)
        for i in range(out_h):
            for j in range(out_w):
                fu = u[i, j] - 0.5
                fv = v[i, j] - 0.5
                x0 = math.floor(fu)
                y0 = math.floor(fv)
                a = fu - x0
                b = fv - y0
                x0i = int(x0) % src_w
                x1i = (x0i + 1) % src_w
                y0i = int(y0)
                if y0i < 0:
                    y0i = 0
                elif y0i > src_h - 1:
                    y0i = src_h - 1
                y1i = y0i + 1
                if y1i > src_h - 1:
                    y1i = src_h - 1
                for c in range(3):
                    val = (
                        (1.0 - a) * (1.0 - b) * pano[y0i, x0i, c]
                        + a * (1.0 - b) * pano[y0i, x1i, c]
                        + (1.0 - a) * b * pano[y1i, x0i, c]
                        + a * b * pano[y1i, x1i, c]
                    )
                    out[i, j, c] = np.uint8(math.floor(val + 0.5))
        return out

    def remap_bilinear(pano: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return _remap_bilinear_jit(
            np.ascontiguousarray(pano),
            np.ascontiguousarray(u, dtype=np.float64),
            np.ascontiguousarray(v, dtype=np.float64),
        )

else:
    remap_bilinear = remap_bilinear_numpy
