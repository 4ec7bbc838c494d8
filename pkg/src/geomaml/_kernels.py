"""Hot numeric kernels: 3x3 patch extraction and 2x2 max-pooling.

Each kernel has a numba ``@njit`` implementation and a pure-numpy one with
identical results. The numba path is used when numba imports cleanly and
``GEOMAML_DISABLE_NUMBA`` is unset (or ``0``); set it to ``1`` to force the
numpy path, e.g. for debugging or on platforms without an LLVM toolchain.
"""
import os

import numpy as np

_DISABLED = os.environ.get("GEOMAML_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by GEOMAML_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def im2col3_numpy(x):
    """Patches of a zero-padded (pad 1) 3x3 window.

    Parameters
    ----------
    x : ndarray, shape (B, C, H, W)

    Returns
    -------
    cols : ndarray, shape (B, H, W, C * 9)
        ``cols[b, h, w, c*9 + i*3 + j] == xpad[b, c, h + i, w + j]``.
    """
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2), dtype=np.float64)
    xp[:, :, 1:H + 1, 1:W + 1] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    # win: (B, C, H, W, 3, 3) -> (B, H, W, C, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B, H, W, C * 9)


def maxpool2_numpy(x):
    """2x2/stride-2 max-pool returning values and flat argmax offsets.

    The offset is ``i*2 + j`` within each window; ties resolve to the first
    maximum in row-major scan order.
    """
    B, C, H, W = x.shape
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // 2, W // 2, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def unpool2_numpy(g, arg):
    """Scatter pooled values back to their argmax positions (zeros elsewhere)."""
    B, C, h, w = g.shape
    onehot = arg[..., None] == np.arange(4)
    full = np.where(onehot, g[..., None], 0.0)  # (B, C, h, w, 4)
    full = full.reshape(B, C, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(full.reshape(B, C, 2 * h, 2 * w))


def gatherpool2_numpy(x, arg):
    """Read ``x`` at the argmax positions recorded by a max-pool."""
    B, C, H, W = x.shape
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // 2, W // 2, 4)
    return np.ascontiguousarray(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0])


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col3_nb(x):
        B, C, H, W = x.shape
        cols = np.zeros((B, H, W, C * 9), dtype=np.float64)
        for b in range(B):
            for h in range(H):
                for w in range(W):
                    for c in range(C):
                        base = c * 9
                        for i in range(3):
                            hh = h + i - 1
                            if hh < 0 or hh >= H:
                                continue
                            for j in range(3):
                                ww = w + j - 1
                                if ww < 0 or ww >= W:
                                    continue
                                cols[b, h, w, base + i * 3 + j] = x[b, c, hh, ww]
        return cols

    @njit(cache=True)
    def _maxpool2_nb(x):
        B, C, H, W = x.shape
        h2 = H // 2
        w2 = W // 2
        out = np.empty((B, C, h2, w2), dtype=np.float64)
        arg = np.empty((B, C, h2, w2), dtype=np.int64)
        for b in range(B):
            for c in range(C):
                for i in range(h2):
                    for j in range(w2):
                        best = x[b, c, 2 * i, 2 * j]
                        k = 0
                        for di in range(2):
                            for dj in range(2):
                                v = x[b, c, 2 * i + di, 2 * j + dj]
                                if v > best:
                                    best = v
                                    k = di * 2 + dj
                        out[b, c, i, j] = best
                        arg[b, c, i, j] = k
        return out, arg

    @njit(cache=True)
    def _unpool2_nb(g, arg):
        B, C, h, w = g.shape
        out = np.zeros((B, C, 2 * h, 2 * w), dtype=np.float64)
        for b in range(B):
            for c in range(C):
                for i in range(h):
                    for j in range(w):
                        k = arg[b, c, i, j]
                        out[b, c, 2 * i + k // 2, 2 * j + k % 2] = g[b, c, i, j]
        return out

    @njit(cache=True)
    def _gatherpool2_nb(x, arg):
        B, C, H, W = x.shape
        out = np.empty((B, C, H // 2, W // 2), dtype=np.float64)
        for b in range(B):
            for c in range(C):
                for i in range(H // 2):
                    for j in range(W // 2):
                        k = arg[b, c, i, j]
                        out[b, c, i, j] = x[b, c, 2 * i + k // 2, 2 * j + k % 2]
        return out

    def im2col3(x):
        return _im2col3_nb(np.ascontiguousarray(x, dtype=np.float64))

    def maxpool2(x):
        return _maxpool2_nb(np.ascontiguousarray(x, dtype=np.float64))

    def unpool2(g, arg):
        return _unpool2_nb(np.ascontiguousarray(g, dtype=np.float64), arg)

    def gatherpool2(x, arg):
        return _gatherpool2_nb(np.ascontiguousarray(x, dtype=np.float64), arg)

else:
    im2col3 = im2col3_numpy
    maxpool2 = maxpool2_numpy
    unpool2 = unpool2_numpy
    gatherpool2 = gatherpool2_numpy
