"""Hot numeric kernels: 3x3 same-padding convolution and 2x2 max-pooling.

Two interchangeable backends:
  * numba @njit loops (default, compiled on first call)
  * pure-numpy im2col / reshape tricks

Set LANDMARK_RL_DISABLE_NUMBA=1 before import to force the numpy path
(used by the benchmark and as a fallback when numba is unavailable).
Both backends accept float32 and float64 arrays; results agree to
floating-point summation-order differences.
"""
import os

import numpy as np

_want_numba = os.environ.get("LANDMARK_RL_DISABLE_NUMBA", "0") != "1"
if _want_numba:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        _want_numba = False

USING_NUMBA = _want_numba


# ---------------------------------------------------------------------------
# numpy backend (im2col)
# ---------------------------------------------------------------------------

def _im2col3(x):
    """(B, C, H, W) -> (B, C*9, H*W) columns of the 3x3 neighborhood, zero pad 1."""
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((B, C, 9, H, W), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, k] = xp[:, :, di:di + H, dj:dj + W]
            k += 1
    return cols.reshape(B, C * 9, H * W)


def _col2im3(dcols, B, C, H, W):
    """Adjoint of _im2col3: scatter-add columns back to the input grid."""
    dcols = dcols.reshape(B, C, 9, H, W)
    dxp = np.zeros((B, C, H + 2, W + 2), dtype=dcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di:di + H, dj:dj + W] += dcols[:, :, k]
            k += 1
    return dxp[:, :, 1:-1, 1:-1]


def _conv_forward_np(x, w, b):
    B, C, H, W = x.shape
    F = w.shape[0]
    cols = _im2col3(x)
    wm = w.reshape(F, C * 9)
    y = np.matmul(wm[None], cols) + b[None, :, None]
    return np.ascontiguousarray(y.reshape(B, F, H, W))


def _conv_backward_np(x, w, dy):
    B, C, H, W = x.shape
    F = w.shape[0]
    cols = _im2col3(x)
    dyf = dy.reshape(B, F, H * W)
    db = dyf.sum(axis=(0, 2))
    dw = np.einsum("bfp,bcp->fc", dyf, cols).reshape(w.shape)
    wm = w.reshape(F, C * 9)
    dcols = np.matmul(wm.T[None], dyf)
    dx = _col2im3(dcols, B, C, H, W)
    return dx, dw, db


def _pool_forward_np(x):
    B, C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    xr = x.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    idx = xr.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(xr, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def _pool_backward_np(idx, dy, H, W):
    B, C, Ho, Wo = dy.shape
    dxr = np.zeros((B, C, Ho, Wo, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = dxr.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
    return np.ascontiguousarray(dx)


# ---------------------------------------------------------------------------
# numba backend (direct loops)
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @njit(cache=True)
    def _conv_forward_nb(x, w, b):
        B, C, H, W = x.shape
        F = w.shape[0]
        y = np.empty((B, F, H, W), dtype=x.dtype)
        for n in range(B):
            for f in range(F):
                for i in range(H):
                    for j in range(W):
                        acc = b[f]
                        for c in range(C):
                            for di in range(3):
                                ii = i + di - 1
                                if ii < 0 or ii >= H:
                                    continue
                                for dj in range(3):
                                    jj = j + dj - 1
                                    if jj < 0 or jj >= W:
                                        continue
                                    acc += x[n, c, ii, jj] * w[f, c, di, dj]
                        y[n, f, i, j] = acc
        return y

    @njit(cache=True)
    def _conv_backward_nb(x, w, dy):
        B, C, H, W = x.shape
        F = w.shape[0]
        dx = np.zeros(x.shape, dtype=x.dtype)
        dw = np.zeros(w.shape, dtype=x.dtype)
        db = np.zeros(F, dtype=x.dtype)
        for n in range(B):
            for f in range(F):
                for i in range(H):
                    for j in range(W):
                        g = dy[n, f, i, j]
                        db[f] += g
                        for c in range(C):
                            for di in range(3):
                                ii = i + di - 1
                                if ii < 0 or ii >= H:
                                    continue
                                for dj in range(3):
                                    jj = j + dj - 1
                                    if jj < 0 or jj >= W:
                                        continue
                                    dw[f, c, di, dj] += g * x[n, c, ii, jj]
                                    dx[n, c, ii, jj] += g * w[f, c, di, dj]
        return dx, dw, db

    @njit(cache=True)
    def _pool_forward_nb(x):
        B, C, H, W = x.shape
        Ho, Wo = H // 2, W // 2
        y = np.empty((B, C, Ho, Wo), dtype=x.dtype)
        idx = np.empty((B, C, Ho, Wo), dtype=np.uint8)
        for n in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        best = x[n, c, 2 * i, 2 * j]
                        k = 0
                        for di in range(2):
                            for dj in range(2):
                                v = x[n, c, 2 * i + di, 2 * j + dj]
                                if v > best:
                                    best = v
                                    k = 2 * di + dj
                        y[n, c, i, j] = best
                        idx[n, c, i, j] = k
        return y, idx

    @njit(cache=True)
    def _pool_backward_nb(idx, dy, H, W):
        B, C, Ho, Wo = dy.shape
        dx = np.zeros((B, C, H, W), dtype=dy.dtype)
        for n in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        k = idx[n, c, i, j]
                        dx[n, c, 2 * i + k // 2, 2 * j + k % 2] = dy[n, c, i, j]
        return dx

    conv_forward = _conv_forward_nb
    conv_backward = _conv_backward_nb
    maxpool_forward = _pool_forward_nb
    maxpool_backward = _pool_backward_nb
else:
    conv_forward = _conv_forward_np
    conv_backward = _conv_backward_np
    maxpool_forward = _pool_forward_np
    maxpool_backward = _pool_backward_np

numpy_backend = {
    "conv_forward": _conv_forward_np,
    "conv_backward": _conv_backward_np,
    "maxpool_forward": _pool_forward_np,
    "maxpool_backward": _pool_backward_np,
}
