"""Hot numeric kernels: 3x3 convolution, 2x2 average pooling, 2x bilinear upsampling.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy version.
The active backend is chosen once at import time from the environment variable
``STYLEPROJ_BACKEND``:

    STYLEPROJ_BACKEND=numba   force numba (ImportError if numba is missing)
    STYLEPROJ_BACKEND=numpy   force the pure-numpy path
    unset / "auto"            numba when importable, numpy otherwise

Both paths are deterministic; they agree to ~1e-13 relative (summation order
differs). ``benchmarks/bench_kernels.py`` compares their speed.

All arrays are float64, channel-first (C, H, W). Convolutions are fixed to
3x3 kernels, stride 1, zero padding 1.
"""

import os

import numpy as np

_CHOICES = ("auto", "numba", "numpy")


def _resolve_backend() -> str:
    req = os.environ.get("STYLEPROJ_BACKEND", "auto").strip().lower() or "auto"
    if req not in _CHOICES:
        raise ValueError(
            f"STYLEPROJ_BACKEND={req!r} not understood; expected one of {_CHOICES}"
        )
    if req == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if req == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND


# ---------------------------------------------------------------------------
# pure-numpy reference path
# ---------------------------------------------------------------------------

def _im2col3(x):
    # (C, H, W) -> (C*9, H*W) patch matrix for 3x3/pad-1 convolution
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 9, h, w))
    for ki in range(3):
        for kj in range(3):
            cols[:, ki * 3 + kj] = xp[:, ki:ki + h, kj:kj + w]
    return cols.reshape(c * 9, h * w)


def conv2d_fwd_np(x, w):
    cout = w.shape[0]
    _, h, wd = x.shape
    out = w.reshape(cout, -1) @ _im2col3(x)
    return np.ascontiguousarray(out.reshape(cout, h, wd))


def conv2d_bwd_input_np(gy, w):
    # full correlation of gy with the flipped kernel, expressed as im2col again
    cout, cin = w.shape[0], w.shape[1]
    wrot = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (cin, cout, 3, 3)
    gx = wrot.reshape(cin, cout * 9) @ _im2col3(gy)
    return np.ascontiguousarray(gx.reshape(cin, gy.shape[1], gy.shape[2]))


def conv2d_bwd_weight_np(gy, x):
    cout = gy.shape[0]
    cin, h, w = x.shape
    gw = gy.reshape(cout, h * w) @ _im2col3(x).T
    return np.ascontiguousarray(gw.reshape(cout, cin, 3, 3))


def avgpool2_fwd_np(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avgpool2_bwd_np(gy):
    c, h2, w2 = gy.shape
    g = np.empty((c, h2, 2, w2, 2))
    g[...] = (gy * 0.25)[:, :, None, :, None]
    return g.reshape(c, h2 * 2, w2 * 2)


def _bilinear2_weights(n):
    # output index i samples source coordinate (i + 0.5)/2 - 0.5, clamped
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    lo = np.clip(np.floor(src).astype(np.int64), 0, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    t = np.clip(src - lo, 0.0, 1.0)
    return lo, hi, t


def upsample2_fwd_np(x):
    c, h, w = x.shape
    y0, y1, ty = _bilinear2_weights(h)
    x0, x1, tx = _bilinear2_weights(w)
    a = x[:, y0][:, :, x0]
    b = x[:, y0][:, :, x1]
    cc = x[:, y1][:, :, x0]
    d = x[:, y1][:, :, x1]
    wy = ty[None, :, None]
    wx = tx[None, None, :]
    return ((1 - wy) * (1 - wx) * a + (1 - wy) * wx * b
            + wy * (1 - wx) * cc + wy * wx * d)


def upsample2_bwd_np(gy):
    c, h2, w2 = gy.shape
    h, w = h2 // 2, w2 // 2
    y0, y1, ty = _bilinear2_weights(h)
    x0, x1, tx = _bilinear2_weights(w)
    gx = np.zeros((c, h, w))
    wy = ty[None, :, None]
    wx = tx[None, None, :]
    np.add.at(gx, (slice(None), y0[:, None], x0[None, :]), (1 - wy) * (1 - wx) * gy)
    np.add.at(gx, (slice(None), y0[:, None], x1[None, :]), (1 - wy) * wx * gy)
    np.add.at(gx, (slice(None), y1[:, None], x0[None, :]), wy * (1 - wx) * gy)
    np.add.at(gx, (slice(None), y1[:, None], x1[None, :]), wy * wx * gy)
    return gx


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    # conv loops run one kernel tap at a time over full rows: the innermost
    # j loop is contiguous on both arrays, which LLVM vectorizes

    @njit(cache=True)
    def _conv2d_fwd_nb(x, w):
        cin, h, wd = x.shape
        cout = w.shape[0]
        out = np.zeros((cout, h, wd))
        for co in range(cout):
            for ci in range(cin):
                for ki in range(3):
                    i0 = max(0, 1 - ki)
                    i1 = min(h, h + 1 - ki)
                    for kj in range(3):
                        wv = w[co, ci, ki, kj]
                        j0 = max(0, 1 - kj)
                        j1 = min(wd, wd + 1 - kj)
                        dj = kj - 1
                        for i in range(i0, i1):
                            xi = i + ki - 1
                            for j in range(j0, j1):
                                out[co, i, j] += wv * x[ci, xi, j + dj]
        return out

    @njit(cache=True)
    def _conv2d_bwd_input_nb(gy, w):
        cout, cin = w.shape[0], w.shape[1]
        h, wd = gy.shape[1], gy.shape[2]
        gx = np.zeros((cin, h, wd))
        for co in range(cout):
            for ci in range(cin):
                for ki in range(3):
                    i0 = max(0, 1 - ki)
                    i1 = min(h, h + 1 - ki)
                    for kj in range(3):
                        wv = w[co, ci, ki, kj]
                        j0 = max(0, 1 - kj)
                        j1 = min(wd, wd + 1 - kj)
                        dj = kj - 1
                        for i in range(i0, i1):
                            xi = i + ki - 1
                            for j in range(j0, j1):
                                gx[ci, xi, j + dj] += wv * gy[co, i, j]
        return gx

    @njit(cache=True)
    def _conv2d_bwd_weight_nb(gy, x):
        cin, h, wd = x.shape
        cout = gy.shape[0]
        gw = np.zeros((cout, cin, 3, 3))
        for co in range(cout):
            for ci in range(cin):
                for ki in range(3):
                    i0 = max(0, 1 - ki)
                    i1 = min(h, h + 1 - ki)
                    for kj in range(3):
                        j0 = max(0, 1 - kj)
                        j1 = min(wd, wd + 1 - kj)
                        dj = kj - 1
                        acc = 0.0
                        for i in range(i0, i1):
                            xi = i + ki - 1
                            for j in range(j0, j1):
                                acc += gy[co, i, j] * x[ci, xi, j + dj]
                        gw[co, ci, ki, kj] = acc
        return gw

    @njit(cache=True)
    def _avgpool2_fwd_nb(x):
        c, h, w = x.shape
        out = np.empty((c, h // 2, w // 2))
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ci, i, j] = 0.25 * (x[ci, 2 * i, 2 * j] + x[ci, 2 * i, 2 * j + 1]
                                            + x[ci, 2 * i + 1, 2 * j] + x[ci, 2 * i + 1, 2 * j + 1])
        return out

    @njit(cache=True)
    def _avgpool2_bwd_nb(gy):
        c, h2, w2 = gy.shape
        gx = np.empty((c, h2 * 2, w2 * 2))
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    g = 0.25 * gy[ci, i, j]
                    gx[ci, 2 * i, 2 * j] = g
                    gx[ci, 2 * i, 2 * j + 1] = g
                    gx[ci, 2 * i + 1, 2 * j] = g
                    gx[ci, 2 * i + 1, 2 * j + 1] = g
        return gx

    @njit(cache=True)
    def _upsample2_fwd_nb(x):
        c, h, w = x.shape
        out = np.empty((c, 2 * h, 2 * w))
        for i in range(2 * h):
            sy = (i + 0.5) / 2.0 - 0.5
            y0 = int(np.floor(sy))
            if y0 < 0:
                y0 = 0
            if y0 > h - 1:
                y0 = h - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            ty = sy - y0
            if ty < 0.0:
                ty = 0.0
            if ty > 1.0:
                ty = 1.0
            for j in range(2 * w):
                sx = (j + 0.5) / 2.0 - 0.5
                x0 = int(np.floor(sx))
                if x0 < 0:
                    x0 = 0
                if x0 > w - 1:
                    x0 = w - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                tx = sx - x0
                if tx < 0.0:
                    tx = 0.0
                if tx > 1.0:
                    tx = 1.0
                for ci in range(c):
                    out[ci, i, j] = ((1 - ty) * (1 - tx) * x[ci, y0, x0]
                                     + (1 - ty) * tx * x[ci, y0, x1]
                                     + ty * (1 - tx) * x[ci, y1, x0]
                                     + ty * tx * x[ci, y1, x1])
        return out

    @njit(cache=True)
    def _upsample2_bwd_nb(gy):
        c, h2, w2 = gy.shape
        h, w = h2 // 2, w2 // 2
        gx = np.zeros((c, h, w))
        for i in range(h2):
            sy = (i + 0.5) / 2.0 - 0.5
            y0 = int(np.floor(sy))
            if y0 < 0:
                y0 = 0
            if y0 > h - 1:
                y0 = h - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            ty = sy - y0
            if ty < 0.0:
                ty = 0.0
            if ty > 1.0:
                ty = 1.0
            for j in range(w2):
                sx = (j + 0.5) / 2.0 - 0.5
                x0 = int(np.floor(sx))
                if x0 < 0:
                    x0 = 0
                if x0 > w - 1:
                    x0 = w - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                tx = sx - x0
                if tx < 0.0:
                    tx = 0.0
                if tx > 1.0:
                    tx = 1.0
                for ci in range(c):
                    g = gy[ci, i, j]
                    gx[ci, y0, x0] += (1 - ty) * (1 - tx) * g
                    gx[ci, y0, x1] += (1 - ty) * tx * g
                    gx[ci, y1, x0] += ty * (1 - tx) * g
                    gx[ci, y1, x1] += ty * tx * g
        return gx

    conv2d_fwd = _conv2d_fwd_nb
    conv2d_bwd_input = _conv2d_bwd_input_nb
    conv2d_bwd_weight = _conv2d_bwd_weight_nb
    avgpool2_fwd = _avgpool2_fwd_nb
    avgpool2_bwd = _avgpool2_bwd_nb
    upsample2_fwd = _upsample2_fwd_nb
    upsample2_bwd = _upsample2_bwd_nb
else:
    conv2d_fwd = conv2d_fwd_np
    conv2d_bwd_input = conv2d_bwd_input_np
    conv2d_bwd_weight = conv2d_bwd_weight_np
    avgpool2_fwd = avgpool2_fwd_np
    avgpool2_bwd = avgpool2_bwd_np
    upsample2_fwd = upsample2_fwd_np
    upsample2_bwd = upsample2_bwd_np
