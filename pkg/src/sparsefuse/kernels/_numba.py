"""numba-compiled kernels, signature-compatible with ``_numpy``."""
import numpy as np
from numba import njit

from ._numpy import fill_offsets


@njit(cache=True)
def _span(i, p, stride, n_in, n_out):
    """Output indices ``o`` whose input ``o*stride - p + i`` is in range."""
    lo = 0
    while lo < n_out and lo * stride - p + i < 0:
        lo += 1
    hi = n_out
    while hi > lo and (hi - 1) * stride - p + i >= n_in:
        hi -= 1
    return lo, hi


@njit(cache=True)
def _im2col(x, k, stride, ho, wo):
    c, h, wd = x.shape
    p = (k - 1) // 2
    cols = np.zeros((c * k * k, ho * wo))
    for ic in range(c):
        for i in range(k):
            y0, y1 = _span(i, p, stride, h, ho)
            for j in range(k):
                x0, x1 = _span(j, p, stride, wd, wo)
                row = (ic * k + i) * k + j
                for oy in range(y0, y1):
                    iy = oy * stride - p + i
                    base = oy * wo
                    for ox in range(x0, x1):
                        cols[row, base + ox] = x[ic, iy, ox * stride - p + j]
    return cols


@njit(cache=True)
def _col2im(cols, c, h, wd, k, stride, ho, wo):
    p = (k - 1) // 2
    dx = np.zeros((c, h, wd))
    for ic in range(c):
        for i in range(k):
            y0, y1 = _span(i, p, stride, h, ho)
            for j in range(k):
                x0, x1 = _span(j, p, stride, wd, wo)
                row = (ic * k + i) * k + j
                for oy in range(y0, y1):
                    iy = oy * stride - p + i
                    base = oy * wo
                    for ox in range(x0, x1):
                        dx[ic, iy, ox * stride - p + j] += cols[row, base + ox]
    return dx


@njit(cache=True)
def conv2d_forward(x, w, b, stride):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    cols = _im2col(x, k, stride, ho, wo)
    y = np.dot(np.ascontiguousarray(w).reshape(o, c * k * k), cols)
    for oc in range(o):
        y[oc] += b[oc]
    return y.reshape(o, ho, wo)


@njit(cache=True)
def conv2d_backward(x, w, dy, stride):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = dy.shape[1], dy.shape[2]
    cols = _im2col(x, k, stride, ho, wo)
    g = np.ascontiguousarray(dy).reshape(o, ho * wo)
    w2 = np.ascontiguousarray(w).reshape(o, c * k * k)
    dw = np.dot(g, cols.T).reshape(o, c, k, k)
    dx = _col2im(np.dot(w2.T, g), c, h, wd, k, stride, ho, wo)
    return dx, dw


@njit(cache=True)
def dwconv2d_forward(x, w, stride):
    c, h, wd = x.shape
    k = w.shape[2]
    p = (k - 1) // 2
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    y = np.zeros((c, ho, wo))
    for i in range(k):
        y0, y1 = _span(i, p, stride, h, ho)
        for j in range(k):
            x0, x1 = _span(j, p, stride, wd, wo)
            for ch in range(c):
                wv = w[ch, 0, i, j]
                for oy in range(y0, y1):
                    iy = oy * stride - p + i
                    for ox in range(x0, x1):
                        y[ch, oy, ox] += wv * x[ch, iy, ox * stride - p + j]
    return y


@njit(cache=True)
def dwconv2d_backward(x, w, dy, stride):
    c, h, wd = x.shape
    k = w.shape[2]
    p = (k - 1) // 2
    ho, wo = dy.shape[1], dy.shape[2]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for i in range(k):
        y0, y1 = _span(i, p, stride, h, ho)
        for j in range(k):
            x0, x1 = _span(j, p, stride, wd, wo)
            for ch in range(c):
                wv = w[ch, 0, i, j]
                acc = 0.0
                for oy in range(y0, y1):
                    iy = oy * stride - p + i
                    for ox in range(x0, x1):
                        ix = ox * stride - p + j
                        g = dy[ch, oy, ox]
                        acc += g * x[ch, iy, ix]
                        dx[ch, iy, ix] += wv * g
                dw[ch, 0, i, j] = acc
    return dx, dw


@njit(cache=True)
def _nn_fill(depth, mask, oy, ox):
    h, w = depth.shape
    out = depth.copy()
    filled = mask.copy()
    for v in range(h):
        for u in range(w):
            if mask[v, u]:
                continue
            for t in range(oy.size):
                sv = v + oy[t]
                su = u + ox[t]
                if sv < 0 or sv >= h or su < 0 or su >= w:
                    continue
                if mask[sv, su]:
                    out[v, u] = depth[sv, su]
                    filled[v, u] = True
                    break
    return out, filled


def nn_fill(depth, mask, radius):
    if radius <= 0:
        return depth.copy(), mask.copy()
    oy, ox = fill_offsets(radius)
    return _nn_fill(depth, mask, oy, ox)


@njit(cache=True)
def _idw(depth, mask, vy, vx, neighbors, power):
    h, w = depth.shape
    out = depth.astype(np.float64)
    nv = vy.size
    n = min(neighbors, nv)
    best_d = np.empty(n, dtype=np.int64)
    best_i = np.empty(n, dtype=np.int64)
    for v in range(h):
        for u in range(w):
            if mask[v, u]:
                continue
            m = 0
            for t in range(nv):
                d2 = (v - vy[t]) ** 2 + (u - vx[t]) ** 2
                if m == n and d2 >= best_d[n - 1]:
                    continue
                # insertion keeps earlier (row-major) candidates ahead on ties
                pos = m if m < n else n - 1
                while pos > 0 and best_d[pos - 1] > d2:
                    if pos < n:
                        best_d[pos] = best_d[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                    pos -= 1
                best_d[pos] = d2
                best_i[pos] = t
                if m < n:
                    m += 1
            num = 0.0
            den = 0.0
            for q in range(n):
                wt = float(best_d[q]) ** (-0.5 * power)
                num += wt * depth[vy[best_i[q]], vx[best_i[q]]]
                den += wt
            out[v, u] = num / den
    return out


def idw_densify(depth, mask, neighbors, power):
    vy, vx = np.nonzero(mask)
    return _idw(depth, mask, vy.astype(np.int64), vx.astype(np.int64), neighbors, float(power))
