"""Pure-numpy reference kernels.

Every function here has a twin with the same signature in ``_numba``.
Convolutions use zero same-padding of ``(k - 1) // 2`` and produce
``ceil(H / stride) x ceil(W / stride)`` outputs.
"""
import numpy as np


def _out_size(n, stride):
    return (n - 1) // stride + 1


def _tap(xp, i, j, stride, ho, wo):
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def conv2d_forward(x, w, b, stride):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = (k - 1) // 2
    ho, wo = _out_size(h, stride), _out_size(wd, stride)
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    y = np.zeros((o, ho, wo))
    for i in range(k):
        for j in range(k):
            y += np.tensordot(w[:, :, i, j], _tap(xp, i, j, stride, ho, wo), axes=(1, 0))
    y += b[:, None, None]
    return y


def conv2d_backward(x, w, dy, stride):
    """Return ``(dx, dw)``; the bias gradient is ``dy.sum((1, 2))``."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = (k - 1) // 2
    ho, wo = dy.shape[1:]
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            dw[:, :, i, j] = np.tensordot(dy, _tap(xp, i, j, stride, ho, wo), axes=([1, 2], [1, 2]))
            _tap(dxp, i, j, stride, ho, wo)[...] += np.tensordot(w[:, :, i, j].T, dy, axes=(1, 0))
    return dxp[:, p:p + h, p:p + wd], dw


def dwconv2d_forward(x, w, stride):
    c, h, wd = x.shape
    k = w.shape[2]
    p = (k - 1) // 2
    ho, wo = _out_size(h, stride), _out_size(wd, stride)
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    y = np.zeros((c, ho, wo))
    for i in range(k):
        for j in range(k):
            y += w[:, 0, i, j][:, None, None] * _tap(xp, i, j, stride, ho, wo)
    return y


def dwconv2d_backward(x, w, dy, stride):
    c, h, wd = x.shape
    k = w.shape[2]
    p = (k - 1) // 2
    ho, wo = dy.shape[1:]
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            dw[:, 0, i, j] = (dy * _tap(xp, i, j, stride, ho, wo)).sum(axis=(1, 2))
            _tap(dxp, i, j, stride, ho, wo)[...] += w[:, 0, i, j][:, None, None] * dy
    return dxp[:, p:p + h, p:p + wd], dw


def fill_offsets(radius):
    """Window offsets ordered by squared distance, then row, then column."""
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    keep = (dy != 0) | (dx != 0)
    dy, dx = dy[keep], dx[keep]
    order = np.lexsort((dx, dy, dy * dy + dx * dx))
    return np.ascontiguousarray(dy[order]), np.ascontiguousarray(dx[order])


def nn_fill(depth, mask, radius):
    h, w = depth.shape
    out = depth.copy()
    done = mask.copy()
    if radius <= 0:
        return out, done
    for dy, dx in zip(*fill_offsets(radius)):
        # target (v, u) takes source (v + dy, u + dx)
        v0, v1 = max(0, -dy), min(h, h - dy)
        u0, u1 = max(0, -dx), min(w, w - dx)
        if v0 >= v1 or u0 >= u1:
            continue
        src_valid = mask[v0 + dy:v1 + dy, u0 + dx:u1 + dx]
        take = src_valid & ~done[v0:v1, u0:u1]
        out[v0:v1, u0:u1][take] = depth[v0 + dy:v1 + dy, u0 + dx:u1 + dx][take]
        done[v0:v1, u0:u1] |= take
    return out, done


def idw_densify(depth, mask, neighbors, power):
    h, w = depth.shape
    vy, vx = np.nonzero(mask)
    vals = depth[vy, vx]
    out = depth.astype(np.float64, copy=True)
    qy, qx = np.nonzero(~mask)
    n = min(neighbors, vals.size)
    chunk = 512
    for s in range(0, qy.size, chunk):
        cy, cx = qy[s:s + chunk], qx[s:s + chunk]
        d2 = (cy[:, None] - vy[None, :]) ** 2 + (cx[:, None] - vx[None, :]) ** 2
        idx = np.argsort(d2, axis=1, kind="stable")[:, :n]
        nd2 = np.take_along_axis(d2, idx, axis=1).astype(np.float64)
        wts = nd2 ** (-0.5 * power)
        out[cy, cx] = (wts * vals[idx]).sum(axis=1) / wts.sum(axis=1)
    return out
