"""Index-free reference implementations used as test oracles.

Everything here works on dense pairwise distance matrices and plain loops,
sharing no code with the package beyond the data types.
"""

import numpy as np


def pairwise_sq(a, b):
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def nearest(a, b):
    """For every row of ``a`` the lowest-index nearest row of ``b``."""
    return np.argmin(pairwise_sq(a, b), axis=1)


def knn_excluding_self(p, k):
    d = pairwise_sq(p, p)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def chamfer(w, t):
    d = pairwise_sq(w, t)
    return d.min(axis=1).sum() + d.min(axis=0).sum()


def smoothness(src, flow, k):
    nb = knn_excluding_self(src, k)
    total = 0.0
    for i in range(len(src)):
        total += sum(((flow[i] - flow[j]) ** 2).sum() for j in nb[i]) / k
    return total


def laplacian_coords(p, k):
    nb = knn_excluding_self(p, k)
    return np.array([p[i] - p[nb[i]].mean(axis=0) for i in range(len(p))])


def laplacian(w, t, k, eps=1e-8):
    ow = laplacian_coords(w, k)
    ot = laplacian_coords(t, k)
    d = np.sqrt(pairwise_sq(w, t))
    total = 0.0
    for i in range(len(w)):
        near = np.argsort(d[i], kind="stable")[:k]
        if (d[i, near] == 0).any():
            wts = (d[i, near] == 0).astype(float)
        else:
            wts = 1.0 / (d[i, near] + eps)
        obar = (wts[:, None] * ot[near]).sum(axis=0) / wts.sum()
        total += np.sqrt(((ow[i] - obar) ** 2).sum())
    return total


def bilinear(grid, valid, u, v):
    h, w = grid.shape
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        return None
    x0 = min(int(np.floor(u)), w - 2)
    y0 = min(int(np.floor(v)), h - 2)
    if not valid[y0:y0 + 2, x0:x0 + 2].all():
        return None
    a, b = u - x0, v - y0
    return ((1 - a) * (1 - b) * grid[y0, x0] + a * (1 - b) * grid[y0, x0 + 1]
            + (1 - a) * b * grid[y0 + 1, x0] + a * b * grid[y0 + 1, x0 + 1])


def disparity_consistency(src, flow, grid, valid, fx, fy, cx, cy):
    res = []
    for p in src + flow:
        if p[2] <= 0:
            continue
        s = bilinear(grid, valid, p[0] * fx / p[2] + cx, p[1] * fy / p[2] + cy)
        if s is not None:
            res.append(abs(s - p[2]))
    return (sum(res) / len(res), len(res)) if res else (0.0, 0)


def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def gradient_error(analytic, numeric):
    """Largest component error relative to the largest gradient component."""
    scale = max(np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def metrics(pred, gt):
    """Scene-flow metrics written out point by point."""
    acc_s = acc_r = out = 0
    errs = []
    for p, g in zip(pred, gt):
        e = float(np.sqrt(((p - g) ** 2).sum()))
        r = e / max(float(np.sqrt((g ** 2).sum())), 1e-12)
        errs.append(e)
        acc_s += e < 0.05 or r < 0.05
        acc_r += e < 0.1 or r < 0.1
        out += e > 0.3 or r > 0.1
    n = len(errs)
    return sum(errs) / n, acc_s / n, acc_r / n, out / n
