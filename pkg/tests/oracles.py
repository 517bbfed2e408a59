"""Independent reference implementations used as test oracles.

Written loop-style on purpose: nothing here shares code with the package.
"""

from fractions import Fraction
import math

import numpy as np

L = 256


def random_histograms(n, seed, high=1000, sparse=False):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        h = rng.integers(0, high + 1, size=L)
        if sparse:
            h[rng.random(L) < 0.7] = 0
        if h.sum() == 0:
            h[rng.integers(L)] = 1
        out.append(h.astype(np.int64))
    return out


def otsu_bruteforce(h):
    """Between-class variance for every cut, each sum recomputed from scratch (O(L^2))."""
    h = [int(v) for v in h]
    total = sum(h)
    scores = []
    for t in range(L - 1):
        w0 = sum(h[: t + 1])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            scores.append(0.0)
            continue
        s0 = sum(i * h[i] for i in range(t + 1))
        s1 = sum(i * h[i] for i in range(t + 1, L))
        mu0 = s0 / w0
        mu1 = s1 / w1
        scores.append((w0 / total) * (w1 / total) * (mu0 - mu1) ** 2)
    return np.array(scores)


def argmax_set(scores, rtol=0.0):
    scores = np.asarray(scores, dtype=float)
    best = scores.max()
    if rtol:
        return set(np.flatnonzero(scores >= best - rtol * abs(best)).tolist())
    return set(np.flatnonzero(scores == best).tolist())


def otsu_argmax_bruteforce(h):
    """Exact argmax set via rational arithmetic (no float ties lost)."""
    h = [int(v) for v in h]
    total = sum(h)
    best, cuts = None, []
    for t in range(L - 1):
        w0 = sum(h[: t + 1])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            s = Fraction(0)
        else:
            s0 = sum(i * h[i] for i in range(t + 1))
            s1 = sum(i * h[i] for i in range(t + 1, L))
            s = Fraction(w0 * w1) * (Fraction(s0, w0) - Fraction(s1, w1)) ** 2
        if best is None or s > best:
            best, cuts = s, [t]
        elif s == best:
            cuts.append(t)
    return set(cuts)


def met_bruteforce(h, floor=1e-30):
    """Kittler-Illingworth minimum error cost per cut (lower is better).

    cost(t) = sum_k w_k ln v_k - 2 sum_k w_k ln w_k over both classes with
    v_k = max(floor, within-class variance). Class moments come from exact
    integer sums so that cuts separated only by empty bins tie exactly.
    """
    h = [int(v) for v in h]
    costs = []
    for t in range(L - 1):
        cost = 0.0
        for lo, hi in ((0, t + 1), (t + 1, L)):
            w = sum(h[lo:hi])
            if w == 0:
                continue
            s1 = sum(i * h[i] for i in range(lo, hi))
            s2 = sum(i * i * h[i] for i in range(lo, hi))
            var = float(Fraction(s2 * w - s1 * s1, w * w))
            cost += w * math.log(max(floor, var)) - 2 * w * math.log(w)
        costs.append(cost)
    return np.array(costs)


def met_argmin_set(h):
    c = met_bruteforce(h)
    return set(np.flatnonzero(c == c.min()).tolist())


def local_mean_bruteforce(img, window, c):
    img = np.asarray(img)
    r = window // 2
    hgt, wid = img.shape
    out = np.zeros((hgt, wid))
    for y in range(hgt):
        for x in range(wid):
            acc = 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), hgt - 1)
                    xx = min(max(x + dx, 0), wid - 1)
                    acc += int(img[yy, xx])
            out[y, x] = acc / float(window * window) - c
    return out


def local_gaussian_bruteforce(img, window, sigma, c):
    img = np.asarray(img, dtype=float)
    r = window // 2
    raw = [[math.exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) for dx in range(-r, r + 1)]
           for dy in range(-r, r + 1)]
    z = sum(sum(row) for row in raw)
    hgt, wid = img.shape
    out = np.zeros((hgt, wid))
    for y in range(hgt):
        for x in range(wid):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), hgt - 1)
                    xx = min(max(x + dx, 0), wid - 1)
                    acc += raw[dy + r][dx + r] / z * img[yy, xx]
            out[y, x] = acc - c
    return out


def central_difference(f, x, step):
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))


def conv2d_direct(x, w, b):
    """'same' cross-correlation, zero padding, channels-last x (H,W,C), w (O,C,k,k)."""
    hgt, wid, cin = x.shape
    o, _, k, _ = w.shape
    r = k // 2
    out = np.zeros((hgt, wid, o))
    for y in range(hgt):
        for xx in range(wid):
            for oc in range(o):
                s = b[oc]
                for ic in range(cin):
                    for ky in range(k):
                        for kx in range(k):
                            yy, xc = y + ky - r, xx + kx - r
                            if 0 <= yy < hgt and 0 <= xc < wid:
                                s += w[oc, ic, ky, kx] * x[yy, xc, ic]
                out[y, xx, oc] = s
    return out
