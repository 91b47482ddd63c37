"""Numpy implementations of the mask kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
cross-check for it in the test suite.
"""

import numpy as np


def brce(red, step, th):
    red = np.ascontiguousarray(red, dtype=np.uint8)
    h, w = red.shape
    out = np.zeros((h, w), dtype=np.uint8)
    r = red.astype(np.int32)
    center = r[:, step:w - step]
    g1 = center - r[:, :w - 2 * step]
    g2 = center - r[:, 2 * step:]
    g1[g1 <= th] = 0
    g2[g2 <= th] = 0
    out[:, step:w - step] = (g1 * g2) > 0
    return out


def window_starts(total, size, stride):
    """Start offsets of windows of ``size`` stepping by ``stride``, last one clamped."""
    if size >= total:
        return np.zeros(1, dtype=np.intp)
    n = -(-(total - size) // stride) + 1
    return np.minimum(np.arange(n, dtype=np.intp) * stride, total - size)


def noise_filter(mask, win_w, win_h, theta, gamma):
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    h, w = mask.shape
    xs = window_starts(w, win_w, gamma)
    ys = window_starts(h, win_h, win_h)

    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = mask.cumsum(0).cumsum(1)

    kill = np.zeros((h, w), dtype=bool)
    for y in ys:
        y1 = min(y + win_h, h)
        strip = integral[y1] - integral[y]
        x1 = np.minimum(xs + win_w, w)
        counts = strip[x1] - strip[xs]
        bad = xs[counts <= theta]
        if bad.size == 0:
            continue
        # difference array: union of [x, x + win_w) over failing windows
        cover = np.zeros(w + 1, dtype=np.int32)
        np.add.at(cover, bad, 1)
        np.add.at(cover, np.minimum(bad + win_w, w), -1)
        kill[y:y1] |= (np.cumsum(cover[:w]) > 0)[None, :]

    out = mask.copy()
    out[kill] = 0
    return out
