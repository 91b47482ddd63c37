# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled mask kernels. Semantics match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def brce(red, Py_ssize_t step, long th):
    cdef const unsigned char[:, ::1] r = np.ascontiguousarray(red, dtype=np.uint8)
    cdef Py_ssize_t h = r.shape[0], w = r.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef long c
    with nogil:
        for i in range(h):
            for j in range(step, w - step):
                c = r[i, j]
                if c - r[i, j - step] > th and c - r[i, j + step] > th:
                    out[i, j] = 1
    return out_arr


def noise_filter(mask, Py_ssize_t win_w, Py_ssize_t win_h, long theta, Py_ssize_t gamma):
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    integral_arr = np.zeros((h + 1, w + 1), dtype=np.int64)
    cdef long long[:, ::1] s = integral_arr
    out_arr = np.array(m, dtype=np.uint8, copy=True)
    cdef unsigned char[:, ::1] out = out_arr
    kill_arr = np.zeros(w, dtype=np.uint8)
    cdef unsigned char[::1] kill = kill_arr
    cdef Py_ssize_t i, j, x, y, x1, y1, nx, ny, ix, iy, last_x, last_y
    cdef long long count

    if win_w >= w:
        nx = 1
        last_x = 0
    else:
        nx = (w - win_w + gamma - 1) // gamma + 1
        last_x = w - win_w
    if win_h >= h:
        ny = 1
        last_y = 0
    else:
        ny = (h - win_h + win_h - 1) // win_h + 1
        last_y = h - win_h

    with nogil:
        for i in range(h):
            for j in range(w):
                s[i + 1, j + 1] = s[i, j + 1] + s[i + 1, j] - s[i, j] + m[i, j]
        for iy in range(ny):
            y = iy * win_h
            if y > last_y:
                y = last_y
            y1 = y + win_h
            if y1 > h:
                y1 = h
            for j in range(w):
                kill[j] = 0
            for ix in range(nx):
                x = ix * gamma
                if x > last_x:
                    x = last_x
                x1 = x + win_w
                if x1 > w:
                    x1 = w
                count = s[y1, x1] - s[y, x1] - s[y1, x] + s[y, x]
                if count <= theta:
                    for j in range(x, x1):
                        kill[j] = 1
            for i in range(y, y1):
                for j in range(w):
                    if kill[j]:
                        out[i, j] = 0
    return out_arr
