# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

``srgb_to_lab`` is re-exported from the numpy module: its work is one power and
one cube root per value, which numpy vectorises better than per-value libm calls.
"""

import numpy as np

from ._pykernels import srgb_to_lab  # noqa: F401

from libc.math cimport atan2, cos, exp, fabs, fmod, pow, sin, sqrt

cdef double PI = 3.14159265358979323846
cdef double DEG = 180.0 / 3.14159265358979323846
cdef double RAD = 3.14159265358979323846 / 180.0
cdef double POW25_7 = 6103515625.0


def gaussian_filter_valid(a, kernel):
    cdef const double[:, :, ::1] src = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t n = k.shape[0]
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], C = src.shape[2]
    cdef Py_ssize_t Ho = H - n + 1, Wo = W - n + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("image smaller than filter window")
    rows_arr = np.empty((Ho, W, C), dtype=np.float64)
    out_arr = np.empty((Ho, Wo, C), dtype=np.float64)
    cdef double[:, :, ::1] rows = rows_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, c, t
    cdef double acc
    for i in range(Ho):
        for j in range(W):
            for c in range(C):
                acc = 0.0
                for t in range(n):
                    acc += src[i + t, j, c] * k[t]
                rows[i, j, c] = acc
    for i in range(Ho):
        for j in range(Wo):
            for c in range(C):
                acc = 0.0
                for t in range(n):
                    acc += rows[i, j + t, c] * k[t]
                out[i, j, c] = acc
    return out_arr


cdef inline double _hue_deg(double b, double a) nogil:
    if a == 0.0 and b == 0.0:
        return 0.0
    cdef double h = atan2(b, a) * DEG
    if h < 0.0:
        h += 360.0
    return h


cdef double _de00(double L1, double a1, double b1,
                  double L2, double a2, double b2) nogil:
    cdef double c_bar = 0.5 * (sqrt(a1 * a1 + b1 * b1) + sqrt(a2 * a2 + b2 * b2))
    cdef double c_bar7 = pow(c_bar, 7.0)
    cdef double g = 0.5 * (1.0 - sqrt(c_bar7 / (c_bar7 + POW25_7)))
    cdef double a1p = (1.0 + g) * a1
    cdef double a2p = (1.0 + g) * a2
    cdef double c1p = sqrt(a1p * a1p + b1 * b1)
    cdef double c2p = sqrt(a2p * a2p + b2 * b2)
    cdef double h1p = _hue_deg(b1, a1p)
    cdef double h2p = _hue_deg(b2, a2p)
    cdef double dh, hbar
    cdef bint chroma_zero = (c1p * c2p) == 0.0
    if chroma_zero:
        dh = 0.0
        hbar = h1p + h2p
    else:
        dh = h2p - h1p
        if dh > 180.0:
            dh -= 360.0
        elif dh < -180.0:
            dh += 360.0
        if fabs(h1p - h2p) <= 180.0:
            hbar = 0.5 * (h1p + h2p)
        elif h1p + h2p < 360.0:
            hbar = 0.5 * (h1p + h2p + 360.0)
        else:
            hbar = 0.5 * (h1p + h2p - 360.0)
    cdef double dLp = L2 - L1
    cdef double dCp = c2p - c1p
    cdef double dHp = 2.0 * sqrt(c1p * c2p) * sin(dh * RAD / 2.0)
    cdef double Lbar = 0.5 * (L1 + L2)
    cdef double Cbar = 0.5 * (c1p + c2p)
    cdef double T = (1.0
                     - 0.17 * cos((hbar - 30.0) * RAD)
                     + 0.24 * cos((2.0 * hbar) * RAD)
                     + 0.32 * cos((3.0 * hbar + 6.0) * RAD)
                     - 0.20 * cos((4.0 * hbar - 63.0) * RAD))
    cdef double z = (hbar - 275.0) / 25.0
    cdef double d_theta = 30.0 * exp(-(z * z))
    cdef double Cbar7 = pow(Cbar, 7.0)
    cdef double rc = 2.0 * sqrt(Cbar7 / (Cbar7 + POW25_7))
    cdef double lsq = (Lbar - 50.0) * (Lbar - 50.0)
    cdef double sl = 1.0 + 0.015 * lsq / sqrt(20.0 + lsq)
    cdef double sc = 1.0 + 0.045 * Cbar
    cdef double sh = 1.0 + 0.015 * Cbar * T
    cdef double rt = -sin(2.0 * d_theta * RAD) * rc
    cdef double tl = dLp / sl
    cdef double tc = dCp / sc
    cdef double th = dHp / sh
    cdef double s = tl * tl + tc * tc + th * th + rt * tc * th
    if s < 0.0:
        s = 0.0
    return sqrt(s)


def ciede2000(lab1, lab2):
    arr1 = np.asarray(lab1, dtype=np.float64)
    arr2 = np.asarray(lab2, dtype=np.float64)
    if arr1.shape != arr2.shape:
        arr1, arr2 = np.broadcast_arrays(arr1, arr2)
    shape = arr1.shape[:-1]
    cdef const double[:, ::1] p = np.ascontiguousarray(arr1.reshape(-1, 3))
    cdef const double[:, ::1] q = np.ascontiguousarray(arr2.reshape(-1, 3))
    out_arr = np.empty(p.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(p.shape[0]):
        out[i] = _de00(p[i, 0], p[i, 1], p[i, 2], q[i, 0], q[i, 1], q[i, 2])
    return out_arr.reshape(shape)


def conv3x3_valid(x, weight, bias):
    cdef const double[:, :, ::1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, :, ::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], Cin = src.shape[2]
    cdef Py_ssize_t Cout = w.shape[0]
    if H < 3 or W < 3:
        raise ValueError("input smaller than 3x3 kernel")
    out_arr = np.empty((H - 2, W - 2, Cout), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, o, c, di, dj
    cdef double acc
    for i in range(H - 2):
        for j in range(W - 2):
            for o in range(Cout):
                acc = b[o]
                for c in range(Cin):
                    for di in range(3):
                        for dj in range(3):
                            acc += src[i + di, j + dj, c] * w[o, c, di, dj]
                out[i, j, o] = acc
    return out_arr


def ssim_mean(x, y, mu_x, sxx, kernel, double c1, double c2):
    cdef const double[:, :, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] Y = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, :, ::1] MX = np.ascontiguousarray(mu_x, dtype=np.float64)
    cdef const double[:, :, ::1] SXX = np.ascontiguousarray(sxx, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t n = k.shape[0]
    cdef Py_ssize_t H = X.shape[0], W = X.shape[1], C = X.shape[2]
    cdef Py_ssize_t Ho = H - n + 1, Wo = W - n + 1
    if Y.shape[0] != H or Y.shape[1] != W or Y.shape[2] != C:
        raise ValueError("shape mismatch")
    if Ho < 1 or Wo < 1:
        raise ValueError("image smaller than filter window")
    rows_arr = np.empty((Ho, W, C, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] rows = rows_arr
    cdef Py_ssize_t i, j, c, t
    cdef double a0, a1, a2, yv, kt, my, mx, syy, sxy, total = 0.0
    for i in range(Ho):
        for j in range(W):
            for c in range(C):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                for t in range(n):
                    yv = Y[i + t, j, c]
                    kt = k[t]
                    a0 += yv * kt
                    a1 += (yv * yv) * kt
                    a2 += (X[i + t, j, c] * yv) * kt
                rows[i, j, c, 0] = a0
                rows[i, j, c, 1] = a1
                rows[i, j, c, 2] = a2
    for i in range(Ho):
        for j in range(Wo):
            for c in range(C):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                for t in range(n):
                    kt = k[t]
                    a0 += rows[i, j + t, c, 0] * kt
                    a1 += rows[i, j + t, c, 1] * kt
                    a2 += rows[i, j + t, c, 2] * kt
                my = a0
                mx = MX[i, j, c]
                syy = a1 - my * my
                sxy = a2 - mx * my
                total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / (
                    (mx * mx + my * my + c1) * (SXX[i, j, c] + syy + c2)
                )
    return total / (Ho * Wo * C)


def draw_categorical(logits, u):
    cdef const double[:, ::1] L = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = L.shape[0], K = L.shape[1]
    out_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef double[64] e
    cdef Py_ssize_t i, j, idx
    cdef double m, s, cum
    if K > 64:
        raise ValueError("at most 64 categories supported")
    for i in range(n):
        m = L[i, 0]
        for j in range(1, K):
            if L[i, j] > m:
                m = L[i, j]
        s = 0.0
        for j in range(K):
            e[j] = exp(L[i, j] - m)
            s += e[j]
        cum = 0.0
        idx = 0
        for j in range(K):
            cum += e[j] / s
            if U[i] >= cum:
                idx = j + 1
        if idx > K - 1:
            idx = K - 1
        out[i] = idx
    return out_arr


def categorical_step(double[:, :, ::1] logits, indices, Py_ssize_t r0, Py_ssize_t r1,
                     Py_ssize_t c0, Py_ssize_t c1, double advantage, double lr, bint full,
                     allowed):
    cdef const long long[:, ::1] I = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const unsigned char[:, ::1] A
    cdef bint masked = allowed is not None
    if masked:
        A = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef Py_ssize_t K = logits.shape[2]
    cdef double[64] p
    cdef Py_ssize_t r, c, j, k
    cdef double m, s, g
    if K > 64:
        raise ValueError("at most 64 categories supported")
    for r in range(r0, r1):
        for c in range(c0, c1):
            if masked and A[r, c] == 0:
                continue
            k = I[r, c]
            m = logits[r, c, 0]
            for j in range(1, K):
                if logits[r, c, j] > m:
                    m = logits[r, c, j]
            s = 0.0
            for j in range(K):
                p[j] = exp(logits[r, c, j] - m)
                s += p[j]
            for j in range(K):
                p[j] = p[j] / s
            if full:
                for j in range(K):
                    if j == k:
                        g = advantage * (1.0 - p[j])
                    else:
                        g = advantage * (0.0 - p[j])
                    logits[r, c, j] -= lr * g
            else:
                logits[r, c, k] -= lr * (advantage * (1.0 - p[k]))
