# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: same-padded 1-D convolution and edit distance."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv1d_same_forward(x, F):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], S = xv.shape[1], Cin = xv.shape[2]
    cdef Py_ssize_t W = fv.shape[1], Cout = fv.shape[2]
    cdef Py_ssize_t half = W // 2
    out = np.zeros((B, S, Cout), dtype=np.float64)
    cdef double[:, :, ::1] yv = out
    cdef Py_ssize_t b, s, j, c, o, src, jlo, jhi
    cdef double xval
    with nogil:
        for b in range(B):
            for s in range(S):
                jlo = half - s if s < half else 0
                jhi = S - s + half if S - s + half < W else W
                for j in range(jlo, jhi):
                    src = s + j - half
                    for c in range(Cin):
                        xval = xv[b, src, c]
                        for o in range(Cout):
                            yv[b, s, o] += xval * fv[c, j, o]
    return out.astype(np.asarray(x).dtype, copy=False)


def conv1d_same_backward(x, F, gy):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], S = xv.shape[1], Cin = xv.shape[2]
    cdef Py_ssize_t W = fv.shape[1], Cout = fv.shape[2]
    cdef Py_ssize_t half = W // 2
    gx = np.zeros((B, S, Cin), dtype=np.float64)
    gF = np.zeros((Cin, W, Cout), dtype=np.float64)
    cdef double[:, :, ::1] gxv = gx
    cdef double[:, :, ::1] gfv = gF
    cdef Py_ssize_t b, s, j, c, o, src, jlo, jhi
    cdef double xval, acc
    with nogil:
        for b in range(B):
            for s in range(S):
                jlo = half - s if s < half else 0
                jhi = S - s + half if S - s + half < W else W
                for j in range(jlo, jhi):
                    src = s + j - half
                    for c in range(Cin):
                        xval = xv[b, src, c]
                        acc = 0.0
                        for o in range(Cout):
                            acc = acc + gv[b, s, o] * fv[c, j, o]
                            gfv[c, j, o] += xval * gv[b, s, o]
                        gxv[b, src, c] += acc
    dt = np.asarray(x).dtype
    return gx.astype(dt, copy=False), gF.astype(dt, copy=False)


def edit_distance(a, b):
    cdef long long[::1] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef long long[::1] bv = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0]
    cdef Py_ssize_t i, j
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] cur = cur_arr
    cdef long long[::1] tmp
    cdef long long best, cand
    with nogil:
        for i in range(1, n + 1):
            cur[0] = i
            for j in range(1, m + 1):
                best = prev[j - 1] + (0 if av[i - 1] == bv[j - 1] else 1)
                cand = prev[j] + 1
                if cand < best:
                    best = cand
                cand = cur[j - 1] + 1
                if cand < best:
                    best = cand
                cur[j] = best
            tmp = prev
            prev = cur
            cur = tmp
    return int(prev[m])
