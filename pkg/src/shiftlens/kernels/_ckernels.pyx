# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled split-search kernels.

Semantics are defined by the numpy fallback (_pykernels); this module must
stay bit-identical to it: sequential prefix sums, identical gain
expressions, first-strict-max selection, missing-to-right tried before
missing-to-left at each position.
"""

from libc.math cimport INFINITY, isnan


cdef inline double _midpoint(double lo, double hi) nogil:
    cdef double thr = 0.5 * (lo + hi)
    if thr >= hi:
        thr = lo
    return thr


def best_split_logistic(double[:, ::1] X, int[:, ::1] order,
                        double[::1] g, double[::1] h,
                        double lam, double min_child_hessian):
    """See _pykernels.best_split_logistic."""
    cdef Py_ssize_t p = order.shape[0]
    cdef Py_ssize_t m = order.shape[1]
    cdef int best_feat = -1
    cdef double best_thr = 0.0
    cdef int best_left = 0
    cdef double best_gain = 0.0

    cdef Py_ssize_t f, i, nv, r
    cdef double acc_g, acc_h, cgv, chv, G, H, g_miss, h_miss, parent
    cdef double cg, ch, v, vn
    cdef double gl, hl, gr, hr, gain_r, gain_l, gain
    cdef int use_left

    for f in range(p):
        acc_g = 0.0
        acc_h = 0.0
        nv = m
        cgv = 0.0
        chv = 0.0
        for i in range(m):
            r = order[f, i]
            if nv == m and isnan(X[r, f]):
                nv = i
                cgv = acc_g
                chv = acc_h
            acc_g += g[r]
            acc_h += h[r]
        if nv == m:
            cgv = acc_g
            chv = acc_h
        if nv < 2:
            continue
        G = acc_g
        H = acc_h
        g_miss = G - cgv
        h_miss = H - chv
        parent = G * G / (H + lam)

        cg = 0.0
        ch = 0.0
        for i in range(nv - 1):
            r = order[f, i]
            cg += g[r]
            ch += h[r]
            v = X[r, f]
            vn = X[order[f, i + 1], f]
            if v == vn:
                continue
            gl = cg
            hl = ch
            gr = G - gl
            hr = H - hl
            if hl >= min_child_hessian and hr >= min_child_hessian:
                gain_r = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
            else:
                gain_r = -INFINITY
            gl = cg + g_miss
            hl = ch + h_miss
            gr = G - gl
            hr = H - hl
            if hl >= min_child_hessian and hr >= min_child_hessian:
                gain_l = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
            else:
                gain_l = -INFINITY
            if gain_l > gain_r:
                gain = gain_l
                use_left = 1
            else:
                gain = gain_r
                use_left = 0
            if gain > best_gain:
                best_gain = gain
                best_feat = <int> f
                best_thr = _midpoint(v, vn)
                best_left = use_left
    return best_feat, best_thr, best_left, best_gain


def best_split_gini(double[:, ::1] X, int[:, ::1] order,
                    double[::1] w0, double[::1] w1,
                    double min_leaf_weight):
    """See _pykernels.best_split_gini."""
    cdef Py_ssize_t p = order.shape[0]
    cdef Py_ssize_t m = order.shape[1]
    cdef int best_feat = -1
    cdef double best_thr = 0.0
    cdef int best_left = 0
    cdef double best_dec = 0.0

    cdef Py_ssize_t f, i, nv, r
    cdef double a0, a1, c0v, c1v, W0, W1, W, m0, m1, parent
    cdef double l0, l1, v, vn
    cdef double L0, L1, R0, R1, WL, WR, dec_r, dec_l, dec
    cdef int use_left

    for f in range(p):
        a0 = 0.0
        a1 = 0.0
        nv = m
        c0v = 0.0
        c1v = 0.0
        for i in range(m):
            r = order[f, i]
            if nv == m and isnan(X[r, f]):
                nv = i
                c0v = a0
                c1v = a1
            a0 += w0[r]
            a1 += w1[r]
        if nv == m:
            c0v = a0
            c1v = a1
        if nv < 2:
            continue
        W0 = a0
        W1 = a1
        W = W0 + W1
        if not W > 0.0:
            continue
        m0 = W0 - c0v
        m1 = W1 - c1v
        parent = W - (W0 * W0 + W1 * W1) / W

        l0 = 0.0
        l1 = 0.0
        for i in range(nv - 1):
            r = order[f, i]
            l0 += w0[r]
            l1 += w1[r]
            v = X[r, f]
            vn = X[order[f, i + 1], f]
            if v == vn:
                continue
            L0 = l0
            L1 = l1
            R0 = W0 - L0
            R1 = W1 - L1
            WL = L0 + L1
            WR = R0 + R1
            if WL > 0.0 and WR > 0.0 and WL >= min_leaf_weight and WR >= min_leaf_weight:
                dec_r = parent - ((WL - (L0 * L0 + L1 * L1) / WL) + (WR - (R0 * R0 + R1 * R1) / WR))
            else:
                dec_r = -INFINITY
            L0 = l0 + m0
            L1 = l1 + m1
            R0 = W0 - L0
            R1 = W1 - L1
            WL = L0 + L1
            WR = R0 + R1
            if WL > 0.0 and WR > 0.0 and WL >= min_leaf_weight and WR >= min_leaf_weight:
                dec_l = parent - ((WL - (L0 * L0 + L1 * L1) / WL) + (WR - (R0 * R0 + R1 * R1) / WR))
            else:
                dec_l = -INFINITY
            if dec_l > dec_r:
                dec = dec_l
                use_left = 1
            else:
                dec = dec_r
                use_left = 0
            if dec > best_dec:
                best_dec = dec
                best_feat = <int> f
                best_thr = _midpoint(v, vn)
                best_left = use_left
    return best_feat, best_thr, best_left, best_dec
