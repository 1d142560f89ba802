"""Vectorized numpy implementation of the split-search kernels.

Kept in exact floating-point lockstep with the compiled backend:
prefix sums are np.cumsum (a strict left fold for float64), gains are
written with the same operation order, selection is first-strict-max with
the missing-to-right direction evaluated before missing-to-left at each
position, features scanned in ascending index order.

``order`` holds the node's row ids sorted per feature with NaN rows at the
tail (stable argsort invariant maintained by the tree growers).
"""

from __future__ import annotations

import numpy as np

__all__ = ["best_split_logistic", "best_split_gini"]

_NEG_INF = -np.inf


def _midpoint(lo: float, hi: float) -> float:
    thr = 0.5 * (lo + hi)
    if thr >= hi:  # adjacent floats can round the midpoint up to hi
        thr = lo
    return thr


def best_split_logistic(X, order, g, h, lam, min_child_hessian):
    """Best Newton-gain split for one node.

    Gain = 0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)), candidates
    between distinct adjacent sorted values, both missing-routing
    directions tried. Returns (feature, threshold, missing_left, gain);
    feature is -1 when no split has strictly positive gain.
    """
    p, m = order.shape
    best_feat = -1
    best_thr = 0.0
    best_left = 0
    best_gain = 0.0
    for f in range(p):
        idx = order[f]
        vals = X[idx, f]
        nv = m - int(np.count_nonzero(np.isnan(vals)))
        if nv < 2:
            continue
        cg = np.cumsum(g[idx])
        ch = np.cumsum(h[idx])
        G = cg[-1]
        H = ch[-1]
        g_miss = G - cg[nv - 1]
        h_miss = H - ch[nv - 1]
        parent = G * G / (H + lam)

        v = vals[:nv]
        cand = v[:-1] != v[1:]
        if not cand.any():
            continue
        gl_r = cg[: nv - 1]
        hl_r = ch[: nv - 1]
        gr_r = G - gl_r
        hr_r = H - hl_r
        ok_r = cand & (hl_r >= min_child_hessian) & (hr_r >= min_child_hessian)
        gl_l = gl_r + g_miss
        hl_l = hl_r + h_miss
        gr_l = G - gl_l
        hr_l = H - hl_l
        ok_l = cand & (hl_l >= min_child_hessian) & (hr_l >= min_child_hessian)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            gain_r = 0.5 * (gl_r * gl_r / (hl_r + lam) + gr_r * gr_r / (hr_r + lam) - parent)
            gain_l = 0.5 * (gl_l * gl_l / (hl_l + lam) + gr_l * gr_l / (hr_l + lam) - parent)
        gain_r = np.where(ok_r, gain_r, _NEG_INF)
        gain_l = np.where(ok_l, gain_l, _NEG_INF)
        use_left = gain_l > gain_r
        gain = np.where(use_left, gain_l, gain_r)
        pos = int(np.argmax(gain))
        if gain[pos] > best_gain:
            best_gain = float(gain[pos])
            best_feat = f
            best_thr = _midpoint(float(v[pos]), float(v[pos + 1]))
            best_left = int(use_left[pos])
    return best_feat, best_thr, best_left, best_gain


def best_split_gini(X, order, w0, w1, min_leaf_weight):
    """Best weighted-Gini split for one node.

    w0/w1 carry each row's effective weight if its class is 0/1 (zero
    otherwise). Impurity mass of a child is W - (W0^2 + W1^2)/W; the split
    maximizing the decrease against the parent is returned as
    (feature, threshold, missing_left, decrease), feature -1 when no
    strictly positive decrease exists.
    """
    p, m = order.shape
    best_feat = -1
    best_thr = 0.0
    best_left = 0
    best_dec = 0.0
    for f in range(p):
        idx = order[f]
        vals = X[idx, f]
        nv = m - int(np.count_nonzero(np.isnan(vals)))
        if nv < 2:
            continue
        c0 = np.cumsum(w0[idx])
        c1 = np.cumsum(w1[idx])
        W0 = c0[-1]
        W1 = c1[-1]
        W = W0 + W1
        if not W > 0.0:
            continue
        m0 = W0 - c0[nv - 1]
        m1 = W1 - c1[nv - 1]
        parent = W - (W0 * W0 + W1 * W1) / W

        v = vals[:nv]
        cand = v[:-1] != v[1:]
        if not cand.any():
            continue
        l0_r = c0[: nv - 1]
        l1_r = c1[: nv - 1]
        dec_r = _gini_decrease(parent, W0, W1, l0_r, l1_r, cand, min_leaf_weight)
        dec_l = _gini_decrease(parent, W0, W1, l0_r + m0, l1_r + m1, cand, min_leaf_weight)
        use_left = dec_l > dec_r
        dec = np.where(use_left, dec_l, dec_r)
        pos = int(np.argmax(dec))
        if dec[pos] > best_dec:
            best_dec = float(dec[pos])
            best_feat = f
            best_thr = _midpoint(float(v[pos]), float(v[pos + 1]))
            best_left = int(use_left[pos])
    return best_feat, best_thr, best_left, best_dec


def _gini_decrease(parent, W0, W1, L0, L1, cand, min_leaf_weight):
    R0 = W0 - L0
    R1 = W1 - L1
    WL = L0 + L1
    WR = R0 + R1
    ok = cand & (WL > 0.0) & (WR > 0.0) & (WL >= min_leaf_weight) & (WR >= min_leaf_weight)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        child = (WL - (L0 * L0 + L1 * L1) / WL) + (WR - (R0 * R0 + R1 * R1) / WR)
        dec = parent - child
    return np.where(ok, dec, _NEG_INF)
