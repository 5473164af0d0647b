# cython: language_level=3
"""Compiled split search and tree traversal.

Mirrors ``_fallback`` operation for operation so both backends yield
bit-identical ensembles.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport isnan

cnp.import_array()


def find_splits(
    const double[:, ::1] sorted_vals,
    const cnp.intp_t[:, ::1] sorted_idx,
    const cnp.intp_t[::1] n_valid,
    const double[::1] g,
    const double[::1] h,
    const cnp.int64_t[::1] node_of,
    Py_ssize_t n_nodes,
    const cnp.intp_t[::1] cols,
    const double[::1] G_tot,
    const double[::1] H_tot,
    double l2,
    double min_child_weight,
):
    cdef Py_ssize_t n = sorted_vals.shape[1]
    cdef Py_ssize_t ci, c, j, i, k
    cdef double v, a, thr, gl, hl, gr, hr, gain
    cdef cnp.int64_t kk

    best_col_a = np.full(n_nodes, -1, dtype=np.intp)
    best_thr_a = np.zeros(n_nodes)
    best_gain_a = np.zeros(n_nodes)
    best_left_a = np.ones(n_nodes, dtype=np.uint8)
    cdef cnp.intp_t[::1] best_col = best_col_a
    cdef double[::1] best_thr = best_thr_a
    cdef double[::1] best_gain = best_gain_a
    cdef cnp.uint8_t[::1] best_left = best_left_a

    parent_a = np.empty(n_nodes)
    cdef double[::1] parent = parent_a
    for k in range(n_nodes):
        parent[k] = G_tot[k] * G_tot[k] / (H_tot[k] + l2)

    GL_a = np.zeros(n_nodes)
    HL_a = np.zeros(n_nodes)
    Gm_a = np.zeros(n_nodes)
    Hm_a = np.zeros(n_nodes)
    last_a = np.zeros(n_nodes)
    cnt_a = np.zeros(n_nodes, dtype=np.intp)
    cdef double[::1] GL = GL_a
    cdef double[::1] HL = HL_a
    cdef double[::1] Gm = Gm_a
    cdef double[::1] Hm = Hm_a
    cdef double[::1] last = last_a
    cdef cnp.intp_t[::1] cnt = cnt_a

    with nogil:
        for ci in range(cols.shape[0]):
            c = cols[ci]
            for k in range(n_nodes):
                GL[k] = 0.0
                HL[k] = 0.0
                Gm[k] = 0.0
                Hm[k] = 0.0
                cnt[k] = 0
            for j in range(n_valid[c], n):
                i = sorted_idx[c, j]
                kk = node_of[i]
                if kk >= 0:
                    Gm[kk] = Gm[kk] + g[i]
                    Hm[kk] = Hm[kk] + h[i]
            for j in range(n_valid[c]):
                i = sorted_idx[c, j]
                kk = node_of[i]
                if kk < 0:
                    continue
                v = sorted_vals[c, j]
                if cnt[kk] > 0 and v != last[kk]:
                    a = last[kk]
                    thr = a + (v - a) * 0.5
                    if thr <= a:
                        thr = v
                    # missing rows to the left
                    gl = GL[kk] + Gm[kk]
                    hl = HL[kk] + Hm[kk]
                    gr = G_tot[kk] - gl
                    hr = H_tot[kk] - hl
                    if hl >= min_child_weight and hr >= min_child_weight:
                        gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent[kk])
                        if gain > best_gain[kk]:
                            best_gain[kk] = gain
                            best_col[kk] = c
                            best_thr[kk] = thr
                            best_left[kk] = 1
                    # missing rows to the right; identical to the above when none are missing
                    if Hm[kk] != 0.0 or Gm[kk] != 0.0:
                        gl = GL[kk]
                        hl = HL[kk]
                        gr = G_tot[kk] - gl
                        hr = H_tot[kk] - hl
                        if hl >= min_child_weight and hr >= min_child_weight:
                            gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent[kk])
                            if gain > best_gain[kk]:
                                best_gain[kk] = gain
                                best_col[kk] = c
                                best_thr[kk] = thr
                                best_left[kk] = 0
                GL[kk] = GL[kk] + g[i]
                HL[kk] = HL[kk] + h[i]
                cnt[kk] += 1
                last[kk] = v
    return best_col_a, best_thr_a, best_gain_a, best_left_a.astype(bool)


def apply_tree(
    const double[:, ::1] X,
    const cnp.intp_t[::1] feature,
    const double[::1] threshold,
    const cnp.uint8_t[::1] default_left,
    const cnp.intp_t[::1] left,
    const cnp.intp_t[::1] right,
):
    """Leaf index reached by every row."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t r, node
    cdef double x
    out_a = np.empty(n, dtype=np.intp)
    cdef cnp.intp_t[::1] out = out_a
    with nogil:
        for r in range(n):
            node = 0
            while feature[node] >= 0:
                x = X[r, feature[node]]
                if isnan(x):
                    node = left[node] if default_left[node] else right[node]
                elif x < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r] = node
    return out_a
