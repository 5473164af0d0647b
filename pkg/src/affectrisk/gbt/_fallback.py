"""Pure numpy versions of the compiled kernels in ``_splitcore``.

Accumulations are sequential (``np.cumsum``) in the same order as the
compiled loops, so results agree bit for bit.
"""
import numpy as np


def find_splits(sorted_vals, sorted_idx, n_valid, g, h, node_of, n_nodes, cols, G_tot, H_tot, l2, min_child_weight):
    best_col = np.full(n_nodes, -1, dtype=np.intp)
    best_thr = np.zeros(n_nodes)
    best_gain = np.zeros(n_nodes)
    best_left = np.ones(n_nodes, dtype=bool)
    parent = G_tot * G_tot / (H_tot + l2)

    for c in cols:
        nv = n_valid[c]
        order = sorted_idx[c, :nv]
        vals = sorted_vals[c, :nv]
        order_nodes = node_of[order]
        miss = sorted_idx[c, nv:]
        miss_nodes = node_of[miss]
        for k in range(n_nodes):
            sel = order_nodes == k
            rows = order[sel]
            if rows.size < 2:
                continue
            v = vals[sel]
            change = np.nonzero(v[1:] != v[:-1])[0]
            if change.size == 0:
                continue
            mrows = miss[miss_nodes == k]
            Gm = np.cumsum(g[mrows])[-1] if mrows.size else 0.0
            Hm = np.cumsum(h[mrows])[-1] if mrows.size else 0.0
            gs = np.cumsum(g[rows])[change]
            hs = np.cumsum(h[rows])[change]
            a = v[change]
            b = v[change + 1]
            thr = a + (b - a) * 0.5
            thr = np.where(thr <= a, b, thr)

            gains = np.full((change.size, 2), -np.inf)
            for side, (gl, hl) in enumerate(((gs + Gm, hs + Hm), (gs, hs))):
                gr = G_tot[k] - gl
                hr = H_tot[k] - hl
                ok = (hl >= min_child_weight) & (hr >= min_child_weight)
                gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent[k])
                gains[:, side] = np.where(ok, gain, -np.inf)
            flat = gains.ravel()
            j = int(np.argmax(flat))
            if flat[j] > best_gain[k]:
                best_gain[k] = flat[j]
                best_col[k] = c
                best_thr[k] = thr[j // 2]
                best_left[k] = j % 2 == 0
    return best_col, best_thr, best_gain, best_left


def apply_tree(X, feature, threshold, default_left, left, right):
    node = np.zeros(X.shape[0], dtype=np.intp)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        f = feature[nd]
        x = X[r, f]
        go_left = np.where(np.isnan(x), default_left[nd].astype(bool), x < threshold[nd])
        node[r] = np.where(go_left, left[nd], right[nd])
        active[r] = feature[node[r]] >= 0
    return node
