# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: the shared-event simulation kernel and a generic
union-find component labeler.  Must stay semantically identical to the
pure-Python fallbacks (`_pyloop.coupled_loop`, the labeler in `clusters`):
only float comparisons and bit flips, no float arithmetic, so both backends
produce bit-identical results.
"""

import numpy as np

cimport numpy as cnp

BACKEND = "cython"


def coupled_loop(
    cnp.uint8_t[:, ::1] bits,
    cnp.uint8_t[::1] kinds,
    cnp.float64_t[::1] qs,
    cnp.float64_t[::1] times,
    cnp.int64_t[::1] sites_ext,
    cnp.float64_t[::1] marks,
    long long evt_base,
    cnp.int32_t[::1] rule_ptr,
    cnp.int64_t[::1] rule_deltas,
    cnp.uint8_t[::1] orange,
    long long ocount,
    cnp.int64_t[::1] ball_deltas,
    cnp.int32_t[::1] dom_lo,
    cnp.int32_t[::1] dom_hi,
    int inc_ref,
    cnp.int32_t[::1] inc_procs,
    cnp.uint8_t[::1] probe_mask,
    int olog_mode,
    long long orange_probe,
    int record_changes,
    int stop_on_empty,
    cnp.int64_t[::1] chg_evt,
    cnp.int32_t[::1] chg_proc,
    cnp.uint8_t[::1] chg_new,
    cnp.int64_t[::1] olog_evt,
    cnp.uint8_t[::1] olog_new,
    cnp.int64_t[::1] viol_evt,
    cnp.int64_t[::1] viol_site,
    cnp.int32_t[::1] viol_kind,
    cnp.int32_t[::1] viol_proc,
    cnp.int64_t[::1] first_change,
):
    cdef Py_ssize_t n_proc = bits.shape[0]
    cdef Py_ssize_t n_rules = rule_ptr.shape[0] - 1
    cdef bint track = orange.shape[0] > 0
    cdef Py_ssize_t n_events = times.shape[0]
    cdef Py_ssize_t viol_cap = viol_evt.shape[0]
    cdef bint has_probe = probe_mask.shape[0] > 0

    cdef long long n_chg = 0, n_olog = 0, n_viol = 0
    cdef long long empty_evt = -1
    cdef Py_ssize_t processed = 0

    cdef Py_ssize_t e, p, r, k, j, b
    cdef long long xi, gidx
    cdef double mark
    cdef cnp.uint8_t old, new, sat, ok, zeta
    cdef bint near

    for e in range(n_events):
        xi = sites_ext[e]
        mark = marks[e]
        gidx = evt_base + e
        for p in range(n_proc):
            old = bits[p, xi]
            sat = 0
            for r in range(n_rules):
                ok = 1
                for k in range(rule_ptr[r], rule_ptr[r + 1]):
                    if bits[p, xi + rule_deltas[k]] == 0:
                        ok = 0
                        break
                if ok:
                    sat = 1
                    break
            if kinds[p] == 1:
                if sat:
                    new = 1 if mark <= qs[p] else 0
                else:
                    new = old
            else:
                if mark > qs[p]:
                    new = 0
                elif sat:
                    new = 1
                else:
                    new = old
            if new != old:
                bits[p, xi] = new
                if record_changes:
                    chg_evt[n_chg] = gidx
                    chg_proc[n_chg] = <cnp.int32_t> p
                    chg_new[n_chg] = new
                    n_chg += 1
                if has_probe and probe_mask[xi] and first_change[p] < 0:
                    first_change[p] = gidx
        if track:
            zeta = bits[0, xi]
            if zeta == 1:
                if orange[xi]:
                    orange[xi] = 0
                    ocount -= 1
                    if olog_mode == 2 or (olog_mode == 1 and xi == orange_probe):
                        olog_evt[n_olog] = gidx
                        olog_new[n_olog] = 0
                        n_olog += 1
            else:
                if not orange[xi]:
                    near = False
                    for b in range(ball_deltas.shape[0]):
                        if orange[xi + ball_deltas[b]]:
                            near = True
                            break
                    if near:
                        orange[xi] = 1
                        ocount += 1
                        if olog_mode == 2 or (olog_mode == 1 and xi == orange_probe):
                            olog_evt[n_olog] = gidx
                            olog_new[n_olog] = 1
                            n_olog += 1
            if ocount == 0 and empty_evt < 0:
                empty_evt = gidx
        for j in range(dom_lo.shape[0]):
            if bits[dom_lo[j], xi] > bits[dom_hi[j], xi]:
                if n_viol < viol_cap:
                    viol_evt[n_viol] = gidx
                    viol_site[n_viol] = xi
                    viol_kind[n_viol] = 0
                    viol_proc[n_viol] = dom_hi[j]
                n_viol += 1
        if inc_ref >= 0:
            for j in range(inc_procs.shape[0]):
                p = inc_procs[j]
                if bits[inc_ref, xi] != bits[p, xi] and (not track or not orange[xi]):
                    if n_viol < viol_cap:
                        viol_evt[n_viol] = gidx
                        viol_site[n_viol] = xi
                        viol_kind[n_viol] = 1
                        viol_proc[n_viol] = <cnp.int32_t> p
                    n_viol += 1
        processed = e + 1
        if stop_on_empty and track and ocount == 0:
            break
    return n_chg, n_olog, n_viol, ocount, empty_evt, processed


cdef inline cnp.int32_t _find(cnp.int32_t[::1] parent, cnp.int32_t i) nogil:
    while parent[i] != i:
        parent[i] = parent[parent[i]]  # path halving
        i = parent[i]
    return i


def label_components(cnp.uint8_t[::1] mask, cnp.int64_t[::1] deltas):
    """Union-find labeling of a flattened, zero-padded indicator array.

    `deltas` are the flat-index offsets of the forward half of the adjacency
    ball; the padding must be at least the ball radius so xi+delta never
    leaves the array.  Returns int32 labels, 0 for background, components
    numbered from 1 in first-seen order.
    """
    cdef Py_ssize_t n = mask.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] parent_arr = np.arange(n, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr
    cdef Py_ssize_t i, b
    cdef long long j
    cdef cnp.int32_t ri, rj

    for i in range(n):
        if mask[i]:
            for b in range(deltas.shape[0]):
                j = i + deltas[b]
                if mask[j]:
                    ri = _find(parent, <cnp.int32_t> i)
                    rj = _find(parent, <cnp.int32_t> j)
                    if ri != rj:
                        if ri < rj:
                            parent[rj] = ri
                        else:
                            parent[ri] = rj
    cdef cnp.ndarray[cnp.int32_t, ndim=1] labels_arr = np.zeros(n, dtype=np.int32)
    cdef cnp.int32_t[::1] labels = labels_arr
    cdef cnp.int32_t next_label = 0
    cdef cnp.int32_t root
    # union always hangs the larger root under the smaller, so each
    # component's final root is its minimal flat index and is seen first
    for i in range(n):
        if mask[i]:
            root = _find(parent, <cnp.int32_t> i)
            if root == <cnp.int32_t> i:
                next_label += 1
                labels[i] = next_label
            else:
                labels[i] = labels[root]
    return labels_arr
