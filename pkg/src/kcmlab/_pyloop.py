"""Pure-Python fallback for the hot event loop.

Semantics must match ``_kernels.coupled_loop`` bit for bit: the loop only
compares floats and flips bits, so the two backends produce identical
trajectories.  This version is the readable reference; the compiled one is
the production path (roughly two orders of magnitude faster).
"""

BACKEND = "python"


def coupled_loop(
    bits,
    kinds,
    qs,
    times,
    sites_ext,
    marks,
    evt_base,
    rule_ptr,
    rule_deltas,
    orange,
    ocount,
    ball_deltas,
    dom_lo,
    dom_hi,
    inc_ref,
    inc_procs,
    probe_mask,
    olog_mode,
    orange_probe,
    record_changes,
    stop_on_empty,
    chg_evt,
    chg_proc,
    chg_new,
    olog_evt,
    olog_new,
    viol_evt,
    viol_site,
    viol_kind,
    viol_proc,
    first_change,
):
    """Run every process over one shared event stream.

    Process 0 is the reference for orange tracking (must be the contact
    process when tracking is on).  Returns
    (n_chg, n_olog, n_viol, ocount, empty_evt, n_processed).
    """
    n_proc = bits.shape[0]
    n_rules = rule_ptr.shape[0] - 1
    track = orange.shape[0] > 0
    n_events = times.shape[0]
    viol_cap = viol_evt.shape[0]

    n_chg = 0
    n_olog = 0
    n_viol = 0
    empty_evt = -1
    processed = 0

    for e in range(n_events):
        xi = sites_ext[e]
        mark = marks[e]
        gidx = evt_base + e
        changed_any = False
        for p in range(n_proc):
            row = bits[p]
            old = row[xi]
            # constraint: some rule fully infected around the site
            sat = 0
            for r in range(n_rules):
                ok = 1
                for k in range(rule_ptr[r], rule_ptr[r + 1]):
                    if row[xi + rule_deltas[k]] == 0:
                        ok = 0
                        break
                if ok:
                    sat = 1
                    break
            if kinds[p] == 1:  # KCM: resample only when constrained
                if sat:
                    new = 1 if mark <= qs[p] else 0
                else:
                    new = old
            else:  # CP: unconstrained writes of 0
                if mark > qs[p]:
                    new = 0
                elif sat:
                    new = 1
                else:
                    new = old
            if new != old:
                row[xi] = new
                changed_any = True
                if record_changes:
                    chg_evt[n_chg] = gidx
                    chg_proc[n_chg] = p
                    chg_new[n_chg] = new
                    n_chg += 1
                if probe_mask.shape[0] and probe_mask[xi] and first_change[p] < 0:
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
        # exact pathwise checks at the updated site
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
                        viol_proc[n_viol] = p
                    n_viol += 1
        processed = e + 1
        if stop_on_empty and track and ocount == 0:
            break
    return n_chg, n_olog, n_viol, ocount, empty_evt, processed
