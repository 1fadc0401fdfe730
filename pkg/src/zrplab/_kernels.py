"""Compiled event loops for the graphical construction."""
from __future__ import annotations

import numpy as np
from numba import njit

INF = np.int64(2**62)
FAR = np.int64(2**40)  # label position sentinel for particles that left the window
NO_LABEL = np.int64(-(2**62))  # no label moved in this replica


@njit(cache=True)
def _g(gtab, n):
    if n >= gtab.shape[0]:
        return 1.0
    return gtab[n]


@njit(cache=True)
def _touch(integ, last, r, s, t, t_from, occ_old):
    if t > t_from and occ_old < INF:
        t0 = last[r, s]
        if t0 < t_from:
            t0 = t_from
        integ[r, s] += occ_old * (t - t0)
    last[r, s] = t


@njit(cache=True)
def _advance_paths(t, occ, path_times, path_dirs, path_next, path_bond, gamma, path_err):
    n_rep = occ.shape[0]
    n_sites = occ.shape[1]
    for p in range(path_times.shape[0]):
        while path_next[p] < path_times.shape[1] and path_times[p, path_next[p]] <= t:
            d = path_dirs[p, path_next[p]]
            b = path_bond[p]
            if d > 0:
                # observer moves right: particles at the new position fall behind it
                nb = b + 1
                for r in range(n_rep):
                    if 0 <= nb < n_sites:
                        if occ[r, nb] >= INF:
                            path_err[0] += 1
                        else:
                            gamma[r, p] -= occ[r, nb]
                path_bond[p] = nb
            elif d < 0:
                for r in range(n_rep):
                    if 0 <= b < n_sites:
                        if occ[r, b] >= INF:
                            path_err[0] += 1
                        else:
                            gamma[r, p] += occ[r, b]
                path_bond[p] = b - 1
            path_next[p] += 1


@njit(cache=True)
def run_events(times, sites, us, zs, ptr, until, alpha, occ, gtab, leak,
               path_times, path_dirs, path_next, path_bond, gamma, path_err,
               pair_a, pair_b, pair_lo, pair_hi, viol,
               integ, last, t_from, do_integ):
    """Apply events ``ptr, ptr+1, ...`` with time ``<= until`` to every replica.

    A replica accepts event ``(t, x, u, z)`` iff ``u <= alpha[r, x] g(occ[r, x])``.
    Occupancies equal to ``INF`` never change.  Finite particles sent outside
    the window are removed and counted in ``leak``.  Returns the new pointer.
    """
    n_rep = occ.shape[0]
    n_sites = occ.shape[1]
    n_ev = times.shape[0]
    e = ptr
    while e < n_ev and times[e] <= until:
        t = times[e]
        if path_times.shape[0] > 0:
            _advance_paths(t, occ, path_times, path_dirs, path_next, path_bond, gamma, path_err)
        x = sites[e]
        z = zs[e]
        y = x + z
        u = us[e]
        for r in range(n_rep):
            n = occ[r, x]
            if n == 0:
                continue
            rate = alpha[r, x] * (1.0 if n >= INF else _g(gtab, n))
            if u > rate:
                continue
            if n < INF:
                if do_integ:
                    _touch(integ, last, r, x, t, t_from, n)
                occ[r, x] = n - 1
            if 0 <= y < n_sites:
                m = occ[r, y]
                if m < INF:
                    if do_integ:
                        _touch(integ, last, r, y, t, t_from, m)
                    occ[r, y] = m + 1
            elif n < INF:
                leak[r] += 1
            for p in range(path_bond.shape[0]):
                b = path_bond[p]
                if z > 0 and x <= b and b < y:
                    gamma[r, p] += 1
                elif z < 0 and y <= b and b < x:
                    gamma[r, p] -= 1
        for k in range(pair_a.shape[0]):
            a = pair_a[k]
            bb = pair_b[k]
            if pair_lo[k] <= x <= pair_hi[k] and occ[a, x] > occ[bb, x]:
                viol[k] += 1
            elif 0 <= y < n_sites and pair_lo[k] <= y <= pair_hi[k] and occ[a, y] > occ[bb, y]:
                viol[k] += 1
        e += 1
    if path_times.shape[0] > 0:
        _advance_paths(until, occ, path_times, path_dirs, path_next, path_bond, gamma, path_err)
    return e


@njit(cache=True)
def run_labels(times, sites, us, zs, ptr, until, alpha, occ, gtab, leak,
               pos, lab_min, lo, k_shift, viol, fault):
    """Two coupled replicas with labelled particles (nearest-neighbour jumps).

    ``pos[r, i]`` is the position of label ``lab_min[r] + i``; ``lo[r, x]`` the
    lowest label at site ``x``.  A right jump moves the highest label at the
    site, a left jump the lowest.  After each move the order
    ``sigma_n >= sigma'_{n - k_shift}`` is checked for the moved labels.
    ``fault = 1`` makes replica 0 move its lowest label on right jumps once
    (negative control).
    """
    n_sites = occ.shape[1]
    n_ev = times.shape[0]
    n_lab0 = pos.shape[1]
    moved = np.empty(2, dtype=np.int64)
    e = ptr
    while e < n_ev and times[e] <= until:
        x = sites[e]
        z = zs[e]
        u = us[e]
        y = x + z
        moved[0] = NO_LABEL
        moved[1] = NO_LABEL
        for r in range(2):
            n = occ[r, x]
            if n == 0:
                continue
            if u > alpha[r, x] * _g(gtab, n):
                continue
            if z > 0:
                if fault == 1 and r == 0 and n >= 2:
                    lab = lo[r, x]
                    lo[r, x] = lab + 1
                    fault = 2
                else:
                    lab = lo[r, x] + n - 1
                occ[r, x] = n - 1
                if 0 <= y < n_sites:
                    if occ[r, y] == 0 or lab < lo[r, y]:
                        lo[r, y] = lab
                    occ[r, y] += 1
                    newpos = y
                else:
                    leak[r] += 1
                    newpos = FAR
            else:
                lab = lo[r, x]
                lo[r, x] = lab + 1
                occ[r, x] = n - 1
                if 0 <= y < n_sites:
                    if occ[r, y] == 0:
                        lo[r, y] = lab
                    occ[r, y] += 1
                    newpos = y
                else:
                    leak[r] += 1
                    newpos = -FAR
            i = lab - lab_min[r]
            if 0 <= i < n_lab0:
                pos[r, i] = newpos
            moved[r] = lab
        # order check for the moved labels once both replicas consumed the event
        for r in range(2):
            if moved[r] == NO_LABEL:
                continue
            i = moved[r] - lab_min[r]
            if r == 0:
                j = moved[r] - k_shift - lab_min[1]
                if 0 <= i < n_lab0 and 0 <= j < n_lab0 and pos[1, j] != FAR + 1:
                    if pos[0, i] < pos[1, j]:
                        viol[0] += 1
            else:
                j = moved[r] + k_shift - lab_min[0]
                if 0 <= i < n_lab0 and 0 <= j < n_lab0 and pos[0, j] != FAR + 1:
                    if pos[0, j] < pos[1, i]:
                        viol[0] += 1
        e += 1
    return e
