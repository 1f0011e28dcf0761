# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled contention kernel: the per-trial RA block loop.

Same contract as ``_contention_py.run_blocks`` (the reference
semantics live there).  Decision arithmetic replays the fallback's
operation order exactly, so integer tallies match it bit for bit; the
sum-rate accumulator may differ in the last bits only.
"""

from libc.math cimport log2
from libc.stdint cimport int64_t, uint8_t

import numpy as np

MAX_ATTEMPTS = 10


def run_blocks(int protocol,
               const double[::1] lhs,
               const double[::1] eps,
               const uint8_t[::1] has_vis,
               const double[::1] noise_sd,
               int noisy,
               const double[:, ::1] beta,
               const uint8_t[:, ::1] vis,
               const double[::1] rho,
               double sigma2, double varpi, int literal_eq3,
               double P_a, double P_na,
               const double[:, ::1] u_attempt,
               const int64_t[:, ::1] pilot_draw,
               const double[:, ::1] eta,
               int tau,
               int64_t[::1] attempts,
               uint8_t[::1] in_episode,
               int64_t[::1] accepted_hist,
               int64_t[::1] per_block_attempting,
               int64_t[::1] per_block_accepted,
               double[::1] per_block_sum_rate):
    cdef Py_ssize_t n_blocks = u_attempt.shape[0]
    cdef Py_ssize_t K = u_attempt.shape[1]
    cdef Py_ssize_t B = beta.shape[1]
    cdef int attempt_cap = MAX_ATTEMPTS

    cdef int64_t[::1] cont = np.empty(K, dtype=np.int64)
    cdef int64_t[::1] rtx = np.empty(K, dtype=np.int64)
    cdef int64_t[::1] sel = np.empty(K, dtype=np.int64)
    cdef int64_t[::1] admsel = np.empty(K, dtype=np.int64)
    cdef int64_t[::1] pres = np.empty(K, dtype=np.int64)
    cdef int64_t[::1] counts = np.empty(B, dtype=np.int64)
    cdef double[::1] alpha = np.empty(tau, dtype=np.float64)
    cdef uint8_t[::1] adm_flag = np.zeros(K, dtype=np.uint8)

    cdef Py_ssize_t blk, k, b, i, t, u1, u2, tmp
    cdef Py_ssize_t n_cont, n_rtx, m, n_adm_pilot, n_adm_total, npres
    cdef double p, a, rate, p1, p2, g1, g2
    cdef int64_t dropped = 0
    cdef int bad

    for blk in range(n_blocks):
        # contention draw (advances every contender's attempt counter)
        n_cont = 0
        for k in range(K):
            p = P_na if in_episode[k] else P_a
            if u_attempt[blk, k] < p:
                cont[n_cont] = k
                n_cont += 1
                attempts[k] += 1
        per_block_attempting[blk] = n_cont
        if n_cont == 0:
            per_block_accepted[blk] = 0
            per_block_sum_rate[blk] = 0.0
            continue

        # genie totals per pilot, in ascending-user order
        for t in range(tau):
            alpha[t] = 0.0
        for i in range(n_cont):
            k = cont[i]
            alpha[pilot_draw[blk, k]] += lhs[k]

        # retransmission decisions
        n_rtx = 0
        for i in range(n_cont):
            k = cont[i]
            a = alpha[pilot_draw[blk, k]]
            if noisy:
                a = a + eta[blk, k] * noise_sd[k]
                if a < 0.0:
                    a = 0.0
            if has_vis[k] and lhs[k] > 0.5 * a + eps[k]:
                rtx[n_rtx] = k
                n_rtx += 1

        # per-pilot resolution and rate accumulation
        rate = 0.0
        n_adm_total = 0
        for t in range(tau):
            m = 0
            for i in range(n_rtx):
                k = rtx[i]
                if pilot_draw[blk, k] == t:
                    sel[m] = k
                    m += 1
            if m == 0:
                continue
            for b in range(B):
                counts[b] = 0
            for i in range(m):
                k = sel[i]
                for b in range(B):
                    counts[b] += vis[k, b]
            if protocol == 0:  # SUCRe-XL: admit only VR-disjoint users
                for i in range(m):
                    k = sel[i]
                    bad = 0
                    for b in range(B):
                        if vis[k, b] and counts[b] > 1:
                            bad = 1
                            break
                    if not bad:
                        adm_flag[k] = 1
                        n_adm_total += 1
                        for b in range(B):
                            if vis[k, b]:
                                rate += log2(1.0 + rho[k] * beta[k, b] / sigma2)
            else:  # NVR-XL: pairs per SA survive, triples fail everywhere
                n_adm_pilot = 0
                for i in range(m):
                    k = sel[i]
                    bad = 0
                    for b in range(B):
                        if vis[k, b] and counts[b] >= 3:
                            bad = 1
                            break
                    if not bad:
                        admsel[n_adm_pilot] = k
                        n_adm_pilot += 1
                        adm_flag[k] = 1
                n_adm_total += n_adm_pilot
                for b in range(B):
                    npres = 0
                    for i in range(n_adm_pilot):
                        k = admsel[i]
                        if vis[k, b]:
                            pres[npres] = k
                            npres += 1
                    if npres == 1:
                        k = pres[0]
                        rate += log2(1.0 + rho[k] * beta[k, b] / sigma2)
                    elif npres == 2:
                        u1 = pres[0]
                        u2 = pres[1]
                        if rho[u2] * beta[u2, b] > rho[u1] * beta[u1, b]:
                            tmp = u1
                            u1 = u2
                            u2 = tmp
                        p1 = rho[u1] * beta[u1, b]
                        p2 = rho[u2] * beta[u2, b]
                        if literal_eq3:
                            g1 = p1 / (p2 * sigma2)
                        else:
                            g1 = p1 / (p2 + sigma2)
                        g2 = p2 / (varpi * p1 + sigma2)
                        rate += log2(1.0 + g1)
                        rate += log2(1.0 + g2)
        per_block_accepted[blk] = n_adm_total
        per_block_sum_rate[blk] = rate

        # step IV bookkeeping
        for i in range(n_cont):
            k = cont[i]
            if adm_flag[k]:
                accepted_hist[attempts[k]] += 1
                in_episode[k] = 0
                attempts[k] = 0
                adm_flag[k] = 0
            elif attempts[k] >= attempt_cap:
                dropped += 1
                in_episode[k] = 0
                attempts[k] = 0
            else:
                in_episode[k] = 1

    return int(dropped)
