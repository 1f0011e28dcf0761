"""Pure-NumPy contention kernel: the per-trial RA block loop.

Mirrors the compiled kernel in ``_contention.pyx`` operation for
operation.  All randomness is pre-drawn by the caller and shared between
backends, and every admission decision reduces to comparisons on floats
computed in the same order in both, so integer tallies agree exactly;
only the sum-rate accumulators may differ in the last bits.

Protocol codes: 0 = SUCRe-XL, 1 = NVR-XL.
"""

from __future__ import annotations

import numpy as np

MAX_ATTEMPTS = 10

PROTO_SUCRE = 0
PROTO_NVR = 1


def run_blocks(protocol, lhs, eps, has_vis, noise_sd, noisy, beta, vis,
               rho, sigma2, varpi, literal_eq3, P_a, P_na,
               u_attempt, pilot_draw, eta, tau,
               attempts, in_episode, accepted_hist,
               per_block_attempting, per_block_accepted, per_block_sum_rate):
    """Advance all RA blocks of one trial; returns the dropped-episode count.

    ``attempts``/``in_episode`` are carried state (mutated); histograms
    and per-block tallies are accumulated into the supplied arrays.
    """
    n_blocks, K = u_attempt.shape
    B = beta.shape[1]
    visb = vis.view(bool)
    has_visb = has_vis.view(bool)
    dropped = 0
    is_adm = np.zeros(K, dtype=bool)

    for blk in range(n_blocks):
        p_contend = np.where(in_episode.view(bool), P_na, P_a)
        idx = np.nonzero(u_attempt[blk] < p_contend)[0]
        per_block_attempting[blk] = idx.size
        if idx.size == 0:
            per_block_accepted[blk] = 0
            per_block_sum_rate[blk] = 0.0
            continue
        attempts[idx] += 1

        # Steps I-III: pilot grouping, gain estimate, retransmission rule.
        pil = pilot_draw[blk, idx]
        alpha = np.bincount(pil, weights=lhs[idx], minlength=tau)
        a_hat = alpha[pil]
        if noisy:
            a_hat = np.maximum(0.0, a_hat + eta[blk, idx] * noise_sd[idx])
        retx = has_visb[idx] & (lhs[idx] > 0.5 * a_hat + eps[idx])
        ridx = idx[retx]
        rpil = pil[retx]

        # Step III resolution + step IV rates, per pilot.
        rate = 0.0
        admitted_parts = []
        for t in range(tau):
            sel = ridx[rpil == t]
            if sel.size == 0:
                continue
            vsel = visb[sel]
            counts = vsel.sum(axis=0, dtype=np.int64)
            if protocol == PROTO_SUCRE:
                adm = sel[~np.any(vsel & (counts > 1), axis=1)]
                admitted_parts.append(adm)
                for u in adm:
                    snr = rho[u] * beta[u, visb[u]] / sigma2
                    rate += float(np.log2(1.0 + snr).sum())
            else:
                overloaded = counts >= 3
                adm = sel[~np.any(vsel & overloaded, axis=1)]
                admitted_parts.append(adm)
                vadm = visb[adm]
                for b in range(B):
                    present = adm[vadm[:, b]]
                    if present.size == 1:
                        u = present[0]
                        rate += float(np.log2(1.0 + rho[u] * beta[u, b] / sigma2))
                    elif present.size == 2:
                        u1, u2 = present
                        if rho[u2] * beta[u2, b] > rho[u1] * beta[u1, b]:
                            u1, u2 = u2, u1
                        p1 = rho[u1] * beta[u1, b]
                        p2 = rho[u2] * beta[u2, b]
                        if literal_eq3:
                            g1 = p1 / (p2 * sigma2)
                        else:
                            g1 = p1 / (p2 + sigma2)
                        g2 = p2 / (varpi * p1 + sigma2)
                        rate += float(np.log2(1.0 + g1))
                        rate += float(np.log2(1.0 + g2))

        if admitted_parts:
            adm_all = np.concatenate(admitted_parts)
        else:
            adm_all = np.empty(0, dtype=np.int64)
        per_block_accepted[blk] = adm_all.size
        per_block_sum_rate[blk] = rate

        # Step IV bookkeeping: accepted episodes close, failures back off,
        # the attempt cap drops the episode.
        if adm_all.size:
            accepted_hist += np.bincount(attempts[adm_all],
                                         minlength=MAX_ATTEMPTS + 1)
            is_adm[adm_all] = True
        failed = idx[~is_adm[idx]]
        if adm_all.size:
            in_episode[adm_all] = 0
            attempts[adm_all] = 0
            is_adm[adm_all] = False
        failed_attempts = attempts[failed]
        drop = failed[failed_attempts >= MAX_ATTEMPTS]
        keep = failed[failed_attempts < MAX_ATTEMPTS]
        dropped += drop.size
        in_episode[drop] = 0
        attempts[drop] = 0
        in_episode[keep] = 1

    return dropped
