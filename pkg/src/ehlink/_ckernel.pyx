# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernel.

Mirrors _pykernel.simulate draw for draw and float-op for float-op: the two
backends produce bit-identical trajectories for the same inputs, which the
test suite asserts.  Keep every arithmetic expression in the same order as
the pure kernel when touching this file.
"""

from libc.math cimport exp, log1p
from libc.stdint cimport uint64_t, int64_t

import numpy as np

from . import kernelio as kio

BACKEND_NAME = "compiled"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0

cdef uint64_t STREAM_CHANNEL = 1
cdef uint64_t STREAM_HARVEST = 2
cdef uint64_t STREAM_DECODE = 3

cdef int FB_NONE = -1
cdef int FB_ACK = 0
cdef int FB_NAK = 1
# NAKx encoded as 2 + x

cdef int POLICY_EQUAL = 0
cdef int POLICY_GREEDY = 1
cdef int POLICY_MLPH = 2


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t substream_state(uint64_t seed, uint64_t tag) nogil:
    return _mix(seed ^ (tag * GOLDEN))


cdef inline double uniform(uint64_t *state) nogil:
    state[0] = state[0] + GOLDEN
    return <double>(_mix(state[0]) >> 11) * INV_2_53


cdef inline long poisson_count(double limit, uint64_t *state) nogil:
    cdef long k = 0
    cdef double p = 1.0
    while True:
        p *= uniform(state)
        if p <= limit:
            return k
        k += 1


def simulate(object inp):
    cdef int G = inp.num_states
    cdef int beta = inp.beta
    cdef int K = inp.k_max
    cdef long bmax_tx = inp.bmax_tx
    cdef long harvest_tx = inp.harvest_tx
    cdef long bmax_rx = inp.bmax_rx
    cdef long harvest_rx = inp.harvest_rx
    cdef long samp = inp.sample_part
    cdef long dec = inp.decode
    cdef long fb_cost = inp.feedback
    cdef int policy = inp.policy
    cdef int channel_mode = inp.channel_mode
    cdef int harvest_model = inp.harvest_model
    cdef double rho_tx = inp.rho_tx
    cdef double rho_rx = inp.rho_rx
    cdef double rho_b = inp.rho_rx_belief
    cdef double lambda_slot = inp.lambda_slot
    cdef double pois_mean_tx = inp.poisson_mean_tx
    cdef double pois_mean_rx = inp.poisson_mean_rx
    cdef double c0 = inp.corr_cdf[0]
    cdef double c1 = inp.corr_cdf[1]
    cdef double c2 = inp.corr_cdf[2]
    cdef int64_t n_frames = inp.n_frames
    cdef int64_t horizon = inp.horizon_slots

    cdef double[:, ::1] pep = inp.pep
    cdef double[:, ::1] omega = inp.omega
    cdef double[:, ::1] omega_cum = np.cumsum(inp.omega, axis=1)
    cdef double[::1] steady = inp.steady
    cdef double[::1] steady_cum = np.cumsum(inp.steady)
    cdef int[:, :, ::1] mlph = inp.mlph_actions

    cdef double[::1] belief = np.array(inp.steady, dtype=np.float64)
    cdef double[::1] like_prev = np.ones(G)
    cdef double[::1] post = np.zeros(G)
    cdef double[::1] belief_next = np.zeros(G)

    cdef uint64_t ch_state = substream_state(<uint64_t>inp.seed, STREAM_CHANNEL)
    cdef uint64_t h_state = substream_state(<uint64_t>inp.seed, STREAM_HARVEST)
    cdef uint64_t d_state = substream_state(<uint64_t>inp.seed, STREAM_DECODE)

    cdef double poisson_limit = exp(-lambda_slot) if lambda_slot > 0 else 1.0
    cdef bint adaptive = policy != POLICY_EQUAL

    cdef long b_tx = inp.init_tx
    cdef long b_rx = inp.init_rx
    cdef int stored = 0
    cdef double p_worst = 0.0
    cdef int k = 1
    cdef int64_t frames = 0, successes = 0, drops = 0
    cdef int64_t slots = 0, success_slots = 0, frame_slots = 0
    cdef double cost_sum = 0.0

    cdef int g, gi, g2, fb, j, pending, parts, can, a_eff, action, g_ml
    cdef long budget_tx, budget_rx, spend_tx, spend_rx, cap, unit_budget
    cdef long h_tx, h_rx, n_arr, i_arr
    cdef double u, total, w, best_cost, cost, worst, amount_total

    # initial channel state from the stationary distribution
    u = uniform(&ch_state)
    g = 0
    while g < G and steady_cum[g] <= u:
        g += 1
    if g > G - 1:
        g = G - 1

    while True:
        if n_frames and frames >= n_frames:
            break
        if horizon and slots >= horizon:
            break
        slots += 1
        frame_slots += 1

        # --- harvest -------------------------------------------------
        if harvest_model == 0:      # independent Bernoulli
            h_tx = harvest_tx if uniform(&h_state) < rho_tx else 0
            h_rx = harvest_rx if uniform(&h_state) < rho_rx else 0
        elif harvest_model == 1:    # correlated
            u = uniform(&h_state)
            if u < c0:
                h_tx = 0; h_rx = 0
            elif u < c1:
                h_tx = 0; h_rx = harvest_rx
            elif u < c2:
                h_tx = harvest_tx; h_rx = 0
            else:
                h_tx = harvest_tx; h_rx = harvest_rx
        else:                       # compound Poisson
            amount_total = 0.0
            if lambda_slot > 0:
                n_arr = poisson_count(poisson_limit, &h_state)
                for i_arr in range(n_arr):
                    amount_total += -pois_mean_tx * log1p(-uniform(&h_state))
            h_tx = <long>amount_total
            amount_total = 0.0
            if lambda_slot > 0:
                n_arr = poisson_count(poisson_limit, &h_state)
                for i_arr in range(n_arr):
                    amount_total += -pois_mean_rx * log1p(-uniform(&h_state))
            h_rx = <long>amount_total

        budget_tx = b_tx + h_tx
        budget_rx = b_rx + h_rx
        pending = beta - stored

        # --- decision ------------------------------------------------
        if pending == 0:
            action = 0
        elif policy == POLICY_EQUAL:
            action = beta
        else:
            cap = budget_tx if budget_tx < bmax_tx else bmax_tx
            if policy == POLICY_GREEDY:
                action = 0
                best_cost = 2.0
                for j in range(cap + 1):
                    cost = 0.0
                    for gi in range(G):
                        cost += belief[gi] * pep[gi, j]
                    if cost < best_cost:
                        best_cost = cost
                        action = j
            else:
                g_ml = 0
                for gi in range(1, G):
                    if belief[gi] > belief[g_ml]:
                        g_ml = gi
                action = mlph[cap, g_ml, k - 1]
                if action > cap:
                    action = cap

        # --- transmitter ----------------------------------------------
        parts = 0
        spend_tx = 0
        if action > 0 and pending > 0:
            parts = pending
            if policy == POLICY_EQUAL:
                unit_budget = budget_tx * beta // action
                if unit_budget < parts:
                    parts = <int>unit_budget
            if parts > 0:
                spend_tx = (action * parts + beta - 1) // beta

        # --- receiver --------------------------------------------------
        fb = FB_NONE
        spend_rx = 0
        if stored == beta:
            if budget_rx >= dec:
                spend_rx = dec
                spend_rx += fb_cost if fb_cost < budget_rx - spend_rx \
                    else budget_rx - spend_rx
                u = uniform(&d_state)
                if u < p_worst:
                    fb = FB_NAK
                else:
                    fb = FB_ACK
                stored = 0
                p_worst = 0.0
            else:
                fb = 2 + beta
        elif parts > 0:
            if beta == 1 and budget_rx < parts * samp + dec:
                fb = 2 + 0
            else:
                can = parts
                if samp > 0 and budget_rx // samp < can:
                    can = <int>(budget_rx // samp)
                if can == parts and stored + parts == beta \
                        and budget_rx >= parts * samp + dec:
                    spend_rx = parts * samp + dec
                    spend_rx += fb_cost if fb_cost < budget_rx - spend_rx \
                        else budget_rx - spend_rx
                    worst = pep[g, action] if pep[g, action] > p_worst \
                        else p_worst
                    u = uniform(&d_state)
                    if u < worst:
                        fb = FB_NAK
                    else:
                        fb = FB_ACK
                    stored = 0
                    p_worst = 0.0
                elif can > 0:
                    spend_rx = can * samp
                    spend_rx += fb_cost if fb_cost < budget_rx - spend_rx \
                        else budget_rx - spend_rx
                    stored = stored + can
                    if pep[g, action] > p_worst:
                        p_worst = pep[g, action]
                    fb = 2 + stored
                else:
                    fb = 2 + stored
        if beta == 1 and fb > FB_ACK:
            fb = FB_NAK

        b_tx = budget_tx - spend_tx
        if b_tx > bmax_tx:
            b_tx = bmax_tx
        b_rx = budget_rx - spend_rx
        if b_rx > bmax_rx:
            b_rx = bmax_rx

        a_eff = action if parts > 0 else 0
        cost_sum += pep[g, a_eff]

        # --- belief filter ---------------------------------------------
        if adaptive:
            if parts > 0:
                if fb == FB_ACK:
                    for gi in range(G):
                        like_prev[gi] = rho_b * (1.0 - pep[gi, action])
                elif beta == 1:
                    for gi in range(G):
                        like_prev[gi] = rho_b * pep[gi, action] + (1.0 - rho_b)
                elif fb == FB_NAK:
                    for gi in range(G):
                        like_prev[gi] = rho_b * pep[gi, action]
                else:
                    for gi in range(G):
                        like_prev[gi] = 1.0 - rho_b
            total = 0.0
            for gi in range(G):
                post[gi] = belief[gi] * like_prev[gi]
                total += post[gi]
            if total <= 0.0:
                # Zero-probability observation under a collapsed belief:
                # restart the filter from the stationary distribution.
                for gi in range(G):
                    belief[gi] = steady[gi]
            else:
                for gi in range(G):
                    belief_next[gi] = 0.0
                for gi in range(G):
                    w = post[gi] / total
                    for g2 in range(G):
                        belief_next[g2] += w * omega[gi, g2]
                for gi in range(G):
                    belief[gi] = belief_next[gi]

        # --- frame bookkeeping -------------------------------------------
        if fb == FB_ACK:
            frames += 1
            successes += 1
            success_slots += frame_slots
            frame_slots = 0
            k = 1
            stored = 0
            p_worst = 0.0
            if channel_mode == 1:
                u = uniform(&ch_state)
                g2 = 0
                while g2 < G and omega_cum[g, g2] <= u:
                    g2 += 1
                g = g2 if g2 < G else G - 1
        elif k == K:
            frames += 1
            drops += 1
            frame_slots = 0
            k = 1
            stored = 0
            p_worst = 0.0
            if channel_mode == 1:
                u = uniform(&ch_state)
                g2 = 0
                while g2 < G and omega_cum[g, g2] <= u:
                    g2 += 1
                g = g2 if g2 < G else G - 1
        else:
            k += 1

        if channel_mode == 0:
            u = uniform(&ch_state)
            g2 = 0
            while g2 < G and omega_cum[g, g2] <= u:
                g2 += 1
            g = g2 if g2 < G else G - 1

    return kio.KernelOutputs(frames=frames, successes=successes, drops=drops,
                             slots=slots, success_slots=success_slots,
                             cost_sum=cost_sum)
