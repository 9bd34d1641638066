"""Pure-Python simulation kernel.

Reference implementation of the slot loop: readable, built from the
protocol and policy primitives, and the semantics oracle that the compiled
kernel is tested against.  Selected automatically when the extension is not
built (or when EHLINK_BACKEND=python).
"""

from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np

from . import kernelio as kio
from .protocol import (Feedback, RxCosts, RxSampleStore, advance_retrans_index,
                       receiver_step, transmitter_step)
from .rng import STREAM_CHANNEL, STREAM_DECODE, STREAM_HARVEST, SplitMix64

BACKEND_NAME = "python"

# Belief and decision arithmetic is written as explicit scalar loops (not
# BLAS calls) so the compiled kernel can reproduce trajectories bit for bit.


def _greedy_pick(belief, pep_rows, cap: int) -> int:
    best_a = 0
    best_cost = math.inf
    for a in range(cap + 1):
        cost = 0.0
        for g in range(len(belief)):
            cost += belief[g] * pep_rows[g][a]
        if cost < best_cost:
            best_cost = cost
            best_a = a
    return best_a


def _argmax(values) -> int:
    best = 0
    for g in range(1, len(values)):
        if values[g] > values[best]:
            best = g
    return best


def _belief_step(belief, like, omega_rows, steady, G: int):
    total = 0.0
    post = [0.0] * G
    for g in range(G):
        post[g] = belief[g] * like[g]
        total += post[g]
    if total <= 0.0:
        # The observation had zero probability under the collapsed belief
        # (reachable because clamped error probabilities hit exact 0 and 1).
        # Restart the filter from the stationary distribution.
        return list(steady)
    new = [0.0] * G
    for g in range(G):
        w = post[g] / total
        row = omega_rows[g]
        for g2 in range(G):
            new[g2] += w * row[g2]
    return new


def _poisson(rate_limit: float, rng) -> int:
    k = 0
    p = 1.0
    while True:
        p *= rng.uniform()
        if p <= rate_limit:
            return k
        k += 1


def simulate(inp: kio.KernelInputs, trace: bool = False,
             decision_log: bool = False) -> kio.KernelOutputs:
    G = inp.num_states
    beta = inp.beta
    K = inp.k_max
    ch_rng = SplitMix64(inp.seed, STREAM_CHANNEL)
    h_rng = SplitMix64(inp.seed, STREAM_HARVEST)
    d_rng = SplitMix64(inp.seed, STREAM_DECODE)

    omega_cum = [list(np.cumsum(row)) for row in inp.omega]
    steady_cum = list(np.cumsum(inp.steady))
    pep = inp.pep
    pep_rows = [list(row) for row in pep]
    omega_rows = [list(row) for row in inp.omega]
    costs = RxCosts(sample_part=inp.sample_part, decode=inp.decode,
                    feedback=inp.feedback)
    poisson_limit = math.exp(-inp.lambda_slot) if inp.lambda_slot > 0 else 1.0

    def draw_harvest():
        if inp.harvest_model == kio.HARVEST_BERNOULLI:
            h_tx = inp.harvest_tx if h_rng.uniform() < inp.rho_tx else 0
            h_rx = inp.harvest_rx if h_rng.uniform() < inp.rho_rx else 0
            return h_tx, h_rx
        if inp.harvest_model == kio.HARVEST_CORRELATED:
            u = h_rng.uniform()
            c = inp.corr_cdf
            if u < c[0]:
                return 0, 0
            if u < c[1]:
                return 0, inp.harvest_rx
            if u < c[2]:
                return inp.harvest_tx, 0
            return inp.harvest_tx, inp.harvest_rx
        out = []
        for mean in (inp.poisson_mean_tx, inp.poisson_mean_rx):
            total = 0.0
            if inp.lambda_slot > 0:
                for _ in range(_poisson(poisson_limit, h_rng)):
                    total += -mean * math.log1p(-h_rng.uniform())
            out.append(int(total))
        return out[0], out[1]

    def step_channel(g):
        return min(bisect_right(omega_cum[g], ch_rng.uniform()), G - 1)

    # --- trial state ---------------------------------------------------
    g = min(bisect_right(steady_cum, ch_rng.uniform()), G - 1)
    belief = list(inp.steady)
    like_prev = [1.0] * G
    b_tx = inp.init_tx
    b_rx = inp.init_rx
    store = RxSampleStore(beta)
    last_fb = Feedback.ack()
    k = 1
    frames = successes = drops = 0
    slots = success_slots = frame_slots = 0
    cost_sum = 0.0
    out = kio.KernelOutputs(0, 0, 0, 0, 0, 0.0)

    adaptive = inp.policy != kio.POLICY_EQUAL

    while True:
        if inp.n_frames and frames >= inp.n_frames:
            break
        if inp.horizon_slots and slots >= inp.horizon_slots:
            break
        slots += 1
        frame_slots += 1

        h_tx, h_rx = draw_harvest()
        budget_tx = b_tx + h_tx
        budget_rx = b_rx + h_rx
        pending = beta - store.stored_parts

        # Decision: full-packet energy level (adaptive) or nominal (equal).
        if pending == 0:
            action = 0
        elif inp.policy == kio.POLICY_EQUAL:
            action = beta
        else:
            cap = min(budget_tx, inp.bmax_tx)
            if inp.policy == kio.POLICY_GREEDY:
                action = _greedy_pick(belief, pep_rows, cap)
            else:
                g_ml = _argmax(belief)
                action = min(int(inp.mlph_actions[cap, g_ml, k - 1]), cap)
            if decision_log:
                out.decision_log.append((list(belief), cap, k, action))

        parts, spend_tx = transmitter_step(
            last_fb, budget_tx, action, beta,
            allow_partial=inp.policy == kio.POLICY_EQUAL)
        transmitted = parts > 0

        fb, spend_rx, store = receiver_step(
            store, parts, g, pep[g, action] if transmitted else 1.0,
            budget_rx, costs, d_rng)
        if beta == 1 and fb is not None and not fb.is_ack:
            fb = Feedback.nak()     # conventional wire alphabet

        b_tx = min(budget_tx - spend_tx, inp.bmax_tx)
        b_rx = min(budget_rx - spend_rx, inp.bmax_rx)
        if b_tx < 0 or b_rx < 0:
            raise AssertionError("battery underflow")

        a_eff = action if transmitted else 0
        cost_sum += pep[g, a_eff]

        if trace:
            out.trace.append((slots, k, a_eff, parts / beta,
                              str(fb) if fb is not None else "-",
                              b_tx, b_rx, g))

        if adaptive:
            if transmitted:
                like_prev = _likelihoods(fb, pep_rows, action,
                                         inp.rho_rx_belief, beta, G)
            belief = _belief_step(belief, like_prev, omega_rows, inp.steady, G)

        if fb is not None and fb.is_ack:
            frames += 1
            successes += 1
            success_slots += frame_slots
            frame_slots = 0
            k = 1
            store = RxSampleStore(beta)
            last_fb = Feedback.ack()
            if inp.channel_mode == kio.CHANNEL_PER_FRAME:
                g = step_channel(g)
        elif k == K:
            frames += 1
            drops += 1
            frame_slots = 0
            k = 1
            store = RxSampleStore(beta)
            last_fb = Feedback.ack()
            if inp.channel_mode == kio.CHANNEL_PER_FRAME:
                g = step_channel(g)
        else:
            # A silent slot still ages the frame: the deadline is K slots.
            k = advance_retrans_index(k, K,
                                      fb if fb is not None else Feedback.nak())
            if fb is not None:
                last_fb = fb

        if inp.channel_mode == kio.CHANNEL_PER_SLOT:
            g = step_channel(g)

    out.frames = frames
    out.successes = successes
    out.drops = drops
    out.slots = slots
    out.success_slots = success_slots
    out.cost_sum = cost_sum
    return out


def _likelihoods(fb: Feedback, pep_rows, action: int, rho_rx: float,
                 beta: int, G: int):
    from .protocol import FeedbackKind
    if fb.is_ack:
        return [rho_rx * (1.0 - pep_rows[g][action]) for g in range(G)]
    if beta == 1:
        return [rho_rx * pep_rows[g][action] + (1.0 - rho_rx)
                for g in range(G)]
    if fb.kind is FeedbackKind.NAK:
        return [rho_rx * pep_rows[g][action] for g in range(G)]
    return [1.0 - rho_rx] * G
