"""Average packet-drop probability of the fixed-power policy.

Two routes are provided:

* bound mode: the closed-form per-attempt success bound with battery
  indicator functions, fed by the stationary battery distribution of the
  one-slot transition out of fresh-frame states.  This is the hand
  derivation and is generally loose.
* chain mode: an exact absorbing-state analysis of the slot chain within
  one frame, combined with the stationary distribution of the exact
  frame-to-frame (batteries, channel) kernel.  The channel is held fixed
  for the duration of a frame and steps at frame boundaries, and the same
  convention is available in the simulator, so the two can be compared at
  Monte Carlo accuracy.

Feedback-progress accounting defaults to cumulative (the feedback reports
the total stored fraction, matching the protocol module); the alternative
reading in which each message reports only the newly sampled parts, and the
dynamics key on that label, is available as x_mode="newly".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import AmbiguousChainError, EhlinkError
from .config import SimConfig

STATIONARY_RESID_TOL = 1e-10
XI_ROW_TOL = 1e-9

# Feedback state encoding inside chain states: ACK, NAK, then NAK0..NAKbeta.
Z_ACK = 0
Z_NAK = 1


def z_nakx(x: int) -> int:
    return 2 + x


def num_feedback_states(beta: int) -> int:
    return beta + 3


def z_to_stored(z: int, beta: int) -> int:
    if z in (Z_ACK, Z_NAK):
        return 0
    x = z - 2
    if not 0 <= x <= beta:
        raise ValueError(f"feedback code {z} out of range")
    return x


def z_label(z: int) -> str:
    if z == Z_ACK:
        return "ACK"
    if z == Z_NAK:
        return "NAK"
    return f"NAK{z - 2}"


@dataclass(frozen=True)
class ChainParams:
    """Integer-lattice geometry of the fixed-power chain."""

    beta: int
    k_max: int
    bmax_tx: int
    harvest_tx: int
    bmax_rx: int
    harvest_rx: int
    sample_part: int
    decode: int
    feedback: int
    action: int                  # full-packet energy level, tx units
    x_mode: str = "cumulative"
    case_iii_literal: bool = False

    @classmethod
    def from_config(cls, cfg: SimConfig, action: int = None,
                    x_mode: str = None,
                    case_iii_literal: bool = False) -> "ChainParams":
        units = cfg.units()
        if action is None:
            action = units.full_packet_units
        if not isinstance(action, int):
            schedule = list(action)
            if len(set(schedule)) != 1:
                raise EhlinkError(
                    "the chain supports only an equal fixed power schedule")
            action = schedule[0]
        return cls(beta=cfg.beta, k_max=cfg.k_max,
                   bmax_tx=units.bmax_tx, harvest_tx=units.harvest_tx,
                   bmax_rx=units.bmax_rx, harvest_rx=units.harvest_rx,
                   sample_part=units.sample_part, decode=units.decode,
                   feedback=units.feedback, action=action,
                   x_mode=x_mode or cfg.x_mode,
                   case_iii_literal=case_iii_literal)

    @property
    def num_pairs(self) -> int:
        return (self.bmax_tx + 1) * (self.bmax_rx + 1)

    def pair_index(self, i: int, j: int) -> int:
        return i * (self.bmax_rx + 1) + j


# Harvest outcome order: (tx, rx) in {(0,0), (0,1), (1,0), (1,1)}.
COMBOS = ((0, 0), (0, 1), (1, 0), (1, 1))


def combo_probabilities(rho_tx: float, rho_rx: float) -> np.ndarray:
    return np.array([(1 - rho_tx) * (1 - rho_rx),
                     (1 - rho_tx) * rho_rx,
                     rho_tx * (1 - rho_rx),
                     rho_tx * rho_rx])


@dataclass(frozen=True)
class SlotOutcome:
    """Result of one in-frame slot for a given harvest combination.

    decode=False: a single successor with probability one.
    decode=True: ACK with probability 1 - pep (batteries i2_ack, j2) and a
    continue-with-NAK branch with probability pep (batteries i2, j2).
    """
    decode: bool
    i2: int
    j2: int
    stored2: int
    emitted: int | None          # feedback z-code emitted, None = carry-over
    i2_ack: int = -1


def slot_outcome(p: ChainParams, i: int, j: int, stored: int,
                 h_tx: int, h_rx: int) -> SlotOutcome:
    """Advance one slot of the fixed-power protocol from (i, j, stored).

    Mirrors the simulation kernel branch for branch: harvest first, send
    the affordable portion of the missing parts, sample what the receiver
    budget covers, decode when the packet is complete and decode energy is
    available, clamp batteries at capacity at the slot end.
    """
    beta, a = p.beta, p.action
    budget_tx = i + h_tx * p.harvest_tx
    budget_rx = j + h_rx * p.harvest_rx
    pending = beta - stored

    if pending > 0:
        parts = min(pending, budget_tx * beta // a)
        spend_tx = -(-a * parts // beta)
    else:
        parts, spend_tx = 0, 0
    i2 = min(budget_tx - spend_tx, p.bmax_tx)

    def clamp_rx(spend):
        return min(budget_rx - spend, p.bmax_rx)

    def with_feedback_cost(spend):
        return spend + min(p.feedback, budget_rx - spend)

    if stored == beta:
        # Complete packet awaiting decode energy.
        if budget_rx >= p.decode:
            spend = with_feedback_cost(p.decode)
            i_ack = _ack_tx_level(p, i2, h_tx, budget_tx, spend_tx)
            return SlotOutcome(True, i2, clamp_rx(spend), 0, Z_NAK,
                               i2_ack=i_ack)
        return SlotOutcome(False, i2, clamp_rx(0), stored, None)

    if parts == 0:
        return SlotOutcome(False, i2, clamp_rx(0), stored, None)

    if beta == 1 and budget_rx < parts * p.sample_part + p.decode:
        return SlotOutcome(False, i2, clamp_rx(0), stored, z_nakx(0))

    can = min(parts, budget_rx // p.sample_part) if p.sample_part else parts
    if can == parts and stored + parts == beta \
            and budget_rx >= parts * p.sample_part + p.decode:
        spend = with_feedback_cost(parts * p.sample_part + p.decode)
        i_ack = _ack_tx_level(p, i2, h_tx, budget_tx, spend_tx)
        return SlotOutcome(True, i2, clamp_rx(spend), 0, Z_NAK, i2_ack=i_ack)
    if can > 0:
        spend = with_feedback_cost(can * p.sample_part)
        if p.x_mode == "newly":
            label = can
            stored2 = can
        else:
            label = stored + can
            stored2 = stored + can
        return SlotOutcome(False, i2, clamp_rx(spend), stored2, z_nakx(label))
    label = 0 if p.x_mode == "newly" else stored
    stored2 = 0 if p.x_mode == "newly" else stored
    return SlotOutcome(False, i2, clamp_rx(0), stored2, z_nakx(label))


def _ack_tx_level(p: ChainParams, i2: int, h_tx: int, budget_tx: int,
                  spend_tx: int) -> int:
    # Literal-table variant: the non-harvesting-transmitter case credits a
    # harvest arrival on decode-success rows. Kept for comparison only.
    if p.case_iii_literal and h_tx == 0:
        return min(budget_tx + p.harvest_tx - spend_tx, p.bmax_tx)
    return i2


# ---------------------------------------------------------------------------
# Full slot chain over (i, j, z, k)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionMatrixXi:
    """Row-stochastic slot transition over (i, j, feedback, retrans index),
    for one fixed channel state and the equal fixed power policy."""

    params: ChainParams
    channel_state: int
    pep: float
    matrix: sp.csr_matrix

    def state_index(self, i: int, j: int, z: int, k: int) -> int:
        p = self.params
        nz = num_feedback_states(p.beta)
        return ((i * (p.bmax_rx + 1) + j) * nz + z) * p.k_max + (k - 1)

    @property
    def num_states(self) -> int:
        p = self.params
        return (p.bmax_tx + 1) * (p.bmax_rx + 1) \
            * num_feedback_states(p.beta) * p.k_max


def build_xi(config: SimConfig, channel_state: int, action=None,
             rho_tx: float = None, rho_rx: float = None,
             x_mode: str = None,
             case_iii_literal: bool = False) -> TransitionMatrixXi:
    """Assemble the slot transition matrix for one channel state."""
    p = ChainParams.from_config(config, action=action, x_mode=x_mode,
                                case_iii_literal=case_iii_literal)
    pep = float(config.pep_table()[channel_state, p.action])
    rho_tx = config.rho_tx if rho_tx is None else rho_tx
    rho_rx = config.rho_rx if rho_rx is None else rho_rx
    w = combo_probabilities(rho_tx, rho_rx)
    nz = num_feedback_states(p.beta)
    K = p.k_max

    def sidx(i, j, z, k):
        return ((i * (p.bmax_rx + 1) + j) * nz + z) * K + (k - 1)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        if v > 0.0:
            rows.append(r)
            cols.append(c)
            vals.append(v)

    for i in range(p.bmax_tx + 1):
        for j in range(p.bmax_rx + 1):
            for z in range(nz):
                stored = z_to_stored(z, p.beta)
                for k in range(1, K + 1):
                    src = sidx(i, j, z, k)
                    for c, (h_tx, h_rx) in enumerate(COMBOS):
                        if w[c] == 0.0:
                            continue
                        o = slot_outcome(p, i, j, stored, h_tx, h_rx)
                        if o.decode:
                            add(src, sidx(o.i2_ack, o.j2, Z_ACK, 1),
                                w[c] * (1.0 - pep))
                            if k == K:
                                add(src, sidx(o.i2, o.j2, Z_ACK, 1),
                                    w[c] * pep)
                            else:
                                add(src, sidx(o.i2, o.j2, Z_NAK, k + 1),
                                    w[c] * pep)
                        else:
                            z2 = o.emitted if o.emitted is not None else z
                            if k == K:
                                add(src, sidx(o.i2, o.j2, Z_ACK, 1), w[c])
                            else:
                                add(src, sidx(o.i2, o.j2, z2, k + 1), w[c])

    n = (p.bmax_tx + 1) * (p.bmax_rx + 1) * nz * K
    xi = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    xi.sum_duplicates()
    sums = np.asarray(xi.sum(axis=1)).ravel()
    if np.max(np.abs(sums - 1.0)) > XI_ROW_TOL:
        raise EhlinkError("chain rows do not sum to 1; internal "
                          "consistency error in the case tables")
    return TransitionMatrixXi(params=p, channel_state=channel_state,
                              pep=pep, matrix=xi)


# ---------------------------------------------------------------------------
# Per-frame absorbing analysis
# ---------------------------------------------------------------------------

class FrameModel:
    """Vectorised in-frame dynamics over states (i, j, stored parts).

    The outcome structure is independent of the harvesting probabilities
    and of the error probability, so it is built once per geometry; the
    per-(rho, channel-state) quantities only reweight it.
    """

    def __init__(self, params: ChainParams):
        self.params = params
        p = params
        nj = p.bmax_rx + 1
        nstored = p.beta + 1
        self.n_sigma = (p.bmax_tx + 1) * nj * nstored
        self.n_pairs = (p.bmax_tx + 1) * nj

        def sigma(i, j, s):
            return (i * nj + j) * nstored + s

        self.fresh = np.array([sigma(i, j, 0)
                               for i in range(p.bmax_tx + 1)
                               for j in range(nj)])
        shape = (4, self.n_sigma)
        self.is_decode = np.zeros(shape, dtype=bool)
        self.succ = np.zeros(shape, dtype=np.int64)
        self.succ_pair = np.zeros(shape, dtype=np.int64)
        self.ack_pair = np.zeros(shape, dtype=np.int64)
        for c, (h_tx, h_rx) in enumerate(COMBOS):
            for i in range(p.bmax_tx + 1):
                for j in range(nj):
                    for s in range(nstored):
                        src = sigma(i, j, s)
                        o = slot_outcome(p, i, j, s, h_tx, h_rx)
                        self.is_decode[c, src] = o.decode
                        self.succ[c, src] = sigma(o.i2, o.j2, o.stored2)
                        self.succ_pair[c, src] = o.i2 * nj + o.j2
                        self.ack_pair[c, src] = (o.i2_ack * nj + o.j2
                                                 if o.decode else -1)

    # -- drop probabilities ------------------------------------------------

    def drop_probabilities(self, pep: float, combo_probs) -> np.ndarray:
        """P(no delivery within K slots) from every fresh (i, j) start."""
        K = self.params.k_max
        d = np.ones(self.n_sigma)
        for _ in range(K):
            nxt = np.zeros(self.n_sigma)
            for c in range(4):
                w = combo_probs[c]
                if w == 0.0:
                    continue
                cont = d[self.succ[c]]
                nxt += w * np.where(self.is_decode[c], pep * cont, cont)
            d = nxt
        return d[self.fresh]

    # -- frame and one-slot kernels -----------------------------------------

    def _slot_matrices(self, pep: float, combo_probs):
        """Sparse (continue, success-absorb, drop-battery) slot operators."""
        n, m = self.n_sigma, self.n_pairs
        src = np.arange(n)
        m_parts, s_parts, r_parts = [], [], []
        for c in range(4):
            w = combo_probs[c]
            if w == 0.0:
                continue
            dec = self.is_decode[c]
            cont_w = np.where(dec, w * pep, w)
            m_parts.append(sp.coo_matrix((cont_w, (src, self.succ[c])),
                                         shape=(n, n)))
            r_parts.append(sp.coo_matrix((cont_w, (src, self.succ_pair[c])),
                                         shape=(n, m)))
            if dec.any():
                rows = src[dec]
                s_parts.append(sp.coo_matrix(
                    (np.full(rows.size, w * (1.0 - pep)),
                     (rows, self.ack_pair[c][dec])), shape=(n, m)))
        M = sum(m_parts).tocsr()
        S = sum(s_parts).tocsr() if s_parts else sp.csr_matrix((n, m))
        R = sum(r_parts).tocsr()
        return M, S, R

    def transposed_slot_operators(self, pep: float, combo_probs):
        """Column-vector forms of the slot operators, for pushing battery
        mass through a frame without materialising the frame kernel."""
        M, S, R = self._slot_matrices(pep, combo_probs)
        return M.T.tocsr(), S.T.tocsr(), R.T.tocsr()

    def push_frame(self, mass_pairs: np.ndarray, ops) -> np.ndarray:
        """Propagate frame-start battery mass to next-frame-start mass."""
        MT, ST, RT = ops
        m = np.zeros(self.n_sigma)
        m[self.fresh] = mass_pairs
        out = np.zeros(self.n_pairs)
        for k in range(1, self.params.k_max + 1):
            out += ST @ m
            if k < self.params.k_max:
                m = MT @ m
            else:
                out += RT @ m
        return out

    def frame_kernel(self, pep: float, combo_probs) -> sp.csr_matrix:
        """Battery-pair transition over one whole frame (fresh to fresh)."""
        M, S, R = self._slot_matrices(pep, combo_probs)
        X = sp.csr_matrix(
            (np.ones(self.n_pairs), (np.arange(self.n_pairs), self.fresh)),
            shape=(self.n_pairs, self.n_sigma))
        acc = None
        for k in range(1, self.params.k_max + 1):
            part = X @ S
            acc = part if acc is None else acc + part
            if k < self.params.k_max:
                X = X @ M
            else:
                acc = acc + X @ R
        acc = acc.tocsr()
        _check_rows_sum_to_one(acc, "frame kernel")
        return acc

    def one_slot_battery_kernel(self, pep: float,
                                combo_probs) -> sp.csr_matrix:
        """Battery-pair marginal of a single slot out of fresh states."""
        M, S, R = self._slot_matrices(pep, combo_probs)
        X = sp.csr_matrix(
            (np.ones(self.n_pairs), (np.arange(self.n_pairs), self.fresh)),
            shape=(self.n_pairs, self.n_sigma))
        B = (X @ S + X @ R).tocsr()
        _check_rows_sum_to_one(B, "one-slot battery kernel")
        return B


def _check_rows_sum_to_one(matrix: sp.csr_matrix, what: str):
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    if np.max(np.abs(sums - 1.0)) > XI_ROW_TOL:
        raise EhlinkError(f"{what} rows deviate from 1 by "
                          f"{np.max(np.abs(sums - 1.0)):.2e}")


def stationary_psi(kernel: sp.spmatrix) -> np.ndarray:
    """Stationary distribution of a row-stochastic sparse kernel.

    Direct sparse solve of psi (K - I) = 0 with the normalisation replacing
    one equation; residual above tolerance or a singular system raises an
    ambiguity error.
    """
    K = sp.csr_matrix(kernel, dtype=float)
    _check_rows_sum_to_one(K, "stationary kernel")
    n = K.shape[0]
    A = (K.T - sp.identity(n, format="csr")).tolil()
    A[0, :] = 1.0
    b = np.zeros(n)
    b[0] = 1.0
    try:
        psi = spla.spsolve(A.tocsc(), b)
    except RuntimeError as exc:
        raise AmbiguousChainError(f"stationary solve failed: {exc}") from None
    if not np.all(np.isfinite(psi)):
        raise AmbiguousChainError("stationary solve returned non-finite "
                                  "entries (multiple closed classes?)")
    psi = np.where(np.abs(psi) < 1e-15, 0.0, psi)
    if np.any(psi < -1e-9):
        raise AmbiguousChainError("stationary solve returned negative mass")
    psi = np.clip(psi, 0.0, None)
    psi /= psi.sum()
    resid = np.max(np.abs(psi @ K - psi))
    if resid > STATIONARY_RESID_TOL:
        raise AmbiguousChainError(
            f"stationary residual {resid:.2e}; the battery chain has no "
            f"unique stationary distribution")
    return psi


def _stationary_frame_distribution(model: FrameModel, ops_per_state, omega,
                                   steady, tol: float = 1e-13,
                                   max_iterations: int = 200_000):
    """Stationary joint (channel state, battery pair) mass at frame starts.

    Power iteration pushing mass through the per-frame slot operators; the
    frame kernel itself is never materialised.  Converges at the chain's
    mixing rate, which the slow-fading channel keeps well below 1.
    """
    G = len(ops_per_state)
    psi = np.outer(steady, np.ones(model.n_pairs) / model.n_pairs)

    def apply(mass):
        pushed = [model.push_frame(mass[g], ops_per_state[g])
                  for g in range(G)]
        out = np.zeros_like(mass)
        for g in range(G):
            for g2 in range(G):
                if omega[g, g2]:
                    out[g2] += omega[g, g2] * pushed[g]
        return out

    for _ in range(max_iterations):
        nxt = apply(psi)
        delta = np.abs(nxt - psi).max()
        psi = nxt
        if delta < tol:
            break
    resid = np.abs(apply(psi) - psi).max()
    if resid > STATIONARY_RESID_TOL:
        raise AmbiguousChainError(
            f"frame-start distribution failed to converge "
            f"(residual {resid:.2e})")
    psi = np.clip(psi, 0.0, None)
    return psi / psi.sum()


# ---------------------------------------------------------------------------
# Bound mode
# ---------------------------------------------------------------------------

def bound_success_probabilities(params: ChainParams, i: int, j: int,
                                pep: float, rho_tx: float,
                                rho_rx: float) -> np.ndarray:
    """Per-attempt success probabilities of the closed-form bound.

    The battery indicators are frozen at the frame-start levels and each
    entry is conditioned on every earlier attempt having failed, so the
    cumulative sum telescopes (constant error probability p with perpetual
    harvesting gives exactly (1-p) p^(k-1)).
    """
    f = _bound_failure_bracket(params, i, j, pep, rho_tx, rho_rx)
    out = np.empty(params.k_max)
    cum = 0.0
    for k in range(params.k_max):
        out[k] = (1.0 - f) * (1.0 - cum)
        cum += out[k]
    return out


def p_suc_k(k: int, i: int, j: int, params: ChainParams, pep: float,
            rho_tx: float, rho_rx: float) -> float:
    """Success-probability bound at retransmission index k (1-based)."""
    if not 1 <= k <= params.k_max:
        raise ValueError(f"k must be in [1, {params.k_max}]")
    return float(bound_success_probabilities(params, i, j, pep,
                                             rho_tx, rho_rx)[k - 1])


def _bound_failure_bracket(params: ChainParams, i: int, j: int, pep: float,
                           rho_tx: float, rho_rx: float) -> float:
    p = params
    a = p.action
    full_rx = p.sample_part * p.beta + p.decode + p.feedback
    phi_tx = 1.0 if i >= a else 0.0
    phi_rx = 1.0 if j >= full_rx else 0.0
    phi_dec = 1.0 if j >= p.decode else 0.0
    # Exactly one partial-sampling window contains j when j is below the
    # full sampling cost (plus one part of headroom); otherwise none.
    phi_x_sum = 1.0 if j < (p.beta + 1) * p.sample_part else 0.0
    f = (rho_tx * rho_rx * pep
         + (1 - rho_tx) * rho_rx * phi_tx * pep
         + rho_tx * (1 - rho_rx) * (pep * (phi_rx + phi_dec) + phi_x_sum)
         + (1 - rho_tx) * (1 - rho_rx)
         * (phi_tx * pep * (phi_rx + phi_dec) + phi_x_sum))
    return min(max(f, 0.0), 1.0)


def _bound_drop_grid(params: ChainParams, pep_by_state,
                     rho_tx: float, rho_rx: float) -> np.ndarray:
    """Drop probability bound for every (pair, channel state)."""
    nj = params.bmax_rx + 1
    out = np.empty((params.num_pairs, len(pep_by_state)))
    for gi, pep in enumerate(pep_by_state):
        for i in range(params.bmax_tx + 1):
            for j in range(nj):
                seq = bound_success_probabilities(params, i, j, float(pep),
                                                  rho_tx, rho_rx)
                out[i * nj + j, gi] = 1.0 - seq.sum()
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Average packet drop probability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdpReport:
    pdp: float
    psi: np.ndarray                 # stationary battery(-pair[, state]) mass
    conditional_drop: np.ndarray    # per (pair, channel state)
    mode: str
    params: ChainParams


def average_pdp(config: SimConfig, K: int = None, mode: str = "chain",
                action: int = None, rho_tx: float = None,
                rho_rx: float = None, x_mode: str = None,
                pep_override=None, full_report: bool = False):
    """Average drop probability of the fixed-power policy.

    mode="chain" is exact for the modelled process (channel constant per
    frame, stepping at frame boundaries); mode="bound" evaluates the
    closed-form recursion on the one-slot stationary battery distribution.
    `pep_override` substitutes a PepTable (e.g. a constant one for
    closed-form checks).
    """
    if K is not None:
        config = replace(config, k_max=K)
    params = ChainParams.from_config(config, action=action, x_mode=x_mode)
    rho_tx = config.rho_tx if rho_tx is None else rho_tx
    rho_rx = config.rho_rx if rho_rx is None else rho_rx
    channel = config.channel()
    pep = pep_override if pep_override is not None \
        else config.pep_table(channel)
    pep_by_state = pep.values[:, params.action]
    combos = combo_probabilities(rho_tx, rho_rx)
    model = FrameModel(params)
    G = channel.num_states

    if mode == "bound":
        B = None
        for g in range(G):
            Bg = model.one_slot_battery_kernel(float(pep_by_state[g]), combos)
            B = Bg * channel.steady_state[g] if B is None \
                else B + Bg * channel.steady_state[g]
        psi = stationary_psi(B)
        drops = _bound_drop_grid(params, pep_by_state, rho_tx, rho_rx)
        pdp = float(psi @ drops @ channel.steady_state)
    elif mode == "chain":
        omega = channel.transition_matrix
        drops = np.column_stack([
            model.drop_probabilities(float(pep_by_state[g]), combos)
            for g in range(G)])
        ops = [model.transposed_slot_operators(float(pep_by_state[g]), combos)
               for g in range(G)]
        psi_gp = _stationary_frame_distribution(model, ops, omega,
                                                channel.steady_state)
        psi = psi_gp.ravel()
        pdp = float(np.sum(psi_gp.T * drops))
    else:
        raise ValueError(f"unknown mode {mode!r}")

    pdp = min(max(pdp, 0.0), 1.0)
    if full_report:
        return PdpReport(pdp=pdp, psi=psi, conditional_drop=drops,
                         mode=mode, params=params)
    return pdp
