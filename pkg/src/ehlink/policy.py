"""Transmit-power decision making.

The channel state is hidden; a Bayes filter over the finite channel states
is driven by the ARQ feedback.  Power is then assigned either greedily
(minimise the expected error probability of the current slot) or by looking
up the average-cost-optimal policy of the fully observed decision process
at the most likely channel state.  The optimal policy itself comes from
relative value iteration over states (battery, channel, retransmission
index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .exceptions import (AmbiguousChainError, CapacityError, ConvergenceError,
                         DegenerateObservationError)
from .protocol import Feedback, FeedbackKind

VI_TOLERANCE = 1e-8
VI_MAX_ITERATIONS = 100_000


# ---------------------------------------------------------------------------
# Belief tracking
# ---------------------------------------------------------------------------

def observation_likelihood(feedback, action: int, state_index: int,
                           pep_table, rho_rx: float,
                           previous_likelihood: float,
                           merged_nak: bool = False) -> float:
    """Probability of one feedback message given a hypothetical channel state.

    With no transmission (action 0) the previous slot's likelihood carries
    over unchanged.  `merged_nak` collapses the energy-limited branch into
    NAK for the conventional scheme (beta = 1), where the wire alphabet
    cannot distinguish a decode failure from an energy shortfall.
    """
    if action == 0:
        return previous_likelihood
    pep = pep_table[state_index, action]
    kind = feedback.kind
    if kind is FeedbackKind.ACK:
        return rho_rx * (1.0 - pep)
    if kind is FeedbackKind.NAK:
        if merged_nak:
            return rho_rx * pep + (1.0 - rho_rx)
        return rho_rx * pep
    return 1.0 - rho_rx        # any NAKx: receiver was energy limited


def likelihood_vector(feedback, action: int, pep_table, rho_rx: float,
                      previous: np.ndarray, merged_nak: bool = False):
    """observation_likelihood evaluated for every channel state at once."""
    n = pep_table.values.shape[0] if hasattr(pep_table, "values") else len(pep_table)
    return np.array([
        observation_likelihood(feedback, action, g, pep_table, rho_rx,
                               previous[g], merged_nak)
        for g in range(n)])


def belief_update(belief, feedback, action, channel_matrix, likelihood_fn):
    """One filter step: Bayes correction with the feedback likelihood, then
    prediction through the channel transition matrix."""
    prior = np.asarray(belief, dtype=float)
    like = np.array([likelihood_fn(feedback, action, g)
                     for g in range(len(prior))])
    post = prior * like
    total = post.sum()
    if total <= 0.0:
        raise DegenerateObservationError(
            f"feedback {feedback} has zero likelihood under every state")
    post /= total
    return post @ np.asarray(channel_matrix, dtype=float)


def belief_filter_step(belief: np.ndarray, like: np.ndarray,
                       channel_matrix: np.ndarray) -> np.ndarray:
    """Vectorised correction + prediction used by the simulation kernels."""
    post = belief * like
    total = post.sum()
    if total <= 0.0:
        raise DegenerateObservationError("zero posterior mass in belief update")
    return (post / total) @ channel_matrix


# ---------------------------------------------------------------------------
# Fully observed decision process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MdpModel:
    """Average-cost model over (battery, channel state, retrans index).

    `kernel` has one row per (state, action) pair, laid out as
    state * (max_action + 1) + action; infeasible pairs (action above the
    battery level) have an empty row and infinite cost.
    """

    bmax: int
    num_channel_states: int
    max_retrans: int
    harvest_units: int
    rho_tx: float
    rho_rx: float
    kernel: sp.csr_matrix
    costs: np.ndarray
    feasible: np.ndarray

    @property
    def num_states(self) -> int:
        return (self.bmax + 1) * self.num_channel_states * self.max_retrans

    @property
    def num_actions(self) -> int:
        return self.bmax + 1

    def state_index(self, b: int, g: int, k: int) -> int:
        return (b * self.num_channel_states + g) * self.max_retrans + (k - 1)


def build_mdp(channel, pep_table, bmax: int, harvest_units: int, K: int,
              rho_tx: float, rho_rx: float, cost_mode: str = "pep",
              idle_cost: str = "pep", max_states: int = 200_000) -> MdpModel:
    """Assemble the transition kernel and slot costs of the power MDP.

    The slot cost is the error probability of that slot's transmission,
    taken from the PEP table (action 0 therefore costs 1: an idle slot
    cannot deliver the packet).  `idle_cost="zero"` switches to the literal
    reading in which an idle slot is free; `cost_mode="nak_weighted"`
    additionally scales transmit costs by the probability that feedback is
    generated at all.
    """
    G = channel.num_states
    n_states = (bmax + 1) * G * K
    if n_states * (bmax + 1) > max_states * 64:
        raise CapacityError(f"{n_states} states x {bmax + 1} actions exceeds "
                            f"the configured cap")
    omega = channel.transition_matrix
    pep = pep_table.values
    if pep.shape[1] < bmax + 1:
        raise ValueError("PEP table does not cover the action range")

    n_a = bmax + 1
    rows, cols, vals = [], [], []
    costs = np.full(n_states * n_a, np.inf)
    feasible = np.zeros(n_states * n_a, dtype=bool)

    def sidx(b, g, k):
        return (b * G + g) * K + (k - 1)

    for b in range(bmax + 1):
        for g in range(G):
            for k in range(1, K + 1):
                s = sidx(b, g, k)
                k_next = (k % K) + 1
                for a in range(0, b + 1):
                    row = s * n_a + a
                    feasible[row] = True
                    if a == 0:
                        costs[row] = pep[g, 0] if idle_cost == "pep" else 0.0
                        p_ack = 0.0
                    else:
                        c = pep[g, a]
                        if cost_mode == "nak_weighted":
                            c *= rho_rx
                        costs[row] = c
                        p_ack = rho_rx * (1.0 - pep[g, a])
                    for harvested, p_h in ((True, rho_tx), (False, 1 - rho_tx)):
                        if p_h == 0.0:
                            continue
                        b2 = b - a + (harvest_units if harvested else 0)
                        b2 = min(b2, bmax)
                        for g2 in range(G):
                            p_g = omega[g, g2]
                            if p_g == 0.0:
                                continue
                            if p_ack > 0.0:
                                rows.append(row)
                                cols.append(sidx(b2, g2, 1))
                                vals.append(p_h * p_g * p_ack)
                            rows.append(row)
                            cols.append(sidx(b2, g2, k_next))
                            vals.append(p_h * p_g * (1.0 - p_ack))

    kernel = sp.csr_matrix((vals, (rows, cols)),
                           shape=(n_states * n_a, n_states))
    kernel.sum_duplicates()
    sums = np.asarray(kernel.sum(axis=1)).ravel()
    bad = feasible & (np.abs(sums - 1.0) > 1e-10)
    if np.any(bad):
        raise AssertionError("kernel rows of feasible pairs must sum to 1")
    return MdpModel(bmax=bmax, num_channel_states=G, max_retrans=K,
                    harvest_units=harvest_units, rho_tx=rho_tx, rho_rx=rho_rx,
                    kernel=kernel, costs=costs, feasible=feasible)


def _check_single_closed_class(mdp: MdpModel):
    """Union-support graph must have exactly one closed communicating class;
    otherwise the average cost depends on the start state."""
    union = sp.csr_matrix(
        (np.ones_like(mdp.kernel.data), mdp.kernel.indices, mdp.kernel.indptr),
        shape=mdp.kernel.shape)
    # Collapse (state, action) rows onto states.
    n_s, n_a = mdp.num_states, mdp.num_actions
    row_state = np.repeat(np.arange(n_s), n_a)
    coo = union.tocoo()
    adj = sp.csr_matrix((np.ones_like(coo.data),
                         (row_state[coo.row], coo.col)), shape=(n_s, n_s))
    n_comp, labels = connected_components(adj, directed=True,
                                          connection="strong")
    closed = set(range(n_comp))
    coo = adj.tocoo()
    for r, c in zip(coo.row, coo.col):
        if labels[r] != labels[c]:
            closed.discard(labels[r])
    if len(closed) != 1:
        raise AmbiguousChainError(
            f"{len(closed)} closed communicating classes; average cost is "
            f"not unichain")


@dataclass(frozen=True)
class ValueIterationResult:
    average_cost: float
    relative_values: np.ndarray
    policy: np.ndarray
    bellman_residual: float
    iterations: int


def relative_value_iteration(mdp: MdpModel, tolerance: float = VI_TOLERANCE,
                             max_iterations: int = VI_MAX_ITERATIONS
                             ) -> ValueIterationResult:
    """Solve the average-cost Bellman equation by relative value iteration.

    Jacobi sweeps (the update uses only the previous iterate, so the result
    is independent of any within-sweep ordering); convergence is declared
    when the span seminorm of successive differences drops below the
    tolerance.
    """
    _check_single_closed_class(mdp)
    n_s, n_a = mdp.num_states, mdp.num_actions
    h = np.zeros(n_s)
    kernel, costs = mdp.kernel, mdp.costs
    span = np.inf
    lam = 0.0
    for it in range(1, max_iterations + 1):
        q = costs + kernel @ h
        th = q.reshape(n_s, n_a).min(axis=1)
        diff = th - h
        span = diff.max() - diff.min()
        lam = 0.5 * (diff.max() + diff.min())
        h = th - th[0]
        if span < tolerance:
            break
    else:
        raise ConvergenceError(
            f"value iteration span {span:.3e} after {max_iterations} sweeps")
    q = costs + kernel @ h
    Q = q.reshape(n_s, n_a)
    policy = np.argmin(Q, axis=1)
    residual = np.max(np.abs(Q.min(axis=1) - h - lam))
    return ValueIterationResult(average_cost=lam, relative_values=h,
                                policy=policy.astype(np.int32),
                                bellman_residual=residual, iterations=it)


# ---------------------------------------------------------------------------
# Action rules
# ---------------------------------------------------------------------------

def most_likely_state(belief) -> int:
    """Arg max of the belief; ties resolve to the lowest state index."""
    return int(np.argmax(belief))


def mlph_action(belief, battery: int, k: int, policy_source, mdp: MdpModel = None,
                rho: float = None) -> int:
    """Act with the fully observed optimal policy at the most likely state."""
    g = most_likely_state(belief)
    if isinstance(policy_source, PolicyTable):
        return policy_source.lookup(belief, battery, k, rho)
    if isinstance(policy_source, ValueIterationResult):
        if mdp is None:
            raise ValueError("mlph_action needs the MdpModel with a raw "
                             "ValueIterationResult")
        b = min(battery, mdp.bmax)
        a = int(policy_source.policy[mdp.state_index(b, g, k)])
        return min(a, battery)
    raise TypeError(f"unsupported policy source {type(policy_source).__name__}")


def greedy_action(belief, battery: int, pep_table) -> int:
    """Minimise the expected error probability of the current transmission.

    Ties break toward the smallest action, which conserves energy (and in
    particular prefers staying idle when no affordable power level helps).
    """
    cap = min(battery, pep_table.max_action)
    expected = np.asarray(belief) @ pep_table.values[:, :cap + 1]
    return int(np.argmin(expected))


# ---------------------------------------------------------------------------
# Quantised lookup table
# ---------------------------------------------------------------------------

def quantize_belief(belief, kappa: int) -> tuple:
    """Round a belief onto the grid of multiples of 1/kappa.

    Largest-remainder rounding keeps the coordinates summing to kappa and
    is deterministic (remainder ties resolve to the lowest index).
    """
    b = np.asarray(belief, dtype=float)
    scaled = b * kappa
    base = np.floor(scaled).astype(int)
    rem = int(kappa - base.sum())
    if rem:
        frac = scaled - base
        order = np.lexsort((np.arange(len(b)), -frac))
        for i in order[:rem]:
            base[i] += 1
    return tuple(int(v) for v in base)


def _enumerate_buckets(kappa: int, dims: int):
    if dims == 1:
        yield (kappa,)
        return
    for head in range(kappa + 1):
        for rest in _enumerate_buckets(kappa - head, dims - 1):
            yield (head,) + rest


@dataclass(frozen=True)
class PolicyTable:
    """Precomputed action lookup over quantised beliefs.

    Indexed by (harvest-probability grid point, belief bucket, battery
    level, retransmission index); the stored action is the optimal policy
    of the fully observed process evaluated at the bucket's most likely
    state.
    """

    kappa: int
    rho_grid: tuple
    buckets: np.ndarray          # (n_buckets, G) integer bucket coordinates
    actions: np.ndarray          # (n_rho, n_buckets, bmax + 1, K) int16
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "_bucket_index",
                           {tuple(row): i for i, row in
                            enumerate(map(tuple, self.buckets.tolist()))})

    @property
    def size_entries(self) -> int:
        return self.actions.size

    def memory_bits(self, bits_per_action: int = 8) -> int:
        return self.size_entries * bits_per_action

    def rho_index(self, rho) -> int:
        if rho is None:
            if len(self.rho_grid) != 1:
                raise ValueError("rho must be given for a multi-point grid")
            return 0
        grid = np.asarray(self.rho_grid)
        i = int(np.argmin(np.abs(grid - rho)))
        return i

    def lookup(self, belief, battery: int, k: int, rho=None) -> int:
        key = quantize_belief(belief, self.kappa)
        bi = self._bucket_index[key]
        bmax = self.actions.shape[2] - 1
        a = int(self.actions[self.rho_index(rho), bi, min(battery, bmax), k - 1])
        return min(a, battery)


def quantize_and_tabulate(vi_results, kappa: int, rho_grid,
                          mdps) -> PolicyTable:
    """Freeze per-rho value-iteration policies into a lookup table."""
    if len(vi_results) != len(rho_grid) or len(mdps) != len(rho_grid):
        raise ValueError("one ValueIterationResult and MdpModel per rho")
    G = mdps[0].num_channel_states
    bmax = mdps[0].bmax
    K = mdps[0].max_retrans
    buckets = np.array(list(_enumerate_buckets(kappa, G)), dtype=int)
    actions = np.zeros((len(rho_grid), len(buckets), bmax + 1, K),
                       dtype=np.int16)
    for ri, (vi, mdp) in enumerate(zip(vi_results, mdps)):
        policy = vi.policy
        for bi, bucket in enumerate(buckets):
            g = most_likely_state(bucket)
            for b in range(bmax + 1):
                for k in range(1, K + 1):
                    actions[ri, bi, b, k - 1] = policy[mdp.state_index(b, g, k)]
    return PolicyTable(kappa=kappa, rho_grid=tuple(rho_grid),
                       buckets=buckets, actions=actions)


def save_policy_table(table: PolicyTable, path):
    meta = json.dumps({"version": table.version, "kappa": table.kappa,
                       "rho_grid": list(table.rho_grid)})
    np.savez_compressed(path, meta=np.frombuffer(meta.encode(), dtype=np.uint8),
                        buckets=table.buckets, actions=table.actions)


def load_policy_table(path) -> PolicyTable:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != 1:
            raise ValueError(f"unsupported policy table version "
                             f"{meta.get('version')}")
        return PolicyTable(kappa=meta["kappa"],
                           rho_grid=tuple(meta["rho_grid"]),
                           buckets=data["buckets"], actions=data["actions"])
