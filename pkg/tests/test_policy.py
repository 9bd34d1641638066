import itertools

import numpy as np
import pytest

from ehlink.channel import ChannelModel
from ehlink.config import SimConfig
from ehlink.error import PepTable
from ehlink.exceptions import DegenerateObservationError
from ehlink.policy import (MdpModel, PolicyTable, belief_update, build_mdp,
                           greedy_action, load_policy_table, mlph_action,
                           most_likely_state, observation_likelihood,
                           quantize_and_tabulate, quantize_belief,
                           relative_value_iteration, save_policy_table)
from ehlink.protocol import Feedback


def two_state_channel(p=0.8):
    return ChannelModel.rayleigh(2, 1.0,
                                 transition_matrix=[[p, 1 - p], [1 - p, p]])


class TestObservationLikelihood:
    table = PepTable(values=np.array([[1.0, 0.6], [1.0, 0.2]]))

    def test_energy_limited_branch(self):
        v = observation_likelihood(Feedback.nakx(2), 1, 0, self.table, 0.7,
                                   0.3)
        assert v == pytest.approx(0.3)
        assert observation_likelihood(Feedback.nakx(0), 1, 0, self.table,
                                      0.7, 0.3) == pytest.approx(0.3)

    def test_ack_branch(self):
        v = observation_likelihood(Feedback.ack(), 1, 1, self.table, 0.7, 0.0)
        assert v == pytest.approx(0.7 * 0.8)

    def test_nak_branch(self):
        v = observation_likelihood(Feedback.nak(), 1, 0, self.table, 0.7, 0.0)
        assert v == pytest.approx(0.7 * 0.6)

    def test_idle_carries_previous(self):
        assert observation_likelihood(Feedback.nak(), 0, 0, self.table, 0.7,
                                      0.123) == 0.123

    def test_merged_alphabet_for_conventional(self):
        v = observation_likelihood(Feedback.nak(), 1, 0, self.table, 0.7,
                                   0.0, merged_nak=True)
        assert v == pytest.approx(0.7 * 0.6 + 0.3)


class TestBeliefUpdate:
    def test_single_state_stays_pure(self):
        out = belief_update([1.0], Feedback.nak(), 1, [[1.0]],
                            lambda fb, a, g: 0.4)
        assert out == pytest.approx([1.0])

    def test_uniform_likelihood_identity_channel(self):
        out = belief_update([0.25, 0.75], Feedback.nak(), 1, np.eye(2),
                            lambda fb, a, g: 0.5)
        assert out == pytest.approx([0.25, 0.75])

    def test_hand_bayes(self):
        likes = [0.9, 0.1]
        out = belief_update([0.5, 0.5], Feedback.nak(), 1, np.eye(2),
                            lambda fb, a, g: likes[g])
        assert out == pytest.approx([0.9, 0.1])

    def test_prediction_through_channel(self):
        omega = [[0.8, 0.2], [0.3, 0.7]]
        out = belief_update([1.0, 0.0], Feedback.nak(), 1, omega,
                            lambda fb, a, g: 1.0)
        assert out == pytest.approx([0.8, 0.2])

    def test_zero_mass_raises(self):
        with pytest.raises(DegenerateObservationError):
            belief_update([0.5, 0.5], Feedback.ack(), 1, np.eye(2),
                          lambda fb, a, g: 0.0)

    def test_normalised(self):
        out = belief_update([0.2, 0.8], Feedback.nak(), 1,
                            [[0.6, 0.4], [0.1, 0.9]],
                            lambda fb, a, g: (0.3, 0.9)[g])
        assert sum(out) == pytest.approx(1.0, abs=1e-12)


def tiny_mdp(bmax=2, K=2, rho_tx=0.5, rho_rx=0.6, pep_value=0.4,
             harvest=1, idle_cost="pep"):
    channel = ChannelModel.rayleigh(1, 1.0)
    pep = PepTable.constant(pep_value, 1, bmax)
    return build_mdp(channel, pep, bmax, harvest, K, rho_tx, rho_rx,
                     idle_cost=idle_cost)


class TestBuildMdp:
    def test_rows_sum_to_one(self):
        cfg = SimConfig()
        units = cfg.units()
        channel = cfg.channel()
        mdp = build_mdp(channel, cfg.pep_table(channel, units), units.bmax_tx,
                        units.harvest_tx, cfg.k_max, 0.3, 0.7)
        sums = np.asarray(mdp.kernel.sum(axis=1)).ravel()
        assert np.max(np.abs(sums[mdp.feasible] - 1.0)) < 1e-10

    def test_idle_moves_battery_only_by_harvest(self):
        mdp = tiny_mdp(idle_cost="zero")
        row = mdp.kernel[mdp.state_index(1, 0, 1) * mdp.num_actions + 0]
        targets = {c: v for c, v in zip(row.indices, row.data)}
        # harvest w.p. rho_tx to b=2, else stay at b=1; k advances (no ack)
        assert targets[mdp.state_index(2, 0, 2)] == pytest.approx(0.5)
        assert targets[mdp.state_index(1, 0, 2)] == pytest.approx(0.5)
        assert mdp.costs[mdp.state_index(1, 0, 1) * mdp.num_actions] == 0.0

    def test_idle_cost_defaults_to_certain_failure(self):
        mdp = tiny_mdp()
        assert mdp.costs[mdp.state_index(1, 0, 1) * mdp.num_actions] == 1.0

    def test_hand_enumerated_kernel(self):
        rho_tx, rho_rx, p = 0.5, 0.6, 0.4
        mdp = tiny_mdp(rho_tx=rho_tx, rho_rx=rho_rx, pep_value=p)
        K, L, bmax = 2, 1, 2
        p_ack = rho_rx * (1 - p)
        for b, k, a in itertools.product(range(3), (1, 2), range(3)):
            row_idx = mdp.state_index(b, 0, k) * mdp.num_actions + a
            if a > b:
                assert not mdp.feasible[row_idx]
                continue
            row = mdp.kernel[row_idx]
            got = {c: v for c, v in zip(row.indices, row.data)}
            want = {}
            ack = p_ack if a > 0 else 0.0
            for harvested, ph in ((1, rho_tx), (0, 1 - rho_tx)):
                b2 = min(b - a + harvested * L, bmax)
                k_fail = (k % K) + 1
                want[mdp.state_index(b2, 0, 1)] = \
                    want.get(mdp.state_index(b2, 0, 1), 0) + ph * ack
                want[mdp.state_index(b2, 0, k_fail)] = \
                    want.get(mdp.state_index(b2, 0, k_fail), 0) \
                    + ph * (1 - ack)
            want = {s: v for s, v in want.items() if v > 0}
            assert set(got) == set(want)
            for s in want:
                assert got[s] == pytest.approx(want[s], abs=1e-14)


class TestRelativeValueIteration:
    def test_single_state_single_action(self):
        # one state, one action: the average cost is that action's cost
        mdp = tiny_mdp(bmax=0, K=1, rho_tx=0.0)
        vi = relative_value_iteration(mdp)
        assert vi.average_cost == pytest.approx(1.0, abs=1e-9)
        mdp = tiny_mdp(bmax=0, K=1, rho_tx=0.0, idle_cost="zero")
        vi = relative_value_iteration(mdp)
        assert vi.average_cost == pytest.approx(0.0, abs=1e-9)

    def test_picks_cheaper_action(self):
        # battery pinned at 1 unit: harvest always refills what spending
        # drains, so actions 0 (cost 1) and 1 (cost 0.1) are both always
        # available; the optimal average cost is 0.1
        channel = ChannelModel.rayleigh(1, 1.0)
        pep = PepTable(values=np.array([[1.0, 0.1]]))
        mdp = build_mdp(channel, pep, 1, 1, 1, 1.0, 1.0)
        vi = relative_value_iteration(mdp)
        assert vi.average_cost == pytest.approx(0.1, abs=1e-8)
        assert vi.policy[mdp.state_index(1, 0, 1)] == 1

    def test_bellman_residual_bound(self):
        cfg = SimConfig()
        units = cfg.units()
        channel = cfg.channel()
        mdp = build_mdp(channel, cfg.pep_table(channel, units),
                        units.bmax_tx, units.harvest_tx, 2, 0.6, 0.6)
        vi = relative_value_iteration(mdp, tolerance=1e-8)
        assert vi.bellman_residual < 1e-7

    def test_matches_exhaustive_policy_enumeration(self):
        # 6 states (b in 0..2, k in 1..2), 36 deterministic policies
        rho_tx, rho_rx = 0.45, 0.7
        channel = ChannelModel.rayleigh(1, 1.0)
        pep = PepTable(values=np.array([[1.0, 0.55, 0.35]]))
        mdp = build_mdp(channel, pep, 2, 1, 2, rho_tx, rho_rx)
        vi = relative_value_iteration(mdp)

        def policy_average_cost(actions):
            n = mdp.num_states
            P = np.zeros((n, n))
            c = np.zeros(n)
            for s in range(n):
                a = actions[s]
                row = mdp.kernel[s * mdp.num_actions + a]
                for col, v in zip(row.indices, row.data):
                    P[s, col] += v
                c[s] = mdp.costs[s * mdp.num_actions + a]
            # long-run average from the stationary distribution of P
            A = np.vstack([P.T - np.eye(n), np.ones(n)])
            b = np.zeros(n + 1)
            b[-1] = 1
            pi, *_ = np.linalg.lstsq(A, b, rcond=None)
            return float(pi @ c)

        feasible_actions = [range(min(s // (1 * 2), 2) + 1)
                            for s in range(mdp.num_states)]
        # enumerate actions per battery level only (policy must be constant
        # in k by symmetry, but enumerate fully to be safe: 1*2*3*1*2*3=36)
        per_state = [list(range((s // 2) + 1)) for s in range(mdp.num_states)]
        best = None
        count = 0
        for combo in itertools.product(*per_state):
            count += 1
            cost = policy_average_cost(combo)
            if best is None or cost < best:
                best = cost
        assert count <= 200
        assert vi.average_cost == pytest.approx(best, abs=1e-7)

    def test_disconnected_classes_detected(self):
        import scipy.sparse as sp
        from ehlink.exceptions import AmbiguousChainError
        # two states that never communicate: no unique average cost
        kernel = sp.csr_matrix(np.eye(2))
        mdp = MdpModel(bmax=1, num_channel_states=1, max_retrans=1,
                       harvest_units=0, rho_tx=0.0, rho_rx=0.0,
                       kernel=sp.csr_matrix(
                           np.array([[1.0, 0.0], [0.0, 0.0],
                                     [0.0, 1.0], [0.0, 1.0]])),
                       costs=np.array([0.2, np.inf, 0.5, 0.5]),
                       feasible=np.array([True, False, True, True]))
        with pytest.raises(AmbiguousChainError):
            relative_value_iteration(mdp)


class TestActionRules:
    pep = PepTable(values=np.array([[1.0, 0.9, 0.8, 0.7],
                                    [1.0, 0.5, 0.3, 0.2],
                                    [1.0, 0.1, 0.05, 0.01]]))

    def test_greedy_empty_battery(self):
        assert greedy_action([0.3, 0.3, 0.4], 0, self.pep) == 0

    def test_greedy_spends_all_when_pep_improves(self):
        assert greedy_action([0.3, 0.3, 0.4], 3, self.pep) == 3

    def test_greedy_matches_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            belief = rng.dirichlet(np.ones(3))
            battery = int(rng.integers(0, 4))
            got = greedy_action(belief, battery, self.pep)
            costs = [float(belief @ self.pep.values[:, a])
                     for a in range(battery + 1)]
            want = int(np.argmin(costs))
            assert got == want

    def test_greedy_idles_when_hopeless(self):
        pep = PepTable(values=np.array([[1.0, 1.0, 1.0]]))
        assert greedy_action([1.0], 2, pep) == 0

    def test_mlph_uses_most_likely_state(self):
        cfg = SimConfig()
        units = cfg.units()
        channel = cfg.channel()
        mdp = build_mdp(channel, cfg.pep_table(channel, units),
                        units.bmax_tx, units.harvest_tx, 2, 0.7, 0.7)
        vi = relative_value_iteration(mdp)
        a = mlph_action([0.7, 0.2, 0.1], 10, 1, vi, mdp=mdp)
        assert a == vi.policy[mdp.state_index(10, 0, 1)]
        assert a <= 10

    def test_mlph_tie_breaks_to_lowest_state(self):
        assert most_likely_state([0.5, 0.5]) == 0
        assert most_likely_state([0.2, 0.4, 0.4]) == 1

    def test_single_state_channel_is_fully_observed(self):
        channel = ChannelModel.rayleigh(1, 1.0)
        pep = PepTable(values=np.array([[1.0, 0.7, 0.2]]))
        mdp = build_mdp(channel, pep, 2, 1, 2, 0.5, 0.5)
        vi = relative_value_iteration(mdp)
        for b in range(3):
            for k in (1, 2):
                assert mlph_action([1.0], b, k, vi, mdp=mdp) \
                    == vi.policy[mdp.state_index(b, 0, k)]


class TestPolicyTable:
    def make_table(self, kappa=10):
        cfg = SimConfig()
        units = cfg.units()
        channel = cfg.channel()
        pep = cfg.pep_table(channel, units)
        rho_grid = (0.3, 0.7)
        mdps, vis = [], []
        for rho in rho_grid:
            mdp = build_mdp(channel, pep, units.bmax_tx, units.harvest_tx,
                            2, rho, rho)
            mdps.append(mdp)
            vis.append(relative_value_iteration(mdp))
        return quantize_and_tabulate(vis, kappa, rho_grid, mdps), vis, mdps

    def test_quantize_rounding(self):
        assert quantize_belief([0.94, 0.06], 10) == (9, 1)
        assert quantize_belief([1 / 3, 1 / 3, 1 / 3], 10) == (4, 3, 3)
        assert sum(quantize_belief([0.21, 0.29, 0.5], 7)) == 7

    def test_lookup_matches_direct_mlph_on_grid_beliefs(self):
        table, vis, mdps = self.make_table()
        for bucket in table.buckets[::7]:
            belief = np.asarray(bucket, dtype=float) / table.kappa
            for b in (0, 5, 24):
                for k in (1, 2):
                    got = table.lookup(belief, b, k, rho=0.7)
                    want = mlph_action(belief, b, k, vis[1], mdp=mdps[1])
                    assert got == want

    def test_size_accounting(self):
        table, _, mdps = self.make_table()
        n_buckets = len(table.buckets)
        assert n_buckets == 66      # compositions of 10 into 3 parts
        # entries = rho points x buckets x battery levels x retrans indices
        assert table.size_entries == 2 * n_buckets * 25 * 2
        assert table.memory_bits(8) == table.size_entries * 8
        # the coarse memory rule kappa * |U| * |S|^2 upper-bounds our layout
        n_states = mdps[0].num_states
        coarse = table.kappa * mdps[0].num_actions * n_states ** 2
        assert table.memory_bits(8) <= coarse

    def test_round_trip(self, tmp_path):
        table, _, _ = self.make_table()
        path = tmp_path / "policy.npz"
        save_policy_table(table, path)
        loaded = load_policy_table(path)
        assert loaded.kappa == table.kappa
        assert loaded.rho_grid == table.rho_grid
        assert np.array_equal(loaded.actions, table.actions)
        rng = np.random.default_rng(2)
        for _ in range(50):
            belief = rng.dirichlet(np.ones(3))
            b = int(rng.integers(0, 25))
            k = int(rng.integers(1, 3))
            rho = float(rng.choice([0.3, 0.7]))
            assert loaded.lookup(belief, b, k, rho) \
                == table.lookup(belief, b, k, rho)
