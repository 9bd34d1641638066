import pytest

from ehlink.config import SimConfig
from ehlink.energy import (Battery, Bernoulli, CompoundPoisson,
                           CorrelatedBernoulli, LinkEnergyConfig, LinkUnits,
                           battery_step, node_powers, sample_arrivals)
from ehlink.exceptions import CausalityError
from ehlink.rng import SplitMix64


def make_cfg(**kw):
    args = dict(p_out=0.005, alpha=1.0, p_circuit_tx=0.1, p_circuit_rx=0.1,
                p_dec=0.7, p_fb=0.0, slot_seconds=1.0, beta=4,
                modulation_order=2, coded_bits=256)
    args.update(kw)
    return LinkEnergyConfig(**args)


class TestNodePowers:
    def test_transmit_chain(self):
        cfg = make_cfg()
        assert cfg.p_tx_total == pytest.approx(0.11, abs=1e-15)

    def test_receive_chain(self):
        cfg = make_cfg()
        assert cfg.p_rx_total == pytest.approx(0.8, abs=1e-15)

    def test_zero_output_power(self):
        cfg = make_cfg(p_out=0.0, alpha=7.3)
        assert node_powers(cfg)[0] == pytest.approx(0.1)

    def test_minimum_energies(self):
        cfg = make_cfg()
        assert cfg.e_min_tx == pytest.approx(0.11 / 4)
        assert cfg.e_min_rx == pytest.approx(0.8 / 4)


class TestConfigValidation:
    def test_beta_power_of_two(self):
        with pytest.raises(ValueError):
            make_cfg(beta=3)

    def test_beta_at_most_symbol_count(self):
        with pytest.raises(ValueError):
            make_cfg(beta=512, coded_bits=256)
        make_cfg(beta=256, coded_bits=256)    # boundary accepted

    def test_negative_power_rejected(self):
        with pytest.raises(ValueError):
            make_cfg(p_dec=-0.1)


class TestBatteryStep:
    def test_harvest_then_spend(self):
        b = Battery(level=3, capacity=6, harvest_quantum=3)
        assert battery_step(b, spent=1, harvested=True).level == 5

    def test_clamp_at_capacity(self):
        b = Battery(level=6, capacity=6, harvest_quantum=3)
        assert battery_step(b, spent=0, harvested=True).level == 6

    def test_drain_to_empty(self):
        b = Battery(level=2, capacity=6, harvest_quantum=3)
        assert battery_step(b, spent=2, harvested=False).level == 0

    def test_in_slot_harvest_is_spendable(self):
        b = Battery(level=0, capacity=6, harvest_quantum=3)
        assert battery_step(b, spent=2, harvested=True).level == 1

    def test_causality_violation(self):
        b = Battery(level=1, capacity=6, harvest_quantum=3)
        with pytest.raises(CausalityError):
            battery_step(b, spent=2, harvested=False)

    def test_level_range_enforced(self):
        with pytest.raises(ValueError):
            Battery(level=7, capacity=6, harvest_quantum=1)


class TestSampleArrivals:
    def test_bernoulli_certain(self):
        proc = Bernoulli(rho_tx=1.0, rho_rx=1.0, amount_tx=0.3, amount_rx=0.2)
        rng = SplitMix64(3)
        for _ in range(20):
            assert sample_arrivals(proc, rng, 1.0) == (0.3, 0.2)

    def test_correlated_always_both(self):
        proc = CorrelatedBernoulli(0.0, 0.0, 0.0, 1.0, 0.5, 0.25)
        rng = SplitMix64(4)
        for _ in range(20):
            assert sample_arrivals(proc, rng, 1.0) == (0.5, 0.25)

    def test_poisson_zero_intensity(self):
        proc = CompoundPoisson(intensity=0.0, mean_amount_tx=1.0,
                               mean_amount_rx=1.0)
        rng = SplitMix64(5)
        assert sample_arrivals(proc, rng, 1.0) == (0.0, 0.0)

    def test_bernoulli_frequency(self):
        proc = Bernoulli(rho_tx=0.3, rho_rx=0.7, amount_tx=1.0, amount_rx=1.0)
        rng = SplitMix64(6)
        n = 10 ** 6
        hits_tx = hits_rx = 0
        for _ in range(n):
            tx, rx = sample_arrivals(proc, rng, 1.0)
            hits_tx += tx > 0
            hits_rx += rx > 0
        assert abs(hits_tx / n - 0.3) < 0.003
        assert abs(hits_rx / n - 0.7) < 0.003

    def test_correlated_histogram(self):
        probs = (0.1, 0.2, 0.3, 0.4)
        proc = CorrelatedBernoulli(*probs, amount_tx=1.0, amount_rx=1.0)
        rng = SplitMix64(8)
        n = 10 ** 6
        counts = [0, 0, 0, 0]
        for _ in range(n):
            tx, rx = sample_arrivals(proc, rng, 1.0)
            counts[(tx > 0) * 2 + (rx > 0)] += 1
        for c, p in zip(counts, probs):
            assert abs(c / n - p) < 0.005

    def test_perfect_correlation(self):
        proc = CorrelatedBernoulli(0.5, 0.0, 0.0, 0.5, 1.0, 2.0)
        rng = SplitMix64(9)
        for _ in range(10 ** 4):
            tx, rx = sample_arrivals(proc, rng, 1.0)
            assert (tx > 0) == (rx > 0)

    def test_probability_sum_validated(self):
        with pytest.raises(ValueError):
            CorrelatedBernoulli(0.3, 0.3, 0.3, 0.3, 1.0, 1.0)


class TestLinkUnits:
    def test_table_defaults(self):
        units = SimConfig().units()
        assert units.tx_quantum_j == pytest.approx(0.0275)
        assert units.full_packet_units == 4
        assert units.bmax_tx == 24
        assert units.harvest_tx == 12
        assert units.rx_quantum_j == pytest.approx(0.025)
        assert units.sample_part == 1
        assert units.decode == 28
        assert units.full_receive == 32
        assert units.harvest_rx == 48
        assert units.bmax_rx == 96

    def test_reduced_analysis_lattice(self):
        from ehlink.experiments import analysis_config
        units = analysis_config(SimConfig(), 5.0).units()
        # receiver costs are not integer multiples of e_min_rx; the derived
        # quantum represents them exactly
        assert units.rx_quantum_j == pytest.approx(0.005)
        assert units.sample_part == 5
        assert units.decode == 100
        assert units.harvest_rx == 144
        assert units.bmax_rx == 240
        assert units.bmax_tx == 12
        assert units.harvest_tx == 8

    def test_exactness_of_quantum(self):
        units = SimConfig().units()
        # every cost must be an exact integer multiple of the quantum
        assert units.sample_part * units.rx_quantum_j * 4 \
            == pytest.approx(0.1, abs=1e-15)
        assert units.decode * units.rx_quantum_j == pytest.approx(0.7,
                                                                  abs=1e-15)
