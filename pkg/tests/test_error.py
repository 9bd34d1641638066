import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from ehlink.config import SimConfig
from ehlink.error import (CodeSpec, PepTable, bep_bpsk, default_spectrum,
                          load_weight_spectrum, packet_error_prob,
                          pep_adaptive)


class TestBepBpsk:
    def test_zero_power_is_coin_flip(self):
        assert bep_bpsk(1, 1.0, 0.0, 0.005) == pytest.approx(0.5)

    def test_snr_argument_25(self):
        # d * gain * p / noise = 25  ->  0.5 erfc(5)
        v = bep_bpsk(25, 1.0, 1.0, 1.0)
        assert v == pytest.approx(0.5 * math.erfc(5.0), rel=1e-12)
        assert v == pytest.approx(7.687e-13, rel=1e-3)

    def test_strictly_decreasing_in_distance(self):
        vals = [bep_bpsk(d, 0.5, 0.01, 0.005) for d in range(1, 40)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_range(self):
        for d in (1, 5, 20):
            v = bep_bpsk(d, 0.2, 0.004, 0.005)
            assert 0.0 < v <= 0.5

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            bep_bpsk(0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            bep_bpsk(1, 1.0, 1.0, 0.0)


class TestPacketErrorProb:
    def test_zero_spectrum_gives_zero(self):
        code = CodeSpec(info_bits=4, rate="1/2",
                        weight_spectra=((10, 0.0), (12, 0.0)),
                        noise_power=0.005)
        assert packet_error_prob(code, 1.0, 0.005) == 0.0

    def test_clamped_at_low_snr(self):
        code = CodeSpec.standard()
        # verify the inner union-bound sum actually exceeds 1 here
        inner = sum(a * bep_bpsk(d, 0.19, 0.005, 0.005)
                    for d, a in code.weight_spectra)
        assert inner > 1.0
        assert packet_error_prob(code, 0.19, 0.005) == 1.0

    def test_single_term_binomial_cross_check(self):
        # choose the SNR argument so the pairwise error is exactly 1e-6
        arg = brentq(lambda x: 0.5 * math.erfc(math.sqrt(x)) - 1e-6, 1, 40,
                     xtol=1e-15)
        code = CodeSpec(info_bits=128, rate="1/2",
                        weight_spectra=((1, 1.0),), noise_power=1.0)
        got = packet_error_prob(code, arg, 1.0)
        p2 = 0.5 * math.erfc(math.sqrt(arg))
        assert got == pytest.approx(1.0 - (1.0 - p2) ** 256, rel=1e-9)
        assert got == pytest.approx(256 * 1e-6, rel=1e-3)

    def test_spectrum_truncated_at_block_length(self):
        code = CodeSpec(info_bits=2, rate="1/2",
                        weight_spectra=((3, 1.0), (10, 1e9)),
                        noise_power=1.0)
        # m = 4, so the d = 10 term must be ignored
        p2 = bep_bpsk(3, 1.0, 1.0, 1.0)
        assert packet_error_prob(code, 1.0, 1.0) \
            == pytest.approx(1 - (1 - p2) ** 4)


class TestPepAdaptive:
    def test_examples(self):
        assert pep_adaptive([0.1, 0.3]) == 0.3
        assert pep_adaptive([0.42]) == 0.42
        assert pep_adaptive([0.0, 0.0, 0.0]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pep_adaptive([])

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1,
                    max_size=16))
    def test_dominates_and_is_attained(self, peps):
        worst = pep_adaptive(peps)
        assert all(worst >= p for p in peps)
        assert worst in peps


class TestPepTable:
    def test_default_table_monotonicity(self):
        cfg = SimConfig()
        table = cfg.pep_table()
        v = table.values
        assert np.all(v[:, 0] == 1.0)
        assert np.all(np.diff(v, axis=1) <= 1e-12)      # in action
        assert np.all(np.diff(v, axis=0) <= 1e-12)      # in state gain
        assert np.all((v >= 0) & (v <= 1))

    def test_anchor_at_nominal_power(self):
        cfg = SimConfig()
        ch = cfg.channel()
        table = cfg.pep_table(ch)
        direct = packet_error_prob(cfg.code(), ch.mean_gains[2], 0.005)
        assert table[2, 4] == pytest.approx(direct, rel=1e-12)

    def test_constant_table(self):
        t = PepTable.constant(0.3, 3, 5)
        assert np.all(t.values[:, 1:] == 0.3)
        assert np.all(t.values[:, 0] == 1.0)

    def test_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            PepTable(values=np.array([[1.0, 0.2, 0.4]]))
        with pytest.raises(ValueError):
            PepTable(values=np.array([[0.9, 0.2]]))     # action 0 must be 1


class TestSpectrumFile:
    def test_default_spectrum(self):
        spec = default_spectrum()
        assert spec[0] == (10, 36.0)
        assert len(spec) == 8
        code = CodeSpec.standard()
        assert code.d_free == 10
        assert code.coded_bits == 256
        assert code.spectrum_terms == 8

    def test_parse_with_comments(self):
        got = load_weight_spectrum(io.StringIO("# c\n6 1.5\n\n8 2  # t\n"))
        assert got == [(6, 1.5), (8, 2.0)]

    def test_bad_line_reports_number(self):
        with pytest.raises(ValueError, match="line 2"):
            load_weight_spectrum(io.StringIO("6 1\nnope\n"))

    def test_rate_consistency(self):
        with pytest.raises(ValueError):
            CodeSpec(info_bits=5, rate="1/3", weight_spectra=((4, 1),),
                     noise_power=1.0)
