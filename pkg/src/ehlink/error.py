"""Packet error probability: BPSK bit errors, the convolutional-code union
bound, and the worst-part rule for packets delivered in fractions.

The union bound blows up at low SNR, so the inner spectrum sum is clamped
to 1 before exponentiation; probabilities stay well formed and a zero-energy
transmission has error probability exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

import numpy as np

DEFAULT_SPECTRUM = "convcode_133_171_r12.txt"


def load_weight_spectrum(source) -> list[tuple[int, float]]:
    """Parse 'distance coefficient' lines; '#' starts a comment."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source) as fh:
            lines = fh.read().splitlines()
    spectrum = []
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {ln}: expected 'd A_d', got {raw!r}")
        try:
            d, a = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ValueError(f"line {ln}: {exc}") from None
        if d < 1 or a < 0:
            raise ValueError(f"line {ln}: invalid spectrum entry ({d}, {a})")
        spectrum.append((d, a))
    if not spectrum:
        raise ValueError("weight spectrum file contains no entries")
    spectrum.sort()
    return spectrum


def default_spectrum() -> list[tuple[int, float]]:
    ref = resources.files("ehlink.data").joinpath(DEFAULT_SPECTRUM)
    return load_weight_spectrum(ref.open())


@dataclass(frozen=True)
class CodeSpec:
    """FEC code description used by the union bound."""

    info_bits: int
    rate: Fraction
    weight_spectra: tuple        # ((d, A_d), ...) sorted by d
    noise_power: float           # W
    modulation_order: int = 2

    def __post_init__(self):
        rate = Fraction(self.rate)
        if (self.info_bits * rate.denominator) % rate.numerator:
            raise ValueError(
                f"coded length {self.info_bits}/{rate} is not an integer")
        object.__setattr__(self, "rate", rate)
        spec = tuple(sorted(tuple(p) for p in self.weight_spectra))
        if not spec or any(a < 0 for _, a in spec):
            raise ValueError("weight spectrum must be nonempty, A_d >= 0")
        object.__setattr__(self, "weight_spectra", spec)
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")

    @property
    def coded_bits(self) -> int:
        return self.info_bits * self.rate.denominator // self.rate.numerator

    @property
    def d_free(self) -> int:
        return self.weight_spectra[0][0]

    @property
    def spectrum_terms(self) -> int:
        """Recorded truncation length of the spectrum."""
        return len(self.weight_spectra)

    @classmethod
    def standard(cls, info_bits=128, noise_power=0.005,
                 modulation_order=2, spectrum=None) -> "CodeSpec":
        if spectrum is None:
            spectrum = default_spectrum()
        return cls(info_bits=info_bits, rate=Fraction(1, 2),
                   weight_spectra=tuple(spectrum), noise_power=noise_power,
                   modulation_order=modulation_order)


def bep_bpsk(d: int, mean_gain: float, p_out: float,
             noise_power: float) -> float:
    """BPSK pairwise bit error probability at Hamming distance d."""
    if d < 1:
        raise ValueError(f"distance must be >= 1, got {d}")
    if mean_gain < 0:
        raise ValueError("mean gain must be nonnegative")
    if not noise_power > 0:
        raise ValueError("noise power must be positive")
    return 0.5 * math.erfc(math.sqrt(d * mean_gain * p_out / noise_power))


def packet_error_prob(code: CodeSpec, mean_gain: float, p_out: float) -> float:
    """Union-bound packet error probability, clamped into [0, 1]."""
    m = code.coded_bits
    total = 0.0
    for d, a in code.weight_spectra:
        if d > m:
            break
        total += a * bep_bpsk(d, mean_gain, p_out, code.noise_power)
        if total >= 1.0:
            return 1.0
    return 1.0 - (1.0 - total) ** m


def pep_adaptive(part_peps) -> float:
    """Error probability of a packet assembled from parts: the worst part."""
    peps = list(part_peps)
    if not peps:
        raise ValueError("a decode attempt needs at least one stored part")
    return max(peps)


@dataclass(frozen=True)
class PepTable:
    """Packet error probability per (channel state, action level).

    Action a is the transmit energy in minimum-energy units for a full
    packet; a = full_packet_units corresponds to the nominal output power
    and other levels scale the output power proportionally.  Entries are
    non-increasing in the action and in the state mean gain, and a = 0
    (no transmission) always fails.
    """

    values: np.ndarray          # shape (num_states, max_action + 1)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("PEP table must be 2-D")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("PEP entries must lie in [0, 1]")
        if not np.all(v[:, 0] == 1.0):
            raise ValueError("PEP at action 0 must be exactly 1")
        if np.any(np.diff(v, axis=1) > 1e-12):
            raise ValueError("PEP must be non-increasing in the action level")
        object.__setattr__(self, "values", v)

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def max_action(self) -> int:
        return self.values.shape[1] - 1

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def build(cls, code: CodeSpec, mean_gains, nominal_p_out: float,
              full_packet_units: int, max_action: int) -> "PepTable":
        """Tabulate the union bound over states and action levels."""
        gains = np.asarray(mean_gains, dtype=float)
        v = np.ones((len(gains), max_action + 1))
        for gi, gain in enumerate(gains):
            for a in range(1, max_action + 1):
                p_out = nominal_p_out * a / full_packet_units
                v[gi, a] = packet_error_prob(code, gain, p_out)
        return cls(values=v)

    @classmethod
    def constant(cls, pep: float, num_states: int,
                 max_action: int) -> "PepTable":
        """Same error probability for every real transmission (test/analysis
        helper for closed-form checks)."""
        v = np.full((num_states, max_action + 1), float(pep))
        v[:, 0] = 1.0
        return cls(values=v)
