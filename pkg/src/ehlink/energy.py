"""Harvesting processes, battery dynamics and node power consumption.

Battery levels are kept as integers.  The transmitter side uses the minimum
transmit energy (full packet energy / beta) as its quantum, which is also
the action granularity of the power policies.  The receiver's sampling and
decoding costs are not integer multiples of its minimum receive energy, so
the receiver battery uses a finer quantum: the exact GCD of every receiver
energy amount, computed with rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

from .exceptions import CausalityError


def _as_fraction(x) -> Fraction:
    """Exact rational from a config value (decimal strings round-trip)."""
    if isinstance(x, Fraction):
        return x
    f = Fraction(str(x))
    return f


def _fraction_gcd(values):
    g = Fraction(0)
    for v in values:
        if v == 0:
            continue
        g = Fraction(math.gcd(g.numerator * v.denominator,
                              v.numerator * g.denominator),
                     g.denominator * v.denominator)
    if g == 0:
        raise ValueError("cannot derive a quantum from all-zero energies")
    return g


@dataclass(frozen=True)
class CorrelatedBernoulli:
    """Joint arrival process for co-located nodes: one categorical draw per
    slot over (none, rx only, tx only, both)."""
    p00: float
    p01: float
    p10: float
    p11: float
    amount_tx: float
    amount_rx: float

    def __post_init__(self):
        ps = (self.p00, self.p01, self.p10, self.p11)
        if any(p < 0 or p > 1 for p in ps):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(sum(ps) - 1.0) > 1e-12:
            raise ValueError(f"outcome probabilities sum to {sum(ps)}, not 1")
        if self.amount_tx < 0 or self.amount_rx < 0:
            raise ValueError("harvest amounts must be nonnegative")


@dataclass(frozen=True)
class Bernoulli:
    """Independent per-node arrivals: fixed amount with probability rho."""
    rho_tx: float
    rho_rx: float
    amount_tx: float
    amount_rx: float

    def __post_init__(self):
        for p in (self.rho_tx, self.rho_rx):
            if not 0 <= p <= 1:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.amount_tx < 0 or self.amount_rx < 0:
            raise ValueError("harvest amounts must be nonnegative")


@dataclass(frozen=True)
class CompoundPoisson:
    """Poisson arrival count per slot, i.i.d. exponential amounts."""
    intensity: float            # arrivals per second
    mean_amount_tx: float       # J per arrival
    mean_amount_rx: float

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("intensity must be nonnegative")
        if self.mean_amount_tx < 0 or self.mean_amount_rx < 0:
            raise ValueError("mean amounts must be nonnegative")


HarvestProcess = Bernoulli | CorrelatedBernoulli | CompoundPoisson


def poisson_count(rate: float, rng) -> int:
    """Knuth product-of-uniforms Poisson sampler (rate is the slot mean)."""
    if rate <= 0:
        return 0
    limit = math.exp(-rate)
    k = 0
    p = 1.0
    while True:
        p *= rng.uniform()
        if p <= limit:
            return k
        k += 1


def sample_arrivals(process: HarvestProcess, rng, slot_seconds: float):
    """Draw one slot's harvested energy pair (tx joules, rx joules).

    Draw order is part of the determinism contract shared with the
    simulation kernels: tx before rx, count before amounts.
    """
    if isinstance(process, Bernoulli):
        tx = process.amount_tx if rng.uniform() < process.rho_tx else 0.0
        rx = process.amount_rx if rng.uniform() < process.rho_rx else 0.0
        return tx, rx
    if isinstance(process, CorrelatedBernoulli):
        u = rng.uniform()
        if u < process.p00:
            return 0.0, 0.0
        if u < process.p00 + process.p01:
            return 0.0, process.amount_rx
        if u < process.p00 + process.p01 + process.p10:
            return process.amount_tx, 0.0
        return process.amount_tx, process.amount_rx
    if isinstance(process, CompoundPoisson):
        rate = process.intensity * slot_seconds
        out = []
        for mean in (process.mean_amount_tx, process.mean_amount_rx):
            total = 0.0
            for _ in range(poisson_count(rate, rng)):
                total += -mean * math.log1p(-rng.uniform())
            out.append(total)
        return tuple(out)
    raise TypeError(f"unknown harvest process {type(process).__name__}")


@dataclass(frozen=True)
class Battery:
    """Integer battery state in a node-specific energy quantum."""
    level: int
    capacity: int
    harvest_quantum: int    # units added by one Bernoulli arrival

    def __post_init__(self):
        if not 0 <= self.level <= self.capacity:
            raise ValueError(f"level {self.level} outside [0, {self.capacity}]")
        if self.harvest_quantum < 0:
            raise ValueError("harvest quantum must be nonnegative")


def battery_step(battery: Battery, spent: int, harvested) -> Battery:
    """One slot of battery evolution: harvest first, spend, clamp at capacity.

    `harvested` is either a bool (add the battery's own quantum) or an
    integer number of units.  Energy arriving within the slot is spendable
    in that slot; the capacity clamp applies to the carried-over level.
    """
    gain = battery.harvest_quantum if harvested is True else int(harvested)
    budget = battery.level + gain
    if spent < 0 or spent > budget:
        raise CausalityError(
            f"spend of {spent} units exceeds slot budget {budget} "
            f"(level {battery.level} + harvest {gain})")
    return replace(battery, level=min(budget - spent, battery.capacity))


def node_powers(config) -> tuple[float, float]:
    """Total per-slot power draw (W) of the transmitter and receiver."""
    p_tx = (1.0 + config.alpha) * config.p_out + config.p_circuit_tx
    p_rx = config.p_dec + config.p_circuit_rx + config.p_fb
    return p_tx, p_rx


@dataclass(frozen=True)
class LinkEnergyConfig:
    """Power and packet-sizing parameters of one link configuration."""

    p_out: float            # nominal transmit power, W
    alpha: float            # amplifier overhead (PAPR / drain efficiency - 1)
    p_circuit_tx: float
    p_circuit_rx: float
    p_dec: float
    p_fb: float
    slot_seconds: float
    beta: int               # packet divisions (power of two)
    modulation_order: int
    coded_bits: int         # m, for the beta upper bound

    def __post_init__(self):
        for name in ("p_out", "alpha", "p_circuit_tx", "p_circuit_rx",
                     "p_dec", "p_fb"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.slot_seconds > 0:
            raise ValueError("slot_seconds must be positive")
        if self.beta < 1 or self.beta & (self.beta - 1):
            raise ValueError(f"beta must be a power of two, got {self.beta}")
        max_beta = math.ceil(self.coded_bits / math.log2(self.modulation_order))
        if self.beta > max_beta:
            raise ValueError(f"beta {self.beta} exceeds symbol count {max_beta}")

    @property
    def p_tx_total(self) -> float:
        return node_powers(self)[0]

    @property
    def p_rx_total(self) -> float:
        return node_powers(self)[1]

    @property
    def e_min_tx(self) -> float:
        """Energy of the smallest transmit fraction (J)."""
        return self.p_tx_total * self.slot_seconds / self.beta

    @property
    def e_min_rx(self) -> float:
        """Energy of the smallest full receive fraction (J)."""
        return self.p_rx_total * self.slot_seconds / self.beta


@dataclass(frozen=True)
class LinkUnits:
    """Integer energy lattice for one configuration.

    Transmitter amounts are in e_min_tx units (the policy action scale);
    receiver amounts are in a finer quantum that represents every receiver
    cost exactly.
    """

    tx_quantum_j: float
    full_packet_units: int          # transmit units for a full packet (beta)
    bmax_tx: int
    harvest_tx: int                 # units per Bernoulli arrival

    rx_quantum_j: float
    bmax_rx: int
    harvest_rx: int
    sample_part: int                # rx units to sample one packet part
    decode: int                     # rx units for one decode attempt
    feedback: int

    @classmethod
    def derive(cls, cfg: LinkEnergyConfig, harvest_tx_j, harvest_rx_j,
               capacity_tx_j, capacity_rx_j) -> "LinkUnits":
        beta = cfg.beta
        ts = _as_fraction(cfg.slot_seconds)
        e_tx = (_as_fraction(1 + cfg.alpha) * _as_fraction(cfg.p_out)
                + _as_fraction(cfg.p_circuit_tx)) * ts
        e_min_tx = e_tx / beta
        # Transmitter lattice: non-integer multiples floor (spare energy in
        # excess of the last whole unit is unusable at the action scale).
        bmax_tx = int(_as_fraction(capacity_tx_j) / e_min_tx)
        harvest_tx = int(_as_fraction(harvest_tx_j) / e_min_tx)

        sample_part_j = _as_fraction(cfg.p_circuit_rx) * ts / beta
        decode_j = _as_fraction(cfg.p_dec) * ts
        feedback_j = _as_fraction(cfg.p_fb) * ts
        amounts = [sample_part_j, decode_j, feedback_j,
                   _as_fraction(harvest_rx_j), _as_fraction(capacity_rx_j)]
        q_rx = _fraction_gcd(amounts)
        return cls(
            tx_quantum_j=float(e_min_tx),
            full_packet_units=beta,
            bmax_tx=bmax_tx,
            harvest_tx=harvest_tx,
            rx_quantum_j=float(q_rx),
            bmax_rx=int(_as_fraction(capacity_rx_j) / q_rx),
            harvest_rx=int(_as_fraction(harvest_rx_j) / q_rx),
            sample_part=int(sample_part_j / q_rx),
            decode=int(decode_j / q_rx),
            feedback=int(feedback_j / q_rx),
        )

    @property
    def full_receive(self) -> int:
        """Rx units to sample a whole packet, decode it and send feedback."""
        return self.sample_part * self.full_packet_units + self.decode \
            + self.feedback

    def tx_units(self, joules: float) -> int:
        return int(joules / self.tx_quantum_j + 1e-9)

    def rx_units(self, joules: float) -> int:
        return int(joules / self.rx_quantum_j + 1e-9)
