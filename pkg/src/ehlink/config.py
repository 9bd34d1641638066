"""Configuration: flat key = value files, defaults, validation, round-trip.

Keys carry their unit in the name (p_out_mw, slot_s).  Harvest amounts and
battery capacities are expressed as multiples of the full per-slot node
energies (eh_tx_x = 3 means three full transmit slots per arrival), which
is how such link budgets are usually quoted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from fractions import Fraction

from .channel import ChannelModel
from .energy import LinkEnergyConfig, LinkUnits
from .error import CodeSpec, PepTable, load_weight_spectrum
from .exceptions import ConfigError

_POLICIES = ("equal", "greedy", "mlph")
_HARVEST_MODELS = ("bernoulli", "correlated", "poisson")
_CHANNEL_MODES = ("slot", "frame")
_COST_MODES = ("pep", "nak_weighted")
_IDLE_COSTS = ("pep", "zero")
_X_MODES = ("cumulative", "newly")


@dataclass(frozen=True)
class SimConfig:
    # channel
    g_states: int = 3
    mean_gain: float = 1.0
    doppler_slot: float = 0.05
    omega_rows: str = ""        # optional: "p11 p12 p13; p21 p22 p23; ..."
    boundaries: str = ""        # optional interior boundaries: "0.4, 1.1"
    # code / modulation
    c_bits: int = 128
    code_rate: Fraction = Fraction(1, 2)
    modulation_order: int = 2
    spectrum_file: str = ""
    noise_mw: float = 5.0
    # protocol
    k_max: int = 4
    beta: int = 4
    slot_s: float = 1.0
    horizon_slots: int = 150
    # powers
    p_out_mw: float = 5.0
    alpha: float = 1.0
    p_ctx_w: float = 0.1
    p_crx_w: float = 0.1
    p_dec_w: float = 0.7
    p_fb_w: float = 0.0
    # energy arrivals and storage
    eh_tx_x: float = 3.0
    eh_rx_x: float = 1.5
    bmax_tx_x: float = 6.0
    bmax_rx_x: float = 3.0
    rho: float = 0.5
    harvest_model: str = "bernoulli"
    p00: float = 0.25
    p01: float = 0.25
    p10: float = 0.25
    p11: float = 0.25
    lambda_ts: float = 1.0
    poisson_mean_tx_x: float = 1.5
    poisson_mean_rx_x: float = 0.75
    init_tx_frac: float = 1.0
    init_rx_frac: float = 1.0
    # decision making
    policy: str = "greedy"
    cost_mode: str = "pep"
    idle_cost: str = "pep"
    kappa: int = 10
    # analysis
    x_mode: str = "cumulative"
    channel_mode: str = "slot"
    # experiment control
    seed: int = 42
    replications: int = 8
    n_frames: int = 20000

    # ----- derived objects -------------------------------------------------

    def energy_config(self) -> LinkEnergyConfig:
        return LinkEnergyConfig(
            p_out=self.p_out_mw * 1e-3, alpha=self.alpha,
            p_circuit_tx=self.p_ctx_w, p_circuit_rx=self.p_crx_w,
            p_dec=self.p_dec_w, p_fb=self.p_fb_w,
            slot_seconds=self.slot_s, beta=self.beta,
            modulation_order=self.modulation_order,
            coded_bits=self.coded_bits)

    @property
    def coded_bits(self) -> int:
        r = self.code_rate
        if (self.c_bits * r.denominator) % r.numerator:
            raise ConfigError(f"c_bits {self.c_bits} not divisible by "
                              f"code rate {r}")
        return self.c_bits * r.denominator // r.numerator

    def channel(self) -> ChannelModel:
        matrix = None
        if self.omega_rows:
            try:
                matrix = [[float(v) for v in row.split()]
                          for row in self.omega_rows.split(";")]
            except ValueError as exc:
                raise ConfigError(f"bad omega_rows: {exc}") from None
        bounds = None
        if self.boundaries:
            try:
                bounds = [float(v) for v in self.boundaries.split(",")]
            except ValueError as exc:
                raise ConfigError(f"bad boundaries: {exc}") from None
        try:
            return ChannelModel.rayleigh(self.g_states, self.mean_gain,
                                         self.doppler_slot,
                                         transition_matrix=matrix,
                                         interior_boundaries=bounds)
        except ValueError as exc:
            raise ConfigError(f"bad channel specification: {exc}") from None

    def code(self) -> CodeSpec:
        spectrum = None
        if self.spectrum_file:
            spectrum = load_weight_spectrum(self.spectrum_file)
        return CodeSpec.standard(info_bits=self.c_bits,
                                 noise_power=self.noise_mw * 1e-3,
                                 modulation_order=self.modulation_order,
                                 spectrum=spectrum)

    def units(self) -> LinkUnits:
        cfg = self.energy_config()
        ts = Fraction(str(self.slot_s))
        e_tx = (Fraction(str(1 + self.alpha)) * Fraction(str(self.p_out_mw))
                / 1000 + Fraction(str(self.p_ctx_w))) * ts
        e_rx = (Fraction(str(self.p_dec_w)) + Fraction(str(self.p_crx_w))
                + Fraction(str(self.p_fb_w))) * ts
        return LinkUnits.derive(
            cfg,
            harvest_tx_j=Fraction(str(self.eh_tx_x)) * e_tx,
            harvest_rx_j=Fraction(str(self.eh_rx_x)) * e_rx,
            capacity_tx_j=Fraction(str(self.bmax_tx_x)) * e_tx,
            capacity_rx_j=Fraction(str(self.bmax_rx_x)) * e_rx)

    def pep_table(self, channel: ChannelModel = None,
                  units: LinkUnits = None) -> PepTable:
        channel = channel or self.channel()
        units = units or self.units()
        return PepTable.build(self.code(), channel.mean_gains,
                              nominal_p_out=self.p_out_mw * 1e-3,
                              full_packet_units=units.full_packet_units,
                              max_action=units.bmax_tx)

    @property
    def rho_tx(self) -> float:
        return self.rho

    @property
    def rho_rx(self) -> float:
        return self.rho

    @property
    def rho_rx_effective(self) -> float:
        """Receiver activity probability used by the belief filter; for the
        compound Poisson model this is the chance of at least one arrival."""
        if self.harvest_model == "poisson":
            return 1.0 - math.exp(-self.lambda_ts)
        if self.harvest_model == "correlated":
            return self.p01 + self.p11
        return self.rho

    @property
    def rho_tx_effective(self) -> float:
        if self.harvest_model == "poisson":
            return 1.0 - math.exp(-self.lambda_ts)
        if self.harvest_model == "correlated":
            return self.p10 + self.p11
        return self.rho


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _parse_fraction(text: str) -> Fraction:
    return Fraction(text.strip())


_FIELD_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _convert(key: str, text: str):
    ftype = _FIELD_TYPES[key]
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    if ftype == "Fraction":
        return _parse_fraction(text)
    return text


_RANGE_CHECKS = {
    "rho": lambda v: 0.0 <= v <= 1.0,
    "p00": lambda v: 0.0 <= v <= 1.0,
    "p01": lambda v: 0.0 <= v <= 1.0,
    "p10": lambda v: 0.0 <= v <= 1.0,
    "p11": lambda v: 0.0 <= v <= 1.0,
    "g_states": lambda v: v >= 1,
    "k_max": lambda v: v >= 1,
    "beta": lambda v: v >= 1 and v & (v - 1) == 0,
    "slot_s": lambda v: v > 0,
    "noise_mw": lambda v: v > 0,
    "mean_gain": lambda v: v > 0,
    "doppler_slot": lambda v: 0 < v < 0.5,
    "p_out_mw": lambda v: v >= 0,
    "alpha": lambda v: v >= 0,
    "p_ctx_w": lambda v: v >= 0,
    "p_crx_w": lambda v: v >= 0,
    "p_dec_w": lambda v: v >= 0,
    "p_fb_w": lambda v: v >= 0,
    "eh_tx_x": lambda v: v >= 0,
    "eh_rx_x": lambda v: v >= 0,
    "bmax_tx_x": lambda v: v > 0,
    "bmax_rx_x": lambda v: v > 0,
    "lambda_ts": lambda v: v >= 0,
    "poisson_mean_tx_x": lambda v: v >= 0,
    "poisson_mean_rx_x": lambda v: v >= 0,
    "init_tx_frac": lambda v: 0 <= v <= 1,
    "init_rx_frac": lambda v: 0 <= v <= 1,
    "kappa": lambda v: v >= 1,
    "replications": lambda v: v >= 1,
    "n_frames": lambda v: v >= 1,
    "horizon_slots": lambda v: v >= 1,
    "policy": lambda v: v in _POLICIES,
    "harvest_model": lambda v: v in _HARVEST_MODELS,
    "channel_mode": lambda v: v in _CHANNEL_MODES,
    "cost_mode": lambda v: v in _COST_MODES,
    "idle_cost": lambda v: v in _IDLE_COSTS,
    "x_mode": lambda v: v in _X_MODES,
}


def parse_config_text(text: str, base: SimConfig = None) -> SimConfig:
    overrides = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", line=ln)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", line=ln)
        try:
            converted = _convert(key, value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line=ln) from None
        check = _RANGE_CHECKS.get(key)
        if check and not check(converted):
            raise ConfigError(f"{key} = {value} out of range", line=ln)
        overrides[key] = converted
    cfg = replace(base or SimConfig(), **overrides)
    validate_config(cfg)
    return cfg


def parse_config(path, base: SimConfig = None) -> SimConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base=base)


def validate_config(cfg: SimConfig):
    """Cross-field consistency beyond single-key ranges."""
    try:
        cfg.energy_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.harvest_model == "correlated":
        total = cfg.p00 + cfg.p01 + cfg.p10 + cfg.p11
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"correlated outcome probabilities sum to "
                              f"{total}, not 1")
    if cfg.channel_mode == "frame" and cfg.policy != "equal":
        raise ConfigError("frame-held channel mode supports only the equal "
                          "power policy")
    units = cfg.units()
    if units.bmax_tx < 1:
        raise ConfigError("transmitter battery holds less than one unit")


def emit_config(cfg: SimConfig) -> str:
    """Write a config back out; parsing the result reproduces it exactly."""
    lines = []
    for f in fields(SimConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, Fraction):
            value = f"{value.numerator}/{value.denominator}"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
