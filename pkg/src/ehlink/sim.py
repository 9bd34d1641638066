"""Monte Carlo engine: composes channel, energy, protocol and policy into
slot-by-slot trials and aggregates the three link metrics.

Trials are deterministic in (config, seed).  Scheme comparisons reuse seeds
so that channel and harvesting realisations are common random numbers: the
environment streams are drawn every slot regardless of what the scheme
does, so paired trials face identical weather.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernelio as kio
from .backend import simulate
from .config import SimConfig
from .exceptions import EhlinkError
from .policy import build_mdp, relative_value_iteration

_POLICY_IDS = {"equal": kio.POLICY_EQUAL, "greedy": kio.POLICY_GREEDY,
               "mlph": kio.POLICY_MLPH}


@dataclass(frozen=True)
class Metrics:
    avg_packet_time: float      # elapsed slots per successfully delivered
                                # packet (time lost to drops included)
    pdp: float                  # drop fraction after K attempts
    spectral_efficiency: float  # delivered / attempted within the run
    avg_cost: float             # empirical mean slot cost
    slot_count: int
    frame_count: int
    success_count: int

    def __post_init__(self):
        if self.frame_count:
            assert 0.0 <= self.pdp <= 1.0
            assert 0.0 <= self.spectral_efficiency <= 1.0
        if self.success_count:
            assert self.avg_packet_time >= 1.0


_mlph_cache: dict = {}


def mlph_action_array(config: SimConfig) -> np.ndarray:
    """Optimal fully-observed policy reshaped for kernel lookup, cached per
    (channel, energy, rho) fingerprint."""
    units = config.units()
    key = (config.g_states, config.mean_gain, config.doppler_slot,
           config.p_out_mw, config.noise_mw, config.k_max, config.beta,
           units.bmax_tx, units.harvest_tx, round(config.rho_tx_effective, 12),
           round(config.rho_rx_effective, 12), config.cost_mode,
           config.idle_cost, config.c_bits, str(config.code_rate),
           config.spectrum_file, config.alpha, config.p_ctx_w)
    hit = _mlph_cache.get(key)
    if hit is not None:
        return hit
    channel = config.channel()
    pep = config.pep_table(channel, units)
    mdp = build_mdp(channel, pep, units.bmax_tx, units.harvest_tx,
                    config.k_max, config.rho_tx_effective,
                    config.rho_rx_effective, cost_mode=config.cost_mode,
                    idle_cost=config.idle_cost)
    vi = relative_value_iteration(mdp)
    arr = np.zeros((units.bmax_tx + 1, config.g_states, config.k_max),
                   dtype=np.int32)
    for b in range(units.bmax_tx + 1):
        for g in range(config.g_states):
            for k in range(1, config.k_max + 1):
                arr[b, g, k - 1] = vi.policy[mdp.state_index(b, g, k)]
    _mlph_cache[key] = arr
    return arr


def kernel_inputs(config: SimConfig, seed: int, n_frames: int = None,
                  horizon_slots: int = None) -> kio.KernelInputs:
    """Realise a config as the plain-array pack both backends consume."""
    units = config.units()
    channel = config.channel()
    pep = config.pep_table(channel, units)
    mlph = None
    if config.policy == "mlph":
        mlph = mlph_action_array(config)
    if n_frames is None and horizon_slots is None:
        n_frames = config.n_frames
    return kio.KernelInputs(
        num_states=config.g_states,
        beta=config.beta,
        k_max=config.k_max,
        bmax_tx=units.bmax_tx,
        harvest_tx=units.harvest_tx,
        bmax_rx=units.bmax_rx,
        harvest_rx=units.harvest_rx,
        sample_part=units.sample_part,
        decode=units.decode,
        feedback=units.feedback,
        init_tx=int(units.bmax_tx * config.init_tx_frac),
        init_rx=int(units.bmax_rx * config.init_rx_frac),
        policy=_POLICY_IDS[config.policy],
        channel_mode=(kio.CHANNEL_PER_FRAME if config.channel_mode == "frame"
                      else kio.CHANNEL_PER_SLOT),
        harvest_model={"bernoulli": kio.HARVEST_BERNOULLI,
                       "correlated": kio.HARVEST_CORRELATED,
                       "poisson": kio.HARVEST_POISSON}[config.harvest_model],
        rho_tx=config.rho_tx,
        rho_rx=config.rho_rx,
        corr_cdf=(config.p00, config.p00 + config.p01,
                  config.p00 + config.p01 + config.p10),
        lambda_slot=config.lambda_ts,
        poisson_mean_tx=config.poisson_mean_tx_x * units.full_packet_units,
        poisson_mean_rx=config.poisson_mean_rx_x * units.full_receive,
        rho_rx_belief=config.rho_rx_effective,
        pep=pep.values,
        omega=channel.transition_matrix,
        steady=channel.steady_state,
        mlph_actions=mlph,
        seed=seed,
        n_frames=n_frames or 0,
        horizon_slots=horizon_slots or 0,
    )


def run_trial(config: SimConfig, seed: int, n_frames: int = None,
              horizon_slots: int = None, trace: bool = False,
              decision_log: bool = False):
    """One deterministic trial; returns Metrics (and raw outputs on request)."""
    inp = kernel_inputs(config, seed, n_frames, horizon_slots)
    try:
        out = simulate(inp, trace=trace, decision_log=decision_log)
    except EhlinkError:
        raise
    except Exception as exc:
        raise EhlinkError(f"trial failed (seed {seed}): {exc}") from exc
    metrics = Metrics(
        avg_packet_time=(out.slots / out.successes
                         if out.successes else math.nan),
        pdp=out.drops / out.frames if out.frames else math.nan,
        spectral_efficiency=(out.successes / out.frames
                             if out.frames else 0.0),
        avg_cost=out.cost_sum / out.slots if out.slots else math.nan,
        slot_count=out.slots,
        frame_count=out.frames,
        success_count=out.successes,
    )
    if trace or decision_log:
        return metrics, out
    return metrics


METRIC_NAMES = ("avg_packet_time", "pdp", "spectral_efficiency", "avg_cost")


@dataclass(frozen=True)
class SweepRow:
    rho: float
    scheme: str
    policy: str
    beta: int
    k_max: int
    metric: str
    mean: float
    stderr: float
    n: int
    values: tuple = ()

    def csv(self) -> str:
        return (f"{self.rho:.6g},{self.scheme},{self.policy},{self.beta},"
                f"{self.k_max},{self.metric},{self.mean:.10g},"
                f"{self.stderr:.6g},{self.n}")


CSV_HEADER = "rho,scheme,policy,beta,K,metric,mean,stderr,n"


def _aggregate(rho, scheme, config, per_seed: dict) -> list[SweepRow]:
    rows = []
    for name in METRIC_NAMES:
        vals = np.array(per_seed[name], dtype=float)
        ok = vals[~np.isnan(vals)]
        n = len(ok)
        mean = float(ok.mean()) if n else math.nan
        stderr = float(ok.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        rows.append(SweepRow(rho=rho, scheme=scheme, policy=config.policy,
                             beta=config.beta, k_max=config.k_max,
                             metric=name, mean=mean, stderr=stderr, n=n,
                             values=tuple(vals)))
    return rows


def scheme_label(config: SimConfig) -> str:
    arq = "ack-nakx" if config.beta > 1 else "ack-nak"
    pol = config.policy
    if pol == "equal":
        pol = f"equal{config.p_out_mw:g}mw"
    return f"{arq}/{pol}"


def run_replicated(config: SimConfig, rho: float, replications: int,
                   n_frames: int = None, horizon_slots: int = None,
                   rho_is_lambda: bool = False) -> list[SweepRow]:
    """Replicated trials at one harvesting grid point (seed, seed+1, ...)."""
    if rho_is_lambda:
        cfg = replace(config, lambda_ts=rho)
    else:
        cfg = replace(config, rho=rho)
    per_seed = {name: [] for name in METRIC_NAMES}
    for r in range(replications):
        m = run_trial(cfg, cfg.seed + r, n_frames=n_frames,
                      horizon_slots=horizon_slots)
        for name in METRIC_NAMES:
            per_seed[name].append(getattr(m, name))
    return _aggregate(rho, scheme_label(cfg), cfg, per_seed)


def sweep(config: SimConfig, rho_values, replications: int = None,
          n_frames: int = None, horizon_slots: int = None,
          rho_is_lambda: bool = False) -> list[SweepRow]:
    """Aggregate metrics across a harvesting-probability grid."""
    replications = replications or config.replications
    if replications < 1:
        raise ValueError("replications must be >= 1")
    rows = []
    for rho in rho_values:
        rows.extend(run_replicated(config, rho, replications,
                                   n_frames=n_frames,
                                   horizon_slots=horizon_slots,
                                   rho_is_lambda=rho_is_lambda))
    return rows


def compare_schemes(config: SimConfig, schemes, rho_values,
                    replications: int = None, n_frames: int = None,
                    horizon_slots: int = None,
                    rho_is_lambda: bool = False) -> list[SweepRow]:
    """Paired-seed comparison across (arq, policy) variants.

    `schemes` is an iterable of (beta, policy, equal_power_mw or None).
    All variants run with the same seed list, so harvest and channel
    realisations are shared.
    """
    rows = []
    for beta, policy, power in schemes:
        cfg = replace(config, beta=beta, policy=policy)
        if power is not None:
            cfg = replace(cfg, p_out_mw=power)
        rows.extend(sweep(cfg, rho_values, replications=replications,
                          n_frames=n_frames, horizon_slots=horizon_slots,
                          rho_is_lambda=rho_is_lambda))
    return rows


def paired_difference(rows_a, rows_b, metric: str):
    """Per-rho paired mean difference (a - b) with its standard error."""
    a_by = {(r.rho): r for r in rows_a if r.metric == metric}
    b_by = {(r.rho): r for r in rows_b if r.metric == metric}
    out = {}
    for rho in sorted(a_by):
        va = np.array(a_by[rho].values, dtype=float)
        vb = np.array(b_by[rho].values, dtype=float)
        diff = va - vb
        diff = diff[~np.isnan(diff)]
        n = len(diff)
        se = float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out[rho] = (float(diff.mean()) if n else math.nan, se, n)
    return out
