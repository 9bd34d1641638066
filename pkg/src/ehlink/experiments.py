"""Named experiments: preset configurations, sweep grids and plot scripts.

Each experiment writes `<name>.csv` in the sweep schema plus a gnuplot
script referencing it; the analytical-versus-simulated experiment also
writes `analytical.csv` with both bound-mode and chain-mode drop
probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .analysis import average_pdp
from .config import SimConfig
from .exceptions import ConfigError
from .sim import CSV_HEADER, SweepRow, compare_schemes, sweep

RHO_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))

# (beta, policy, equal power override in mW or None)
_FULL_SCHEMES = ((4, "greedy", None), (1, "greedy", None),
                 (4, "equal", 5.0), (4, "equal", 15.0),
                 (1, "equal", 5.0), (1, "equal", 15.0))
_POISSON_SCHEMES = ((4, "greedy", None), (1, "greedy", None),
                    (4, "equal", 5.0), (1, "equal", 5.0))

EXPERIMENTS = {}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    description: str
    metric: str


def _register(name, description, metric):
    def deco(fn):
        EXPERIMENTS[name] = (ExperimentSpec(name, description, metric), fn)
        return fn
    return deco


def reduced_mdp_config(base: SimConfig, k_max: int) -> SimConfig:
    """Smaller state space used when comparing the two adaptive policies."""
    return replace(base, k_max=k_max, eh_rx_x=1.2)


def analysis_config(base: SimConfig, p_out_mw: float) -> SimConfig:
    """Reduced-state setup for the analytical-versus-simulated comparison."""
    return replace(base, eh_tx_x=2.0, bmax_tx_x=3.0, eh_rx_x=1.2,
                   bmax_rx_x=2.0, p_dec_w=0.5, p_out_mw=p_out_mw,
                   policy="equal", channel_mode="frame")


@_register("fig2", "adaptive policies: most-likely-state lookup vs greedy, "
           "reduced retransmission budgets", "pdp")
def _fig2(base: SimConfig, out: Path, frames, replications):
    rows = []
    for k_max in (2, 3):
        cfg = reduced_mdp_config(base, k_max)
        rows += compare_schemes(cfg, ((4, "mlph", None), (4, "greedy", None)),
                                RHO_GRID, replications=replications,
                                n_frames=frames)
    return rows


@_register("fig3", "average packet transmission time across schemes", "avg_packet_time")
def _fig3(base, out, frames, replications):
    return compare_schemes(base, _FULL_SCHEMES, RHO_GRID,
                           replications=replications, n_frames=frames)


@_register("fig4", "packet drop probability across schemes", "pdp")
def _fig4(base, out, frames, replications):
    return compare_schemes(base, _FULL_SCHEMES, RHO_GRID,
                           replications=replications, n_frames=frames)


@_register("fig5", "spectral efficiency at a fixed transmission horizon",
           "spectral_efficiency")
def _fig5(base, out, frames, replications):
    return compare_schemes(base, _FULL_SCHEMES, RHO_GRID,
                           replications=max(replications, 100),
                           horizon_slots=base.horizon_slots)


@_register("fig6", "analytical vs simulated drop probability, fixed power",
           "pdp")
def _fig6(base, out, frames, replications):
    rows = []
    analytical = ["rho,p_out_mw,mode,pdp"]
    for p_out in (5.0, 15.0):
        cfg = analysis_config(base, p_out)
        rows += sweep(cfg, RHO_GRID, replications=replications,
                      n_frames=frames)
        for rho in RHO_GRID:
            rcfg = replace(cfg, rho=rho)
            for mode in ("bound", "chain"):
                pdp = average_pdp(rcfg, mode=mode)
                analytical.append(f"{rho:.6g},{p_out:g},{mode},{pdp:.10g}")
    (out / "analytical.csv").write_text("\n".join(analytical) + "\n")
    return rows


@_register("fig7", "drop probability under compound-Poisson harvesting",
           "pdp")
def _fig7(base, out, frames, replications):
    cfg = replace(base, harvest_model="poisson")
    rows = []
    for beta, policy, power in _POISSON_SCHEMES:
        scfg = replace(cfg, beta=beta, policy=policy)
        if power is not None:
            scfg = replace(scfg, p_out_mw=power)
        # x-axis: arrival rate matched to the Bernoulli grid by mean energy
        # (per-arrival amounts average half a Bernoulli quantum).
        for rho in RHO_GRID:
            rows += sweep(scfg, [2.0 * rho], replications=replications,
                          n_frames=frames, rho_is_lambda=True)
    # report the rate-equivalent probability in the rho column
    rows = [replace(r, rho=round(r.rho / 2.0, 6)) for r in rows]
    return rows


def run_experiment(name: str, out_dir, base: SimConfig = None,
                   frames: int = None, replications: int = None) -> Path:
    """Run a named experiment and write its CSV and plot script."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from "
                          f"{sorted(EXPERIMENTS)}")
    spec, fn = EXPERIMENTS[name]
    base = base or SimConfig()
    frames = frames or default_frames(name, base)
    replications = replications or base.replications
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = fn(base, out, frames, replications)
    csv_path = out / f"{name}.csv"
    csv_path.write_text(
        "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n")
    (out / f"{name}.gp").write_text(plot_script(name, spec.metric, rows))
    return csv_path


def default_frames(name: str, base: SimConfig) -> int:
    if name == "fig6":
        return 1_000_000
    return base.n_frames


def plot_script(name: str, metric: str, rows: list[SweepRow]) -> str:
    """Gnuplot script filtering the CSV by scheme and metric."""
    combos = []
    for r in rows:
        key = (r.scheme, r.k_max)
        if r.metric == metric and key not in combos:
            combos.append(key)
    lines = [
        f'# gnuplot script for {name}; run: gnuplot {name}.gp',
        'set datafile separator ","',
        'set key outside',
        'set xlabel "harvesting probability"',
        f'set ylabel "{metric}"',
        'set grid',
        f'set terminal pngcairo size 900,600',
        f'set output "{name}.png"',
    ]
    plots = []
    for scheme, k_max in combos:
        cond = (f'(strcol(2) eq "{scheme}" && column(5) == {k_max} '
                f'&& strcol(6) eq "{metric}")')
        title = scheme if len({k for _, k in combos}) == 1 \
            else f"{scheme} K={k_max}"
        plots.append(f'"{name}.csv" using 1:({cond} ? column(7) : NaN) '
                     f'with linespoints title "{title}"')
    lines.append("plot \\\n  " + ", \\\n  ".join(plots))
    return "\n".join(lines) + "\n"
