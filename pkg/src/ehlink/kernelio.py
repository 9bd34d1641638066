"""Plain-array input/output contract shared by the simulation backends.

Both kernels must consume the same pack and draw from the same substreams
in the same order, so a given (config, seed) produces bit-identical
trajectories regardless of backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLICY_EQUAL = 0
POLICY_GREEDY = 1
POLICY_MLPH = 2

CHANNEL_PER_SLOT = 0
CHANNEL_PER_FRAME = 1

HARVEST_BERNOULLI = 0
HARVEST_CORRELATED = 1
HARVEST_POISSON = 2


@dataclass
class KernelInputs:
    # dimensions and lattice
    num_states: int
    beta: int
    k_max: int
    bmax_tx: int
    harvest_tx: int
    bmax_rx: int
    harvest_rx: int
    sample_part: int
    decode: int
    feedback: int
    init_tx: int
    init_rx: int
    # modes
    policy: int
    channel_mode: int
    harvest_model: int
    # harvest parameters
    rho_tx: float
    rho_rx: float
    corr_cdf: tuple = (0.25, 0.5, 0.75)   # cumulative (p00, +p01, +p10)
    lambda_slot: float = 0.0
    poisson_mean_tx: float = 0.0          # tx units per arrival
    poisson_mean_rx: float = 0.0          # rx units per arrival
    # belief filter
    rho_rx_belief: float = 0.5
    # tables
    pep: np.ndarray = None                # (G, bmax_tx + 1)
    omega: np.ndarray = None              # (G, G)
    steady: np.ndarray = None             # (G,)
    mlph_actions: np.ndarray = None       # (bmax_tx + 1, G, k_max) int32
    # run control
    seed: int = 42
    n_frames: int = 0                     # 0: unused
    horizon_slots: int = 0                # 0: unused

    def __post_init__(self):
        self.pep = np.ascontiguousarray(self.pep, dtype=np.float64)
        self.omega = np.ascontiguousarray(self.omega, dtype=np.float64)
        self.steady = np.ascontiguousarray(self.steady, dtype=np.float64)
        if self.mlph_actions is None:
            self.mlph_actions = np.zeros((0, 0, 0), dtype=np.int32)
        self.mlph_actions = np.ascontiguousarray(self.mlph_actions,
                                                 dtype=np.int32)
        if self.n_frames <= 0 and self.horizon_slots <= 0:
            raise ValueError("need a frame target or a slot horizon")


@dataclass
class KernelOutputs:
    frames: int
    successes: int
    drops: int
    slots: int
    success_slots: int
    cost_sum: float
    trace: list = field(default_factory=list)
    decision_log: list = field(default_factory=list)
