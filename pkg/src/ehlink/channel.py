"""Finite-state Markov abstraction of the Rayleigh-faded link.

The exponential power-gain distribution is partitioned into intervals of
equal stationary mass; a slow-fading tridiagonal transition matrix is
generated from the level-crossing rates at the interval boundaries, or the
matrix can be supplied directly from a config file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AmbiguousChainError

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-10


def partition_rayleigh(num_states: int, mean_gain: float) -> list[float]:
    """Boundaries splitting the exponential gain CDF into equal-mass bins.

    Returns num_states + 1 values, starting at 0 and ending at inf.
    """
    if num_states < 1:
        raise ValueError(f"num_states must be >= 1, got {num_states}")
    if not mean_gain > 0:
        raise ValueError(f"mean_gain must be > 0, got {mean_gain}")
    bounds = [0.0]
    for k in range(1, num_states):
        bounds.append(-mean_gain * math.log1p(-k / num_states))
    bounds.append(math.inf)
    return bounds


def mean_power_gain(boundaries, interval_index: int, mean_gain: float) -> float:
    """Conditional mean of the exponential gain on one partition interval.

    Closed form; the unbounded last interval uses memorylessness
    (lower edge plus the distribution mean).
    """
    if not 0 <= interval_index < len(boundaries) - 1:
        raise ValueError(f"interval_index {interval_index} out of range")
    lo = boundaries[interval_index]
    hi = boundaries[interval_index + 1]
    if not hi > lo:
        raise ValueError(f"empty interval [{lo}, {hi})")
    if math.isinf(hi):
        return lo + mean_gain
    mu = mean_gain
    mass = math.exp(-lo / mu) - math.exp(-hi / mu)
    if mass <= 0:
        raise ValueError(f"interval [{lo}, {hi}) carries no probability mass")
    num = (lo + mu) * math.exp(-lo / mu) - (hi + mu) * math.exp(-hi / mu)
    return num / mass


def steady_state(transition_matrix) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Solved as the left null space of (P - I); raises AmbiguousChainError
    when the eigenvalue 1 is not simple (reducible or periodic chain).
    """
    P = np.asarray(transition_matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got {P.shape}")
    _check_row_stochastic(P)
    n = P.shape[0]
    eigvals = np.linalg.eigvals(P)
    n_unit = int(np.sum(np.abs(eigvals - 1.0) < 1e-8))
    if n_unit != 1:
        raise AmbiguousChainError(
            f"stationary distribution is not unique: eigenvalue 1 has "
            f"multiplicity {n_unit} (reducible or periodic chain)")
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.max(np.abs(pi @ P - pi))
    if resid > STATIONARY_TOL:
        raise AmbiguousChainError(f"stationary solve residual {resid:.2e}")
    return pi


def slow_fading_matrix(boundaries, mean_gain: float,
                       doppler_slot: float = 0.05) -> np.ndarray:
    """Tridiagonal slow-fading transition matrix for an equal-mass partition.

    Off-diagonal entries come from the Rayleigh level-crossing rates at the
    interval boundaries normalised by the per-state stationary mass; the
    construction satisfies detailed balance, so the stationary distribution
    equals the partition masses.
    """
    n = len(boundaries) - 1
    if n == 1:
        return np.array([[1.0]])
    if not 0 < doppler_slot < 0.5:
        raise ValueError(f"normalised Doppler must be in (0, 0.5), "
                         f"got {doppler_slot}")
    # Interval masses under the exponential gain CDF (1/n for the
    # equal-mass partition) and crossing rates per slot at each interior
    # boundary; detailed balance makes the masses stationary.
    mass = [math.exp(-boundaries[i] / mean_gain)
            - (0.0 if math.isinf(boundaries[i + 1])
               else math.exp(-boundaries[i + 1] / mean_gain))
            for i in range(n)]
    cross = [math.sqrt(2.0 * math.pi * g / mean_gain) * doppler_slot
             * math.exp(-g / mean_gain) for g in boundaries[1:n]]
    P = np.zeros((n, n))
    for i in range(n):
        up = cross[i] / mass[i] if i < n - 1 else 0.0
        down = cross[i - 1] / mass[i] if i > 0 else 0.0
        if up + down >= 1.0:
            raise ValueError("doppler_slot too large for a valid slow-fading "
                             "matrix; reduce it or supply a matrix directly")
        P[i, i] = 1.0 - up - down
        if i < n - 1:
            P[i, i + 1] = up
        if i > 0:
            P[i, i - 1] = down
    return P


def _check_row_stochastic(P: np.ndarray, tol: float = STOCHASTIC_TOL):
    if np.any(P < -tol) or np.any(P > 1 + tol):
        raise ValueError("transition matrix entries must lie in [0, 1]")
    bad = np.abs(P.sum(axis=1) - 1.0) > max(tol, 1e-12)
    if np.any(bad):
        rows = np.flatnonzero(bad)
        raise ValueError(f"transition matrix rows {rows.tolist()} do not "
                         f"sum to 1")


@dataclass(frozen=True)
class ChannelModel:
    """Immutable finite-state channel: partition, kinetics and state means."""

    num_states: int
    boundaries: tuple
    transition_matrix: np.ndarray
    steady_state: np.ndarray
    mean_gains: np.ndarray
    mean_channel_gain: float
    _cum_rows: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        P = np.asarray(self.transition_matrix, dtype=float)
        _check_row_stochastic(P)
        if len(self.boundaries) != self.num_states + 1:
            raise ValueError("boundary count must be num_states + 1")
        bs = self.boundaries
        if bs[0] != 0.0 or not math.isinf(bs[-1]):
            raise ValueError("boundaries must start at 0 and end at inf")
        if any(a >= b for a, b in zip(bs, bs[1:])):
            raise ValueError("boundaries must be strictly increasing")
        pi = np.asarray(self.steady_state, dtype=float)
        if abs(pi.sum() - 1.0) > 1e-10 or np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
            raise ValueError("steady_state is not stationary for the matrix")
        for i, g in enumerate(self.mean_gains):
            lo, hi = bs[i], bs[i + 1]
            if not (lo < g and (math.isinf(hi) or g < hi)):
                raise ValueError(f"mean gain {g} outside interval [{lo}, {hi})")
        object.__setattr__(self, "transition_matrix", P)
        object.__setattr__(self, "steady_state", pi)
        object.__setattr__(self, "mean_gains",
                           np.asarray(self.mean_gains, dtype=float))
        object.__setattr__(self, "_cum_rows", np.cumsum(P, axis=1))

    @classmethod
    def rayleigh(cls, num_states: int, mean_gain: float = 1.0,
                 doppler_slot: float = 0.05, transition_matrix=None,
                 interior_boundaries=None) -> "ChannelModel":
        """Equal-mass partition (or user boundaries) plus a generated or
        user-supplied transition matrix."""
        if interior_boundaries is not None:
            bounds = [0.0] + [float(b) for b in interior_boundaries] \
                + [math.inf]
            if len(bounds) != num_states + 1:
                raise ValueError(f"expected {num_states - 1} interior "
                                 f"boundaries, got {len(bounds) - 2}")
        else:
            bounds = partition_rayleigh(num_states, mean_gain)
        if transition_matrix is None:
            P = slow_fading_matrix(bounds, mean_gain, doppler_slot)
        else:
            P = np.asarray(transition_matrix, dtype=float)
        gains = np.array([mean_power_gain(bounds, i, mean_gain)
                          for i in range(num_states)])
        return cls(num_states=num_states, boundaries=tuple(bounds),
                   transition_matrix=P, steady_state=steady_state(P),
                   mean_gains=gains, mean_channel_gain=mean_gain)

    def step(self, current_state_index: int, rng) -> int:
        """Sample the next state index from the current row."""
        row = self._cum_rows[current_state_index]
        u = rng.uniform()
        return int(np.searchsorted(row, u, side="right").clip(0, self.num_states - 1))

    def draw_stationary(self, rng) -> int:
        """Sample a state from the stationary distribution."""
        cum = np.cumsum(self.steady_state)
        return int(np.searchsorted(cum, rng.uniform(), side="right")
                   .clip(0, self.num_states - 1))
