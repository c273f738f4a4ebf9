"""Data-aided second-order phase-locked loop for per-track timing recovery.

During training the written bits are known, so the loop compares the
equalized output against the target-branch desired signal with a
Mueller-Muller timing error detector (symbol rate, one sample per bit) and
integrates the error through proportional and integral paths. The
second-order loop tracks a constant write-frequency offset with zero
steady-state ramp error; the frequency register is clamped to the
trajectory slew bound.
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import SLEW_MAX


@dataclass(frozen=True)
class PllState:
    """Loop state: ``mu`` is the phase estimate (units of T), ``freq`` the
    frequency register (units of T per sample)."""

    mu: float = 0.0
    freq: float = 0.0
    kp: float = 2e-3
    ki: float = 1e-5
    freq_limit: float = SLEW_MAX

    def __post_init__(self):
        if not self.kp > 0:
            raise ValueError("kp must be positive")
        if not 0 <= self.ki < self.kp:
            raise ValueError("need 0 <= ki < kp for loop stability")
        if abs(self.freq) > self.freq_limit:
            raise ValueError("freq register outside the slew bound")


def ted_mm(y_k, y_prev, d_k, d_prev) -> float:
    """Mueller-Muller timing error: e = <y_k, d_prev> - <y_prev, d_k>.

    Data-aided: d values are known-data target-branch outputs. Positive
    error means the observed signal lags the modeled one. Scalars or
    per-output vectors are accepted; per-track loops pass one component.
    """
    y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
    y_prev = np.atleast_1d(np.asarray(y_prev, dtype=float))
    d_k = np.atleast_1d(np.asarray(d_k, dtype=float))
    d_prev = np.atleast_1d(np.asarray(d_prev, dtype=float))
    return float(y_k @ d_prev - y_prev @ d_k)


def pll_step(state: PllState, e: float) -> PllState:
    """One loop update: freq' = clamp(freq + ki e), mu' = mu + freq' + kp e."""
    if not np.isfinite(e):
        raise ValueError("timing error must be finite")
    freq = state.freq + state.ki * e
    freq = min(max(freq, -state.freq_limit), state.freq_limit)
    return replace(state, mu=state.mu + freq + state.kp * e, freq=freq)


def estimate_trajectory(equalized_row, desired_row, init: PllState):
    """Run the loop over one track's aligned (equalized, desired) sequences.

    Returns ``(tau, final_state)`` where ``tau[k]`` is the phase estimate
    after the update at sample k.
    """
    y = np.asarray(equalized_row, dtype=float)
    d = np.asarray(desired_row, dtype=float)
    if y.shape != d.shape or y.ndim != 1:
        raise ValueError("equalized and desired rows must be 1-D and equally long")
    tau = np.empty(y.shape[0])
    st = init
    for k in range(y.shape[0]):
        e = 0.0 if k == 0 else ted_mm(y[k], y[k - 1], d[k], d[k - 1])
        st = pll_step(st, e)
        tau[k] = st.mu
    return tau, st


def fit_line(tau_row, tail_frac: float = 0.5):
    """Least-squares line (slope, intercept) of a trajectory's tail.

    Both parameters matter for test-time extrapolation: the joint design
    may absorb a constant fraction of the training drift as equalizer
    group delay, leaving the locked trajectory offset from the true one by
    a constant that belongs to the trained model.
    """
    tau_row = np.asarray(tau_row, dtype=float)
    n = tau_row.shape[0]
    k0 = int(n * (1.0 - tail_frac))
    k = np.arange(k0, n)
    if k.size < 2:
        raise ValueError("trajectory too short for a slope fit")
    slope, intercept = np.polyfit(k, tau_row[k0:], 1)
    return float(slope), float(intercept)


def fit_slope(tau_row, tail_frac: float = 0.5) -> float:
    """Least-squares slope of a trajectory's tail."""
    return fit_line(tau_row, tail_frac)[0]
