"""Parametric multitrack readback channel.

Synthesizes unsynchronized multi-reader waveforms from written bits:
Gaussian down-track pulses with Gaussian cross-track decay give intertrack
interference, written transitions carry data-dependent position jitter
(first-order, via the pulse derivative), AWGN is added per reader, and an
optional quadratic asymmetry models readback nonlinearity. One ADC sample
per bit period T; waveforms are real matrices of shape
``n_readers x n_samples`` with ``n_samples == n_bits``.

Writer timing offsets enter as a per-track trajectory ``tau[j, k]`` in
units of T: bit ``i`` of track ``j`` is written around sample
``i + tau[j, i]``, realized by fractionally delaying the bit sequence
(order-3 Lagrange) before pulse shaping.
"""

from dataclasses import dataclass, field

import numpy as np

from .interp import delay_sequence

# maximum per-sample change of a timing trajectory, units of T
SLEW_MAX = 1e-3


def generate_bits(n_tracks: int, n_bits: int, seed) -> np.ndarray:
    """I.i.d. equiprobable bipolar bits, shape (n_tracks, n_bits)."""
    if n_tracks < 1 or n_bits < 1:
        raise ValueError(f"need n_tracks >= 1 and n_bits >= 1, got {n_tracks}, {n_bits}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n_tracks, n_bits)).astype(float) * 2.0 - 1.0


def check_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=float)
    if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
        raise ValueError("bits must be a non-empty n_tracks x n_bits matrix")
    if not np.all(np.abs(bits) == 1.0):
        raise ValueError("bits must be bipolar (-1 or +1)")
    return bits


def linear_offset_trajectory(n_tracks: int, n_bits: int, slopes) -> np.ndarray:
    """Timing trajectory tau[j, k] = slopes[j] * k, shape (n_tracks, n_bits)."""
    slopes = np.asarray(slopes, dtype=float)
    if slopes.shape != (n_tracks,):
        raise ValueError(f"expected {n_tracks} slopes, got shape {slopes.shape}")
    if np.any(np.abs(slopes) > SLEW_MAX):
        raise ValueError(f"|slope| must not exceed slew bound {SLEW_MAX}")
    return slopes[:, None] * np.arange(n_bits)[None, :]


def check_trajectory(traj: np.ndarray, n_tracks: int, n_bits: int) -> np.ndarray:
    traj = np.asarray(traj, dtype=float)
    if traj.shape != (n_tracks, n_bits):
        raise ValueError(f"trajectory shape {traj.shape} != ({n_tracks}, {n_bits})")
    if n_bits > 1 and np.max(np.abs(np.diff(traj, axis=1))) > SLEW_MAX * (1 + 1e-9):
        raise ValueError(f"trajectory slew exceeds {SLEW_MAX} per sample")
    return traj


@dataclass
class ChannelGeometry:
    """Reader/track layout and pulse parameters.

    Cross-track coordinates are in units of track pitch TP, down-track
    widths in units of the sample period T.
    """

    n_readers: int = 2
    n_tracks: int = 2
    reader_positions: tuple = (-0.25, 0.25)
    track_positions: tuple = (-0.5, 0.5)
    w50_cross: float = 0.7
    sigma_p: float = 0.8
    pulse_halflen: int = 6

    def __post_init__(self):
        if self.n_readers < self.n_tracks:
            raise ValueError("need n_readers >= n_tracks")
        if len(self.reader_positions) != self.n_readers:
            raise ValueError("reader_positions length != n_readers")
        if len(self.track_positions) != self.n_tracks:
            raise ValueError("track_positions length != n_tracks")
        if self.sigma_p <= 0:
            raise ValueError("sigma_p must be positive")
        if self.pulse_halflen < 3 * self.sigma_p:
            raise ValueError("pulse_halflen must be at least 3*sigma_p")

    @staticmethod
    def for_reader_spacing(spacing_tp: float, **kwargs) -> "ChannelGeometry":
        """Two readers placed symmetrically about the midpoint of two tracks
        at cross-track positions -0.5 and +0.5 TP."""
        return ChannelGeometry(
            reader_positions=(-spacing_tp / 2.0, spacing_tp / 2.0),
            track_positions=(-0.5, 0.5),
            **kwargs,
        )


@dataclass
class NoiseConfig:
    sigma_awgn: float = 0.0
    sigma_jitter: float = 0.0
    gamma_asym: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_awgn < 0 or self.sigma_jitter < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.gamma_asym <= 0.5:
            raise ValueError("gamma_asym must lie in [0, 0.5]")


@dataclass
class ChannelMatrixFir:
    """Per (reader, track) FIR pulse responses h_ij[n] = amps[i, j] * pulse[n].

    ``pulse`` covers offsets -pulse_halflen..+pulse_halflen; ``pulse_diff``
    is its discrete first difference p[n] - p[n-1] on offsets
    -pulse_halflen..pulse_halflen+1 (used by the transition-jitter model).
    """

    amps: np.ndarray
    pulse: np.ndarray
    pulse_diff: np.ndarray
    pulse_halflen: int
    geometry: ChannelGeometry = field(repr=False, default=None)

    @property
    def n_readers(self) -> int:
        return self.amps.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.amps.shape[1]

    def response(self, reader: int, track: int) -> np.ndarray:
        return self.amps[reader, track] * self.pulse

    @property
    def edge_guard(self) -> int:
        """Samples at each frame edge to exclude from error counts."""
        return self.pulse_halflen + 4


def build_channel(geometry: ChannelGeometry) -> ChannelMatrixFir:
    """Build the FIR channel matrix from the geometry.

    Cross-track gain is half-amplitude at distance w50_cross:
    a_ij = 2**(-(d_ij / w50_cross)**2); the down-track pulse is a unit-peak
    Gaussian exp(-n**2 / (2 sigma_p**2)) truncated at +-pulse_halflen.
    """
    readers = np.asarray(geometry.reader_positions, dtype=float)
    tracks = np.asarray(geometry.track_positions, dtype=float)
    d = np.abs(readers[:, None] - tracks[None, :])
    amps = 2.0 ** (-((d / geometry.w50_cross) ** 2))

    n = np.arange(-geometry.pulse_halflen, geometry.pulse_halflen + 1)
    pulse = np.exp(-(n.astype(float) ** 2) / (2.0 * geometry.sigma_p**2))
    padded = np.concatenate([[0.0], pulse, [0.0]])
    pulse_diff = np.diff(padded)  # offsets -halflen .. halflen+1
    return ChannelMatrixFir(
        amps=amps,
        pulse=pulse,
        pulse_diff=pulse_diff,
        pulse_halflen=geometry.pulse_halflen,
        geometry=geometry,
    )


def convolve_tracks(track_waves: np.ndarray, channel: ChannelMatrixFir) -> np.ndarray:
    """Linear part of the readback: r_i[k] = sum_j a_ij (pulse * wave_j)[k].

    The pulse is centered, so the convolution has zero group delay; output
    length equals the input length (zero-padded edges). ``track_waves`` may
    be any real matrix (it is the delayed bit waveform in normal use).
    """
    track_waves = np.asarray(track_waves, dtype=float)
    if track_waves.ndim != 2 or track_waves.shape[0] != channel.n_tracks:
        raise ValueError(f"track_waves must have {channel.n_tracks} rows")
    shaped = np.array([np.convolve(w, channel.pulse, mode="same") for w in track_waves])
    return channel.amps @ shaped


def _jitter_noise(bits, delayed, traj, channel, sigma_jitter, rng) -> np.ndarray:
    """Data-dependent transition jitter, first-order in the displacement.

    Each written transition of track j at bit index k contributes
    ((delayed[j,k] - delayed[j,k-1]) / 2) * J * a_ij * p'[n - k] to every
    reader i, with one displacement draw J ~ N(0, sigma_jitter^2) per
    (track, transition) shared across readers.
    """
    n_tracks, n = bits.shape
    trains = np.zeros((n_tracks, n))
    for j in range(n_tracks):
        pos = np.flatnonzero(bits[j, 1:] != bits[j, :-1]) + 1
        if pos.size == 0:
            continue
        draws = rng.normal(0.0, sigma_jitter, size=pos.size)
        trains[j, pos] = 0.5 * (delayed[j, pos] - delayed[j, pos - 1]) * draws
    h = channel.pulse_halflen
    # pulse_diff index 0 is offset -h: full convolution slice [h : h+n]
    shaped = np.array([np.convolve(t, channel.pulse_diff, mode="full")[h : h + n] for t in trains])
    return channel.amps @ shaped


def simulate_readback(
    bits: np.ndarray,
    traj: np.ndarray,
    channel: ChannelMatrixFir,
    noise: NoiseConfig,
) -> np.ndarray:
    """Synthesize the reader waveforms for one frame.

    Per reader: ISI/ITI convolution of the fractionally delayed bits, plus
    transition jitter and AWGN, then the quadratic asymmetry
    r <- r + gamma_asym * r**2. Deterministic for a fixed NoiseConfig.seed;
    the jitter and AWGN streams are independent child streams so the AWGN
    realization does not depend on the bit pattern.
    """
    bits = check_bits(bits)
    n_tracks, n_bits = bits.shape
    traj = check_trajectory(traj, n_tracks, n_bits)
    if n_tracks != channel.n_tracks:
        raise ValueError(f"bits have {n_tracks} tracks, channel expects {channel.n_tracks}")

    jitter_ss, awgn_ss = np.random.SeedSequence(noise.seed).spawn(2)

    delayed = np.array([delay_sequence(bits[j], traj[j], order=3) for j in range(n_tracks)])
    r = convolve_tracks(delayed, channel)

    if noise.sigma_jitter > 0:
        r = r + _jitter_noise(
            bits, delayed, traj, channel, noise.sigma_jitter, np.random.default_rng(jitter_ss)
        )
    if noise.sigma_awgn > 0:
        r = r + np.random.default_rng(awgn_ss).normal(0.0, noise.sigma_awgn, size=r.shape)
    if noise.gamma_asym > 0:
        r = r + noise.gamma_asym * r**2
    return r
