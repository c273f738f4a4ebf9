"""Joint least-squares design of a monic matrix partial-response target and
a linear MIMO FIR equalizer.

Minimizes the mean squared mismatch between the equalized readback and the
target-filtered (fractionally delayed) bits,

    (1/N) sum_k || sum_m F_m r[k-m] - sum_l G_l b[k-D-l] ||^2,

over all equalizer taps F and target taps G subject to the monic constraint
G_0 = I, which excludes the trivial all-zero solution. The constraint is
eliminated by substitution, leaving an ordinary least-squares problem solved
in closed form via the normal equations. The per-track scalar variant
(MISO equalizer, short scalar target) serves the conventional single-track
PRML baseline.
"""

from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedDesignError

COND_LIMIT = 1e10


@dataclass
class MatrixTarget:
    """Monic matrix partial-response target: taps[l] is the n_out x n_tracks
    matrix G_l, l = 0..L-1, with taps[0] = I."""

    taps: np.ndarray

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.ndim != 3 or self.taps.shape[0] < 1:
            raise ValueError("target taps must have shape (L, n_out, n_tracks)")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("target taps must be finite")

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def n_out(self) -> int:
        return self.taps.shape[1]

    @property
    def n_tracks(self) -> int:
        return self.taps.shape[2]

    def is_monic(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.taps[0] - np.eye(self.n_out, self.n_tracks))) <= tol)


@dataclass
class MimoFir:
    """FIR MIMO equalizer: taps[m] maps the reader vector r[k-m] into the
    output, m = 0..W-1; ``delay`` is the decision delay D of the design."""

    taps: np.ndarray
    delay: int

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.ndim != 3 or self.taps.shape[0] < 1:
            raise ValueError("equalizer taps must have shape (W, n_out, n_readers)")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("equalizer taps must be finite")

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def n_out(self) -> int:
        return self.taps.shape[1]

    @property
    def n_readers(self) -> int:
        return self.taps.shape[2]


def default_decision_delay(eq_len: int) -> int:
    """Half the equalizer span; the channel pulse is centered (zero group
    delay), so the equalizer window is the only delay source."""
    return (eq_len - 1) // 2


def equalize_linear(eq: MimoFir, readback: np.ndarray) -> np.ndarray:
    """y[k] = sum_m F_m r[k-m], zero-padded edges, output n_out x n_samples."""
    r = np.atleast_2d(np.asarray(readback, dtype=float))
    if r.shape[0] != eq.n_readers:
        raise ValueError(f"readback has {r.shape[0]} rows, equalizer expects {eq.n_readers}")
    n = r.shape[1]
    out = np.zeros((eq.n_out, n))
    for o in range(eq.n_out):
        for i in range(eq.n_readers):
            out[o] += np.convolve(r[i], eq.taps[:, o, i], mode="full")[:n]
    return out


def target_branch(target: MatrixTarget, delayed_bits: np.ndarray, delay: int) -> np.ndarray:
    """Desired equalizer output: t[k] = sum_l G_l b[k - delay - l]."""
    b = np.atleast_2d(np.asarray(delayed_bits, dtype=float))
    if b.shape[0] != target.n_tracks:
        raise ValueError(f"bits have {b.shape[0]} rows, target expects {target.n_tracks}")
    n = b.shape[1]
    out = np.zeros((target.n_out, n))
    for o in range(target.n_out):
        for j in range(target.n_tracks):
            out[o] += np.convolve(b[j], target.taps[:, o, j], mode="full")[:n]
    if delay > 0:
        out = np.concatenate([np.zeros((target.n_out, delay)), out[:, : n - delay]], axis=1)
    elif delay < 0:
        raise ValueError("delay must be >= 0")
    return out


def _design_core(readback, delayed_bits, target_len, eq_len, delay, sample_range):
    r = np.atleast_2d(np.asarray(readback, dtype=float))
    b = np.atleast_2d(np.asarray(delayed_bits, dtype=float))
    n_readers, n = r.shape
    n_tracks, nb = b.shape
    if nb != n:
        raise ValueError(f"readback length {n} != bits length {nb}")
    if target_len < 1 or eq_len < 1:
        raise ValueError("target and equalizer lengths must be >= 1")
    if delay < 0:
        raise ValueError("decision delay must be >= 0")

    dim = eq_len * n_readers + (target_len - 1) * n_tracks
    if sample_range is None:
        k0 = max(eq_len - 1, delay + target_len - 1)
        k1 = n
    else:
        k0, k1 = sample_range
        if k0 < max(eq_len - 1, delay + target_len - 1) or k1 > n:
            raise ValueError("sample_range does not leave room for the filter supports")
    n_valid = k1 - k0
    if n_valid < 10 * (eq_len * n_readers + target_len * n_tracks):
        raise ValueError(
            f"need at least {10 * (eq_len * n_readers + target_len * n_tracks)} design samples, "
            f"got {n_valid}"
        )

    k = np.arange(k0, k1)
    blocks = [r[:, k - m] for m in range(eq_len)]
    blocks += [-b[:, k - delay - l] for l in range(1, target_len)]
    z = np.concatenate(blocks, axis=0).T            # (n_valid, dim)
    y = b[:, k - delay].T                           # (n_valid, n_out)

    gram = z.T @ z
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > COND_LIMIT:
        raise IllConditionedDesignError(
            "normal equations are singular or nearly so (degenerate design input)"
        )
    theta = np.linalg.solve(gram, z.T @ y)          # (dim, n_out)

    resid = z @ theta - y
    mse = float(np.mean(np.sum(resid**2, axis=1)))

    n_out = n_tracks
    f_taps = theta[: eq_len * n_readers].T.reshape(n_out, eq_len, n_readers).transpose(1, 0, 2)
    g_taps = np.zeros((target_len, n_out, n_tracks))
    g_taps[0] = np.eye(n_out, n_tracks)
    if target_len > 1:
        g_free = theta[eq_len * n_readers :].T.reshape(n_out, target_len - 1, n_tracks)
        g_taps[1:] = g_free.transpose(1, 0, 2)
    return MimoFir(taps=f_taps, delay=delay), MatrixTarget(taps=g_taps), mse


def design_gpr(
    readback: np.ndarray,
    delayed_bits: np.ndarray,
    target_len: int = 3,
    eq_len: int = 15,
    delay: int | None = None,
    sample_range: tuple | None = None,
):
    """Joint monic target / MIMO equalizer least-squares design.

    ``delayed_bits`` must already carry the (estimated) per-track fractional
    delays so the design matches the unsynchronized readback. Returns
    ``(MimoFir, MatrixTarget, achieved_mse)``.
    """
    if delay is None:
        delay = default_decision_delay(eq_len)
    return _design_core(readback, delayed_bits, target_len, eq_len, delay, sample_range)


def design_miso_gpr(
    readback: np.ndarray,
    bits_row: np.ndarray,
    target_len: int = 2,
    eq_len: int = 15,
    delay: int | None = None,
):
    """Single-track variant: readers (one row or several) to one output with
    a short monic scalar target. Returns ``(MimoFir, scalar_taps, mse)``
    where ``scalar_taps`` is the length-L vector [1, g_1, ...]."""
    bits_row = np.asarray(bits_row, dtype=float)
    if bits_row.ndim != 1:
        raise ValueError("bits_row must be one-dimensional")
    if delay is None:
        delay = default_decision_delay(eq_len)
    eq, target, mse = _design_core(
        readback, bits_row[None, :], target_len, eq_len, delay, None
    )
    return eq, target.taps[:, 0, 0].copy(), mse


def design_objective(
    eq: MimoFir, target: MatrixTarget, readback: np.ndarray, delayed_bits: np.ndarray
) -> float:
    """Direct evaluation of the design objective for a given (F, G) pair;
    independent of the normal-equations solver (used by optimality checks)."""
    y = equalize_linear(eq, readback)
    t = target_branch(target, delayed_bits, eq.delay)
    n = y.shape[1]
    k0 = max(eq.n_taps - 1, eq.delay + target.n_taps - 1)
    resid = y[:, k0:n] - t[:, k0:n]
    return float(np.mean(np.sum(resid**2, axis=0)))


# --- flat text serialization -------------------------------------------------

def save_mimo_fir(eq: MimoFir, path):
    with open(path, "w") as f:
        f.write(f"mimo_fir {eq.n_taps} {eq.n_out} {eq.n_readers} {eq.delay}\n")
        for v in eq.taps.ravel():
            f.write(f"{v!r}\n")


def load_mimo_fir(path) -> MimoFir:
    with open(path) as f:
        head = f.readline().split()
        if head[0] != "mimo_fir":
            raise ValueError(f"not a mimo_fir file: {path}")
        w, n_out, n_readers, delay = map(int, head[1:])
        vals = np.array([float(f.readline()) for _ in range(w * n_out * n_readers)])
    return MimoFir(taps=vals.reshape(w, n_out, n_readers), delay=delay)


def save_target(target: MatrixTarget, path):
    with open(path, "w") as f:
        f.write(f"matrix_target {target.n_taps} {target.n_out} {target.n_tracks}\n")
        for v in target.taps.ravel():
            f.write(f"{v!r}\n")


def load_target(path) -> MatrixTarget:
    with open(path) as f:
        head = f.readline().split()
        if head[0] != "matrix_target":
            raise ValueError(f"not a matrix_target file: {path}")
        l, n_out, n_tracks = map(int, head[1:])
        vals = np.array([float(f.readline()) for _ in range(l * n_out * n_tracks)])
    return MatrixTarget(taps=vals.reshape(l, n_out, n_tracks))
