"""MIMO neural-network equalizer trained jointly with the target taps.

A fully connected network with three tanh hidden layers and an affine
output layer maps a sliding window of reader samples to the equalized
outputs, one per detected track. Two loss functions are supported:

* squared error against the target branch (the target applied to the
  fractionally delayed known bits), and
* cross-entropy between the known bits and the soft-output detector's
  posteriors, differentiated through the forward-backward recursion.

Training is plain SGD with global gradient-norm clipping, interleaved per
batch with a second-order PLL that re-estimates each asynchronous track's
timing trajectory from the current equalized output; the delayed bits of
the target branch are rebuilt from the running estimate so the equalizer,
target and timing loop co-adapt. Deterministic for a fixed seed.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import detector, pll
from .errors import TrainingDivergedError
from .interp import delay_sequence
from .targets import MatrixTarget, target_branch

XENT_LOG_FLOOR = -30.0
XENT_BLOCK_GUARD = 10


@dataclass
class MlpEqualizer:
    """Layer weights/biases plus the input window half-length.

    ``weights[i]`` has shape (fan_in, fan_out); exactly three tanh hidden
    layers and a linear output layer. The input dimension must equal
    n_readers * (2 * halfwin + 1).
    """

    weights: list
    biases: list
    halfwin: int

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.biases) != 4:
            raise ValueError("expected exactly three hidden layers plus the output layer")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias length does not match layer width")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_out(self):
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpEqualizer":
        return MlpEqualizer(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            halfwin=self.halfwin,
        )


@dataclass
class TrainConfig:
    loss_mode: str = "xent"            # "mse_target" or "xent_detector" / short aliases
    learning_rate: float = 0.01
    batch_len: int = 512
    epochs: int = 40
    seed: int = 0
    target_trainable: bool = True
    grad_clip: float = 5.0
    lr_decay: float = 0.5              # applied every lr_decay_every epochs
    lr_decay_every: int = 20
    detector_interp_order: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_len < 1:
            raise ValueError("batch_len must be >= 1")
        mode = self.loss_mode.lower()
        aliases = {"mse": "mse_target", "mse_target": "mse_target",
                   "xent": "xent_detector", "xent_detector": "xent_detector"}
        if mode not in aliases:
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        self.loss_mode = aliases[mode]


def init_mlp(layer_dims, halfwin: int, seed) -> MlpEqualizer:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    dims = list(layer_dims)
    if len(dims) != 5:
        raise ValueError("layer_dims must be [in, h1, h2, h3, out]")
    if any(d < 1 for d in dims):
        raise ValueError("all layer widths must be >= 1")
    if dims[0] % (2 * halfwin + 1) != 0:
        raise ValueError("input width must be n_readers * (2*halfwin + 1)")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fi, fo in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-a, a, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return MlpEqualizer(weights=weights, biases=biases, halfwin=halfwin)


def _windows(readback: np.ndarray, halfwin: int, k0: int, k1: int) -> np.ndarray:
    """Input matrix for samples k0..k1-1: reader-major concatenation of
    r_i[k-halfwin .. k+halfwin], zero-padded at the frame edges."""
    r = np.atleast_2d(readback)
    n = r.shape[1]
    padded = np.pad(r, ((0, 0), (halfwin, halfwin)))
    view = np.lib.stride_tricks.sliding_window_view(padded, 2 * halfwin + 1, axis=1)
    return view[:, k0:k1, :].transpose(1, 0, 2).reshape(k1 - k0, -1)


def _forward_cached(mlp: MlpEqualizer, x: np.ndarray):
    acts = [x]
    a = x
    for w, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        a = np.tanh(a @ w + b)
        acts.append(a)
    y = a @ mlp.weights[-1] + mlp.biases[-1]
    return y, acts


def forward(mlp: MlpEqualizer, readback: np.ndarray) -> np.ndarray:
    """Equalize a frame; output (n_out, n_samples)."""
    r = np.atleast_2d(np.asarray(readback, dtype=float))
    if r.shape[0] * (2 * mlp.halfwin + 1) != mlp.weights[0].shape[0]:
        raise ValueError(
            f"readback with {r.shape[0]} readers does not match the input width "
            f"{mlp.weights[0].shape[0]} at halfwin {mlp.halfwin}"
        )
    x = _windows(r, mlp.halfwin, 0, r.shape[1])
    y, _ = _forward_cached(mlp, x)
    return y.T


def _backprop(mlp: MlpEqualizer, acts, d_y: np.ndarray):
    """Gradients of sum(d_y * y) w.r.t. all weights/biases; d_y is (N, out)."""
    d_w = [None] * 4
    d_b = [None] * 4
    delta = d_y
    for layer in range(3, -1, -1):
        d_w[layer] = acts[layer].T @ delta
        d_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ mlp.weights[layer].T) * (1.0 - acts[layer] ** 2)
    return d_w, d_b


@dataclass
class Gradients:
    weights: list
    biases: list
    target: np.ndarray

    def norm(self) -> float:
        total = sum(float(np.sum(g**2)) for g in self.weights)
        total += sum(float(np.sum(g**2)) for g in self.biases)
        total += float(np.sum(self.target**2))
        return float(np.sqrt(total))

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            weights=[g * factor for g in self.weights],
            biases=[g * factor for g in self.biases],
            target=self.target * factor,
        )


def delayed_bits(bits: np.ndarray, traj: np.ndarray, order: int = 3) -> np.ndarray:
    bits = np.atleast_2d(np.asarray(bits, dtype=float))
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    return np.array([delay_sequence(bits[j], traj[j], order=order) for j in range(bits.shape[0])])


def _mse_grads(mlp, target, readback, bview, delay, k0, k1):
    """Squared-error loss and gradients on samples [k0, k1)."""
    x = _windows(readback, mlp.halfwin, k0, k1)
    y, acts = _forward_cached(mlp, x)                      # (B, n_out)
    t = target_branch(target, bview, delay)[:, k0:k1].T
    resid = y - t
    b_len = k1 - k0
    loss = float(np.sum(resid**2) / b_len)
    d_w, d_b = _backprop(mlp, acts, (2.0 / b_len) * resid)
    d_g = np.zeros_like(target.taps)
    k = np.arange(k0, k1)
    for l in range(1, target.n_taps):
        idx = k - delay - l
        ok = (idx >= 0) & (idx < bview.shape[1])
        # d/dG_l[o,j] of ||resid||^2: -2/B sum_k resid[k,o] b[j, k-D-l]
        d_g[l] = (-2.0 / b_len) * resid[ok].T @ bview[:, idx[ok]].T
    return loss, Gradients(weights=d_w, biases=d_b, target=d_g)


def loss_mse(mlp: MlpEqualizer, target: MatrixTarget, readback, bits, traj,
             delay: int):
    """Mean squared upper-vs-lower-branch error over the whole frame and its
    gradients (MLP parameters and non-monic target taps)."""
    readback = np.atleast_2d(np.asarray(readback, dtype=float))
    bview = delayed_bits(bits, traj)
    return _mse_grads(mlp, target, readback, bview, delay, 0, readback.shape[1])


def _xent_block(mlp, target, readback, bits, traj, noise_var, delay, k0, k1,
                interp_order, guard=XENT_BLOCK_GUARD):
    """Unnormalized cross-entropy and gradients for detector steps [k0, k1).

    The detector consumes the equalized samples advanced by the decision
    delay, so its label model carries no delay term; the block trajectory
    is rebased by its starting integer offset and per-bit posterior
    gradients are pushed back through the forward-backward recursion, then
    through the network. Returns ``(loss_sum, bit_count, Gradients)``.
    """
    n = readback.shape[1]
    y_lo = k0 + delay
    y_hi = min(k1 + delay, n)
    k1 = y_hi - delay
    if k1 - k0 < 4:
        return 0.0, 0, None
    x = _windows(readback, mlp.halfwin, y_lo, y_hi)
    y, acts = _forward_cached(mlp, x)                      # (B, n_out)

    base = np.floor(traj[:, k0]).astype(int)
    local_traj = traj[:, k0:k1] - base[:, None]
    trellis = detector.build_trellis(target, local_traj, interp_order)
    soft = detector.forward_backward(trellis, y.T, noise_var)

    # local bit i of track j is global bit i + k0 - base[j]
    seeds = np.zeros((bits.shape[0], k1 - k0))
    loss_sum = 0.0
    count = 0
    for j in range(bits.shape[0]):
        ii = np.flatnonzero(trellis.decided_mask[j])
        gi = ii + k0 - base[j]
        ok = (gi >= guard) & (gi < n - guard)
        ii, gi = ii[ok], gi[ok]
        if ii.size == 0:
            continue
        want_pos = bits[j, gi] > 0
        pj = soft.posteriors[j, ii]
        terms = np.where(want_pos, np.log(pj), np.log(1.0 - pj))
        loss_sum -= float(np.maximum(terms, XENT_LOG_FLOOR).sum())
        count += ii.size
        # clamped terms and clamped posteriors carry no gradient
        active = (terms > XENT_LOG_FLOOR) \
            & (pj > detector.POSTERIOR_CLAMP) & (pj < 1.0 - detector.POSTERIOR_CLAMP)
        seeds[j, ii] = np.where(want_pos, -1.0 / pj, 1.0 / (1.0 - pj)) * active
    if count == 0:
        return 0.0, 0, None

    _, d_yb, d_g = detector.forward_backward_adjoint(trellis, y.T, noise_var, seeds)
    d_w, d_b = _backprop(mlp, acts, d_yb.T)
    d_g = d_g.copy()
    d_g[0] = 0.0
    return loss_sum, count, Gradients(weights=d_w, biases=d_b, target=d_g)


def loss_xent(mlp: MlpEqualizer, target: MatrixTarget, readback, bits, traj,
              noise_var_est: float, delay: int, block_len: int = 512,
              interp_order: int = 1):
    """Cross-entropy between the known bits and the detector posteriors,
    averaged per counted bit, with gradients through the full recursion."""
    if noise_var_est <= 0:
        raise ValueError("noise_var_est must be positive")
    readback = np.atleast_2d(np.asarray(readback, dtype=float))
    bits = np.atleast_2d(np.asarray(bits, dtype=float))
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    n_det = readback.shape[1] - delay
    starts = [0] if n_det <= block_len else list(range(0, n_det - block_len, block_len))
    if n_det > block_len and starts[-1] != n_det - block_len:
        starts.append(n_det - block_len)

    loss_sum = 0.0
    count = 0
    total = None
    for k0 in starts:
        ls, c, grads = _xent_block(
            mlp, target, readback, bits, traj, noise_var_est, delay,
            k0, min(k0 + block_len, n_det), interp_order,
        )
        if c == 0:
            continue
        loss_sum += ls
        count += c
        total = grads if total is None else Gradients(
            weights=[a + b for a, b in zip(total.weights, grads.weights)],
            biases=[a + b for a, b in zip(total.biases, grads.biases)],
            target=total.target + grads.target,
        )
    if count == 0:
        raise ValueError("no bits available for the cross-entropy loss")
    return loss_sum / count, total.scaled(1.0 / count)


def _apply_update(mlp, target, grads: Gradients, lr: float, grad_clip: float,
                  target_trainable: bool):
    if not target_trainable:
        grads = Gradients(weights=grads.weights, biases=grads.biases,
                          target=np.zeros_like(grads.target))
    gnorm = grads.norm()
    if grad_clip > 0 and gnorm > grad_clip:
        grads = grads.scaled(grad_clip / gnorm)
    for w, gw in zip(mlp.weights, grads.weights):
        w -= lr * gw
    for b, gb in zip(mlp.biases, grads.biases):
        b -= lr * gb
    taps = target.taps.copy()
    taps[1:] -= lr * grads.target[1:]
    return MatrixTarget(taps)


def train(mlp: MlpEqualizer, target: MatrixTarget, readback, bits,
          pll_states: dict | None, cfg: TrainConfig, delay: int):
    """Joint SGD training of the equalizer and the free target taps.

    ``pll_states`` maps track index -> initial PllState for tracks flagged
    asynchronous; pass None (or {}) for fully synchronous frames. Each
    epoch walks the frame batch by batch: the PLL first re-estimates the
    trajectory from the current equalized output, the delayed bits are
    rebuilt, then one clipped gradient step is taken. Returns
    ``(mlp, target, loss_history, trajectory_estimate, final_pll_states)``.
    """
    readback = np.atleast_2d(np.asarray(readback, dtype=float))
    bits = np.atleast_2d(np.asarray(bits, dtype=float))
    n_tracks, n = bits.shape
    if readback.shape[1] != n:
        raise ValueError("readback and bits lengths differ")
    mlp = mlp.copy()
    target = MatrixTarget(target.taps.copy())
    pll_states = dict(pll_states or {})

    tau_hat = np.zeros((n_tracks, n))
    bview = delayed_bits(bits, tau_hat)
    loss_history = []
    lr = cfg.learning_rate
    noise_var = None

    for epoch in range(cfg.epochs):
        if epoch > 0 and cfg.lr_decay_every > 0 and epoch % cfg.lr_decay_every == 0:
            lr *= cfg.lr_decay
        # per-epoch frame walk restarts the loop phase at the frame origin
        states = {j: replace(st, mu=0.0) for j, st in pll_states.items()}

        if cfg.loss_mode == "xent_detector" and noise_var is None:
            x = _windows(readback, mlp.halfwin, 0, n)
            y0, _ = _forward_cached(mlp, x)
            resid = y0 - target_branch(target, bview, delay).T
            noise_var = max(float(np.mean(resid**2)), 1e-6)

        epoch_loss = 0.0
        epoch_count = 0
        for k0 in range(0, n, cfg.batch_len):
            k1 = min(k0 + cfg.batch_len, n)
            if states:
                w0 = max(0, k0 - 1)
                x = _windows(readback, mlp.halfwin, w0, k1)
                yb, _ = _forward_cached(mlp, x)
                yb = yb.T                                   # (n_out, w)
                # coast the loop estimate over the batch, rebuild the
                # desired branch from the projection, then track
                for j, st in states.items():
                    steps = np.arange(1, k1 - k0 + 1)
                    tau_hat[j, k0:k1] = st.mu + st.freq * steps
                    bview[j] = delay_sequence(bits[j], tau_hat[j])
                d = target_branch(target, bview, delay)[:, w0:k1]
                for j, st in states.items():
                    for k in range(k0, k1):
                        if k == 0:
                            e = 0.0
                        else:
                            c = k - w0
                            e = pll.ted_mm(yb[j, c], yb[j, c - 1], d[j, c], d[j, c - 1])
                        st = pll.pll_step(st, e)
                        tau_hat[j, k] = st.mu
                    states[j] = st
                    bview[j] = delay_sequence(bits[j], tau_hat[j])

            if cfg.loss_mode == "mse_target":
                loss, grads = _mse_grads(mlp, target, readback, bview, delay, k0, k1)
                weight = k1 - k0
            else:
                lsum, cnt, grads = _xent_block(
                    mlp, target, readback, bits, tau_hat, noise_var, delay,
                    k0, k1, cfg.detector_interp_order,
                )
                if cnt == 0:
                    continue
                grads = grads.scaled(1.0 / cnt)
                loss = lsum / cnt
                weight = cnt
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            target = _apply_update(mlp, target, grads, lr, cfg.grad_clip,
                                   cfg.target_trainable)
            epoch_loss += loss * weight
            epoch_count += weight

        loss_history.append(epoch_loss / max(epoch_count, 1))
        if cfg.loss_mode == "xent_detector":
            x = _windows(readback, mlp.halfwin, 0, n)
            y0, _ = _forward_cached(mlp, x)
            resid = y0 - target_branch(target, bview, delay).T
            noise_var = max(float(np.mean(resid**2)), 1e-6)
        if states:
            pll_states = states

    return mlp, target, np.asarray(loss_history), tau_hat, pll_states


# --- serialization -----------------------------------------------------------

def save_mlp(mlp: MlpEqualizer, path):
    with open(path, "w") as f:
        dims = " ".join(str(d) for d in mlp.layer_dims)
        f.write(f"mlp {dims} halfwin {mlp.halfwin}\n")
        for w, b in zip(mlp.weights, mlp.biases):
            for v in w.ravel():
                f.write(f"{v!r}\n")
            for v in b:
                f.write(f"{v!r}\n")


def load_mlp(path) -> MlpEqualizer:
    with open(path) as f:
        head = f.readline().split()
        if head[0] != "mlp" or head[-2] != "halfwin":
            raise ValueError(f"not an mlp file: {path}")
        dims = [int(v) for v in head[1:-2]]
        halfwin = int(head[-1])
        weights, biases = [], []
        for fi, fo in zip(dims[:-1], dims[1:]):
            w = np.array([float(f.readline()) for _ in range(fi * fo)]).reshape(fi, fo)
            b = np.array([float(f.readline()) for _ in range(fo)])
            weights.append(w)
            biases.append(b)
    return MlpEqualizer(weights=weights, biases=biases, halfwin=halfwin)
