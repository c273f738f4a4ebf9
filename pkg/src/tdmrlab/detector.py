"""Joint multitrack sequence detection over a time-varying matrix target.

The cascade of the per-track fractional-delay interpolator with the
time-invariant matrix target acts as a time-varying target: at step k the
expected equalized sample is

    d_k(b) = sum_q Ghat_q(k) . b[nu(k) - q],   q = 0..Q-1,

where, per track, Ghat(k) is the convolution of the target taps with the
interpolation taps at frac(tau[k]), nu_j(k) = k - floor(tau_j[k]) + lead
anchors the newest referenced bit of track j, and references outside the
frame read as zero. Integer trajectory changes advance or stall each
track's bit pointer, so one trellis step may consume zero, one, or two new
bits per track; the joint state keeps the last M consumed bits per track.

Hard decisions come from a joint Viterbi search with squared-error metric;
exact metric ties are broken toward the lexicographically smallest decided
bit sequence (-1 before +1, bits ordered by (bit index, track)), tracked
with per-state packed-integer decision prefixes so a brute-force argmin
over sequences reproduces the decisions bit for bit. Soft outputs come
from a normalized forward-backward recursion over the same trellis with
Gaussian branch metrics; a hand-rolled reverse-mode adjoint propagates
loss gradients from the bit posteriors back to the equalized samples and
the target taps, which is what cross-entropy equalizer training consumes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TrellisTooLargeError
from .interp import kernel_nodes, lagrange_taps
from .targets import MatrixTarget

STATE_LIMIT = 4096
POSTERIOR_CLAMP = 1e-12
# detection runs on bounded blocks so decision-prefix integers stay small
BLOCK_LEN = 512
BLOCK_OVERLAP = 32

# transition tables depend only on (shift pattern, memory, tracks, taps);
# shared across trellis instances
_PATTERN_CACHE: dict = {}


def _interp_taps(mu, order):
    """Interpolation taps in node order; order 0 is the synchronous
    single-tap kernel used by the plain single-track trellis."""
    if order == 0:
        mu = np.asarray(mu, dtype=float)
        return np.ones(mu.shape + (1,))
    return lagrange_taps(mu, order)


def _interp_lead(order):
    if order == 0:
        return 0
    return -int(kernel_nodes(order).min())


class _PatternTables:
    """State-transition tables for one per-track shift pattern.

    A pattern is the tuple of per-track state shifts (0, 1 or 2 new bits).
    Everything indexed by (state s, input u) is time-invariant given the
    pattern; only the masked cascade taps vary with the step.

    Encodings: per-track state code packs the last M consumed bits with the
    newest bit in the most significant position; the joint state packs
    track codes with track 0 most significant. Input u packs per-track
    groups (track 0 most significant); within a group, bit t (from the
    LSB) is the bit at slot t, slot 0 being the newest consumed bit.
    """

    def __init__(self, pattern, memory, n_tracks, q_len):
        self.pattern = pattern
        m = memory
        t_cnt = n_tracks
        s_cnt = 1 << (m * t_cnt)
        u_bits = sum(pattern)
        u_cnt = 1 << u_bits
        self.n_states = s_cnt
        self.n_inputs = u_cnt
        self.input_bits = u_bits

        s = np.arange(s_cnt)
        u = np.arange(u_cnt)
        track_codes = [(s >> (m * (t_cnt - 1 - j))) & ((1 << m) - 1) for j in range(t_cnt)]
        # u group of track j occupies bits [off_j, off_j + pattern[j])
        offs = []
        acc = 0
        for j in reversed(range(t_cnt)):
            offs.append(acc)
            acc += pattern[j]
        offs = offs[::-1]
        group = [(u >> offs[j]) & ((1 << pattern[j]) - 1) for j in range(t_cnt)]

        # bit values (+-1, 0 for unavailable) at positions q = 0..Q-1
        bits = np.zeros((s_cnt, u_cnt, t_cnt, q_len))
        for j in range(t_cnt):
            d = pattern[j]
            for q in range(q_len):
                if q < d:
                    vals = (((group[j] >> q) & 1) * 2.0 - 1.0)[None, :]
                    bits[:, :, j, q] = np.broadcast_to(vals, (s_cnt, u_cnt))
                elif q - d < m:
                    h = ((track_codes[j] >> (m - 1 - (q - d))) & 1) * 2.0 - 1.0
                    bits[:, :, j, q] = np.broadcast_to(h[:, None], (s_cnt, u_cnt))
                # else: bit dropped from the state (stalled track); reads 0
        self.bits_flat = bits.reshape(s_cnt * u_cnt, t_cnt * q_len)

        # slot_bit[u, j, t]: 0/1 value of track j's slot-t input bit
        self.slot_bit = np.zeros((u_cnt, t_cnt, 2), dtype=np.int64)
        for j in range(t_cnt):
            for t in range(pattern[j]):
                self.slot_bit[:, j, t] = (group[j] >> t) & 1

        # next state: shift each track's new bits in, oldest slot first
        nxt_tracks = []
        for j in range(t_cnt):
            code = np.broadcast_to(track_codes[j][:, None], (s_cnt, u_cnt)).copy()
            for t in reversed(range(pattern[j])):
                b = np.broadcast_to((group[j] >> t) & 1, (s_cnt, u_cnt))
                code = (code >> 1) | (b << (m - 1))
            nxt_tracks.append(code)
        nxt = np.zeros((s_cnt, u_cnt), dtype=np.int64)
        for j in range(t_cnt):
            nxt |= nxt_tracks[j] << (m * (t_cnt - 1 - j))
        self.next_state = nxt

        # predecessors of each next state as flat (s * U + u) indices,
        # scanned in ascending (s, u) order
        order = np.argsort(nxt.ravel(), kind="stable")
        self.pred_flat = order.reshape(s_cnt, u_cnt)
        self.pred_state = self.pred_flat // u_cnt
        self.pred_input = self.pred_flat % u_cnt


@dataclass
class SoftOutput:
    """Per-bit posteriors P(b = +1 | y), clamped into (0, 1); ``decided``
    marks bits the detection run actually consumed."""

    posteriors: np.ndarray
    decided: np.ndarray


class JointTrellis:
    """Time-varying joint trellis over ``n_tracks`` asynchronous tracks.

    Built by :func:`build_trellis`; immutable afterwards and reusable
    across detection calls on frames with the same length and trajectory.
    """

    def __init__(self, target: MatrixTarget, traj: np.ndarray, interp_order: int,
                 state_limit: int = STATE_LIMIT):
        traj = np.atleast_2d(np.asarray(traj, dtype=float))
        if not target.is_monic(tol=0.0):
            raise ValueError("trellis requires a monic target (G_0 = I)")
        if traj.shape[0] != target.n_tracks:
            raise ValueError(
                f"trajectory has {traj.shape[0]} tracks, target expects {target.n_tracks}"
            )
        self.target = target
        self.traj = traj
        self.interp_order = interp_order
        self.n_tracks, self.n_steps = traj.shape
        self.n_out = target.n_out
        self.lead = _interp_lead(interp_order)
        # cascade length: L target taps convolved with (order+1) interp taps
        self.q_len = target.n_taps + interp_order
        self.memory = self.q_len - 1
        self.n_states = 1 << (self.memory * self.n_tracks)
        if self.n_states > state_limit:
            raise TrellisTooLargeError(
                f"{self.n_states} states exceed the limit of {state_limit}"
            )
        self.n_bits = self.n_steps

        m_int = np.floor(traj).astype(np.int64)
        mu = traj - m_int
        k = np.arange(self.n_steps)
        self.nu = k[None, :] - m_int + self.lead          # newest referenced bit
        # state shift per step; at k = 0 consume every in-frame bit up to nu
        shift = np.empty_like(self.nu)
        shift[:, 1:] = np.diff(self.nu, axis=1)
        shift[:, 0] = np.clip(self.nu[:, 0] + 1, 0, 2)
        if np.any(shift < 0) or np.any(shift > 2):
            raise ValueError("trajectory integer part moves too fast for the trellis")
        self.state_shift = shift

        # masked cascade taps: ghat[k, j, q, o], zero where the referenced
        # bit index nu - q falls outside the frame
        taps = _interp_taps(mu, self.interp_order)        # (T, K, P+1)
        ghat = np.zeros((self.n_steps, self.n_tracks, self.q_len, self.n_out))
        g = target.taps                                    # (L, O, T)
        p1 = taps.shape[-1]
        for l in range(target.n_taps):
            for i in range(p1):
                ghat[:, :, l + i, :] += taps[:, :, i].T[:, :, None] * g[l].T[None, :, :]
        ref = self.nu[:, :, None] - np.arange(self.q_len)[None, None, :]   # (T, K, Q)
        valid = (ref >= 0) & (ref < self.n_bits)
        self.ref_valid = valid
        ghat *= valid.transpose(1, 0, 2)[:, :, :, None]
        self.ghat = ghat

        # per-step consumed bits: (track, slot, bit index), ordered by
        # (bit index, track) to match time-major lexicographic enumeration
        consumed = []
        decided = np.zeros((self.n_tracks, self.n_bits), dtype=bool)
        for kk in range(self.n_steps):
            entries = []
            for j in range(self.n_tracks):
                for t in reversed(range(shift[j, kk])):
                    idx = int(self.nu[j, kk]) - t
                    if 0 <= idx < self.n_bits:
                        entries.append((idx, j, t))
                        decided[j, idx] = True
            entries.sort()
            consumed.append(tuple((j, t, idx) for idx, j, t in entries))
        self.consumed = consumed
        self.decided_mask = decided

    def _tables(self, k: int) -> _PatternTables:
        pattern = tuple(int(v) for v in self.state_shift[:, k])
        key = (pattern, self.memory, self.n_tracks, self.q_len)
        tab = _PATTERN_CACHE.get(key)
        if tab is None:
            tab = _PatternTables(pattern, self.memory, self.n_tracks, self.q_len)
            _PATTERN_CACHE[key] = tab
        return tab

    def step_labels(self, k: int, tables: _PatternTables) -> np.ndarray:
        """Expected equalized samples of every (state, input) at step k,
        shape (S*U, n_out)."""
        return tables.bits_flat @ self.ghat[k].reshape(-1, self.n_out)

    def time_varying_taps(self, k: int) -> np.ndarray:
        """Cascade taps Ghat_q(k) as an array (Q, n_out, n_tracks)."""
        return self.ghat[k].transpose(1, 2, 0)


def build_trellis(target: MatrixTarget, traj, interp_order: int = 1,
                  state_limit: int = STATE_LIMIT) -> JointTrellis:
    """Build the joint trellis for a monic target and a timing trajectory."""
    if interp_order not in (1, 3):
        raise ValueError("detector interpolation order must be 1 or 3")
    return JointTrellis(target, traj, interp_order, state_limit)


def _check_frame(trellis: JointTrellis, equalized) -> np.ndarray:
    y = np.atleast_2d(np.asarray(equalized, dtype=float))
    if y.shape != (trellis.n_out, trellis.n_steps):
        raise ValueError(
            f"equalized frame shape {y.shape} != ({trellis.n_out}, {trellis.n_steps})"
        )
    return y


# --- Viterbi -----------------------------------------------------------------

def viterbi_joint(trellis: JointTrellis, equalized) -> np.ndarray:
    """Joint maximum-likelihood sequence decision.

    Returns an (n_tracks, n_bits) matrix of +-1 decisions; bits the run
    never consumed (trailing bits of delayed tracks) are filled with -1 and
    flagged False in ``trellis.decided_mask``.
    """
    y = _check_frame(trellis, equalized)
    s_cnt = trellis.n_states

    metric = np.zeros(s_cnt)
    prefix = [0] * s_cnt
    step_codes = []
    for k in range(trellis.n_steps):
        tab = trellis._tables(k)
        labels = trellis.step_labels(k, tab)
        bm = np.sum((labels - y[:, k][None, :]) ** 2, axis=1)
        cand = (metric[:, None] + bm.reshape(s_cnt, tab.n_inputs)).ravel()
        cm = cand[tab.pred_flat]
        best = np.argmin(cm, axis=1)
        rows = np.arange(s_cnt)
        new_metric = cm[rows, best]

        # appended decision codes per input, in (bit index, track) order
        entries = trellis.consumed[k]
        nb = len(entries)
        appcode = np.zeros(tab.n_inputs, dtype=np.int64)
        for j, t, _ in entries:
            appcode = (appcode << 1) | tab.slot_bit[:, j, t]
        step_codes.append((nb, entries))

        pred_s = tab.pred_state[rows, best]
        pred_u = tab.pred_input[rows, best]
        new_prefix = [
            (prefix[int(ps)] << nb) | int(appcode[int(pu)])
            for ps, pu in zip(pred_s, pred_u)
        ]

        # exact metric ties: keep the smallest appended prefix
        tie_rows = np.flatnonzero(np.sum(cm == new_metric[:, None], axis=1) > 1)
        for r in tie_rows:
            cols = np.flatnonzero(cm[r] == new_metric[r])
            options = [
                (prefix[int(tab.pred_state[r, c])] << nb)
                | int(appcode[int(tab.pred_input[r, c])])
                for c in cols
            ]
            new_prefix[r] = min(options)

        metric = new_metric
        prefix = new_prefix

    winners = np.flatnonzero(metric == metric.min())
    best_prefix = min(prefix[int(s)] for s in winners)

    bits = -np.ones((trellis.n_tracks, trellis.n_bits))
    code = best_prefix
    for nb, entries in reversed(step_codes):
        if nb == 0:
            continue
        chunk = code & ((1 << nb) - 1)
        code >>= nb
        for pos, (j, _, idx) in enumerate(reversed(entries)):
            bits[j, idx] = ((chunk >> pos) & 1) * 2.0 - 1.0
    return bits


def viterbi_single(scalar_taps, equalized_row) -> np.ndarray:
    """Single-track Viterbi for a monic scalar target [1, g_1, ...].

    A length-2 target gives the classic 2-state detector. Same metric and
    tie-break contract as the joint detector.
    """
    scalar_taps = np.asarray(scalar_taps, dtype=float)
    if scalar_taps.ndim != 1 or scalar_taps[0] != 1.0:
        raise ValueError("scalar target must be one-dimensional and monic")
    row = np.asarray(equalized_row, dtype=float)
    if row.ndim != 1:
        raise ValueError("equalized_row must be one-dimensional")
    target = MatrixTarget(taps=scalar_taps.reshape(-1, 1, 1))
    trellis = JointTrellis(target, np.zeros((1, row.size)), interp_order=0)
    return viterbi_joint(trellis, row[None, :])[0]


def detect_frame_viterbi(target: MatrixTarget, traj, equalized, interp_order: int = 1,
                         block_len: int = BLOCK_LEN, overlap: int = BLOCK_OVERLAP):
    """Block-wise joint Viterbi over a long frame.

    Detection runs on ``block_len``-sample blocks whose first and last
    ``overlap`` samples are discarded (except at the frame ends); each
    block's trajectory is rebased by its starting integer offset so block
    decisions line up with global bit indices. Returns ``(bits, decided)``.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    y = np.atleast_2d(np.asarray(equalized, dtype=float))
    n = y.shape[1]
    if traj.shape[1] != n:
        raise ValueError("trajectory and equalized frame lengths differ")
    bits = -np.ones((target.n_tracks, n))
    decided = np.zeros((target.n_tracks, n), dtype=bool)
    if n <= block_len:
        trellis = JointTrellis(target, traj, interp_order)
        out = viterbi_joint(trellis, y)
        return out, trellis.decided_mask.copy()

    stride = block_len - 2 * overlap
    if stride <= 0:
        raise ValueError("block_len must exceed twice the overlap")
    starts = list(range(0, n - block_len, stride))
    if not starts or starts[-1] != n - block_len:
        starts.append(n - block_len)
    for k0 in starts:
        k1 = k0 + block_len
        base = np.floor(traj[:, k0]).astype(int)
        local_traj = traj[:, k0:k1] - base[:, None]
        trellis = JointTrellis(target, local_traj, interp_order)
        out = viterbi_joint(trellis, y[:, k0:k1])
        lo = 0 if k0 == 0 else overlap
        hi = block_len if k1 == n else block_len - overlap
        for j in range(target.n_tracks):
            off = k0 - base[j]
            ii = np.flatnonzero(trellis.decided_mask[j])
            sel = ii[(ii >= lo) & (ii < hi)]
            gi = sel + off
            ok = (gi >= 0) & (gi < n)
            gi, sel = gi[ok], sel[ok]
            fresh = ~decided[j, gi]
            bits[j, gi[fresh]] = out[j, sel[fresh]]
            decided[j, gi[fresh]] = True
    return bits, decided


# --- forward-backward --------------------------------------------------------

class _FbTape:
    __slots__ = ("alpha", "beta", "csum", "dsum", "gamma", "labels", "tabs", "noise_var")


def _fb_forward(trellis: JointTrellis, y, noise_var, keep_tape):
    s_cnt = trellis.n_states
    n = trellis.n_steps
    tabs = [trellis._tables(k) for k in range(n)]
    gammas = [None] * n
    labels_all = [None] * n if keep_tape else None

    alpha = np.empty((n + 1, s_cnt))
    alpha[0] = 1.0 / s_cnt
    csum = np.empty(n)
    for k in range(n):
        tab = tabs[k]
        labels = trellis.step_labels(k, tab)
        e = np.sum((labels - y[:, k][None, :]) ** 2, axis=1)
        g = np.exp(-(e - e.min()) / (2.0 * noise_var)).reshape(s_cnt, tab.n_inputs)
        gammas[k] = g
        if keep_tape:
            labels_all[k] = labels
        flat = (alpha[k][:, None] * g).ravel()
        a_new = flat[tab.pred_flat].sum(axis=1)
        c = a_new.sum()
        csum[k] = c
        alpha[k + 1] = a_new / c

    beta = np.empty((n + 1, s_cnt))
    beta[n] = 1.0
    dsum = np.empty(n)
    for k in range(n - 1, -1, -1):
        tab = tabs[k]
        b_new = (gammas[k] * beta[k + 1][tab.next_state]).sum(axis=1)
        d = b_new.sum()
        dsum[k] = d
        beta[k] = b_new / d

    tape = None
    if keep_tape:
        tape = _FbTape()
        tape.alpha, tape.beta, tape.csum, tape.dsum = alpha, beta, csum, dsum
        tape.gamma, tape.labels, tape.tabs, tape.noise_var = gammas, labels_all, tabs, noise_var
    return alpha, beta, gammas, tabs, tape


def _fb_posteriors(trellis, alpha, beta, gammas, tabs):
    post = np.full((trellis.n_tracks, trellis.n_bits), 0.5)
    xis = []
    for k in range(trellis.n_steps):
        tab = tabs[k]
        xi = alpha[k][:, None] * gammas[k] * beta[k + 1][tab.next_state]
        xi /= xi.sum()
        xis.append(xi)
        if trellis.consumed[k]:
            xi_u = xi.sum(axis=0)
            for j, t, idx in trellis.consumed[k]:
                post[j, idx] = float(xi_u @ tab.slot_bit[:, j, t])
    return post, xis


def forward_backward(trellis: JointTrellis, equalized, noise_var: float) -> SoftOutput:
    """Exact per-bit posteriors under the Gaussian branch metric
    exp(-||y - d||^2 / (2 noise_var)) with equiprobable bits.

    Linear-domain recursions with per-step normalization (and a per-step
    metric offset) keep the computation stable; posteriors are clamped
    into [1e-12, 1 - 1e-12].
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    y = _check_frame(trellis, equalized)
    alpha, beta, gammas, tabs, _ = _fb_forward(trellis, y, noise_var, keep_tape=False)
    post, _ = _fb_posteriors(trellis, alpha, beta, gammas, tabs)
    post = np.clip(post, POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP)
    return SoftOutput(posteriors=post, decided=trellis.decided_mask.copy())


def forward_backward_adjoint(trellis: JointTrellis, equalized, noise_var: float,
                             post_grad: np.ndarray):
    """Reverse-mode pass of :func:`forward_backward`.

    Given dL/dposteriors (same shape as the posterior matrix, zero where a
    bit does not contribute), returns ``(posteriors, dL/d equalized,
    dL/d target_taps)`` with the target gradient shaped like
    ``target.taps`` (including the monic tap, which callers typically
    mask). Gradients are exact for the unclamped posteriors.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    y = _check_frame(trellis, equalized)
    post_grad = np.asarray(post_grad, dtype=float)
    if post_grad.shape != (trellis.n_tracks, trellis.n_bits):
        raise ValueError("post_grad shape must match (n_tracks, n_bits)")

    s_cnt = trellis.n_states
    n = trellis.n_steps
    alpha, beta, gammas, tabs, tape = _fb_forward(trellis, y, noise_var, keep_tape=True)
    post, xis = _fb_posteriors(trellis, alpha, beta, gammas, tabs)

    d_alpha = np.zeros((n + 1, s_cnt))
    d_beta = np.zeros((n + 1, s_cnt))
    d_gamma = [np.zeros_like(g) for g in gammas]

    # seed adjoints through the transition posteriors xi
    for k in range(n):
        if not trellis.consumed[k]:
            continue
        tab = tabs[k]
        d_xi = np.zeros((s_cnt, tab.n_inputs))
        for j, t, idx in trellis.consumed[k]:
            gseed = post_grad[j, idx]
            if gseed != 0.0:
                d_xi += gseed * tab.slot_bit[:, j, t][None, :]
        if not np.any(d_xi):
            continue
        xi = xis[k]
        xibar = alpha[k][:, None] * gammas[k] * beta[k + 1][tab.next_state]
        z = xibar.sum()
        d_xibar = (d_xi - np.sum(d_xi * xi)) / z
        bnext = beta[k + 1][tab.next_state]
        d_alpha[k] += np.sum(d_xibar * gammas[k] * bnext, axis=1)
        d_gamma[k] += d_xibar * alpha[k][:, None] * bnext
        contrib = (d_xibar * alpha[k][:, None] * gammas[k]).ravel()
        np.add.at(d_beta[k + 1], tab.next_state.ravel(), contrib)

    # reverse sweep of the alpha recursion
    for k in range(n - 1, -1, -1):
        da_next = d_alpha[k + 1]
        if not np.any(da_next):
            continue
        tab = tabs[k]
        c = tape.csum[k]
        d_abar = (da_next - np.sum(da_next * alpha[k + 1])) / c
        d_abar_next = d_abar[tab.next_state]
        d_alpha[k] += np.sum(d_abar_next * gammas[k], axis=1)
        d_gamma[k] += d_abar_next * alpha[k][:, None]

    # forward sweep of the beta recursion
    for k in range(n):
        db = d_beta[k]
        if not np.any(db):
            continue
        tab = tabs[k]
        d = tape.dsum[k]
        d_bbar = (db - np.sum(db * beta[k])) / d
        bnext = beta[k + 1][tab.next_state]
        d_gamma[k] += d_bbar[:, None] * bnext
        contrib = (d_bbar[:, None] * gammas[k]).ravel()
        np.add.at(d_beta[k + 1], tab.next_state.ravel(), contrib)

    # chain through the branch metrics into y and the cascade taps
    d_y = np.zeros_like(y)
    d_ghat = np.zeros_like(trellis.ghat)
    for k in range(n):
        dg = d_gamma[k]
        if not np.any(dg):
            continue
        tab = tabs[k]
        labels = tape.labels[k]
        d_e = (dg * gammas[k]).ravel() * (-1.0 / (2.0 * noise_var))
        resid = y[:, k][None, :] - labels
        d_y[:, k] += 2.0 * d_e @ resid
        d_labels = -2.0 * d_e[:, None] * resid
        d_ghat[k] = (tab.bits_flat.T @ d_labels).reshape(
            trellis.n_tracks, trellis.q_len, trellis.n_out
        )

    # masked positions never influenced the labels
    d_ghat *= trellis.ref_valid.transpose(1, 0, 2)[:, :, :, None]
    taps = _interp_taps(
        trellis.traj - np.floor(trellis.traj), trellis.interp_order
    )  # (T, K, P+1)
    g_grad = np.zeros_like(trellis.target.taps)
    p1 = taps.shape[-1]
    for l in range(trellis.target.n_taps):
        for i in range(p1):
            # d_ghat[k, j, l+i, o] * c_j,i(k) accumulates into G_l[o, j]
            g_grad[l] += np.einsum("kjo,jk->oj", d_ghat[:, :, l + i, :], taps[:, :, i])

    post = np.clip(post, POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP)
    return post, d_y, g_grad
