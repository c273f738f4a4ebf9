"""Experiment orchestration: configured channels, system training, seeded
Monte Carlo BER sweeps over reader spacing, and machine-readable results.

Three read channels are compared:

* ``gprml_nn``      - neural-network MIMO equalizer + joint Viterbi over the
                      time-varying matrix target;
* ``gprml_linear``  - closed-form linear MIMO equalizer/target design + the
                      same joint detector;
* ``prml_independent`` - per-track MISO equalizers with short scalar
                      targets and independent 2-state Viterbi detectors,
                      the offset track re-synchronized from the PLL's
                      slope estimate before detection.

Every sweep point derives its RNG streams from (master seed, spacing
index, role), so records are reproducible and independent of worker-pool
scheduling; train and test streams are disjoint by construction.
"""

import configparser
import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import nn, pll
from .channel import (
    ChannelGeometry,
    NoiseConfig,
    build_channel,
    generate_bits,
    linear_offset_trajectory,
    simulate_readback,
)
from .detector import detect_frame_viterbi
from .errors import TrainingDivergedError
from .interp import delay_sequence
from .pll import PllState, fit_line
from .targets import (
    MatrixTarget,
    design_gpr,
    design_miso_gpr,
    equalize_linear,
    load_mimo_fir,
    load_target,
    save_mimo_fir,
    save_target,
    target_branch,
)

SYSTEMS = ("gprml_nn", "gprml_linear", "prml_independent")

BER_HEADER = "system,spacing_tp,sigma_awgn,sigma_jitter,slope,track,ber,bits,flag"


@dataclass
class ExperimentConfig:
    systems: tuple = SYSTEMS
    spacings_tp: tuple = (0.3, 0.5, 0.7)
    train_bits: int = 20000
    test_bits: int = 100000
    master_seed: int = 7
    test_seed: int | None = None
    workers: int = 1
    output_dir: str = "results"

    # channel
    n_tracks: int = 2
    n_readers: int = 2
    w50_cross: float = 0.7
    sigma_p: float = 0.8
    pulse_halflen: int = 6
    sigma_awgn: float = 0.14
    sigma_jitter: float = 0.08
    gamma_asym: float = 0.1
    offset_slope: float = 2e-4   # applied to the last track; others stay synchronous

    # linear / joint design
    eq_len: int = 15
    target_len: int = 3
    prml_target_len: int = 2
    delay_sweep: int = 2
    design_iterations: int = 4

    # neural-network training
    hidden: tuple = (24, 16, 8)
    halfwin: int = 7
    loss_mode: str = "xent"
    learning_rate: float = 0.02
    batch_len: int = 512
    epochs: int = 36
    grad_clip: float = 5.0

    # timing loop
    pll_kp: float = 2e-3
    pll_ki: float = 1e-5

    def __post_init__(self):
        for s in self.systems:
            if s not in SYSTEMS:
                raise ValueError(f"unknown system {s!r}")
        if self.test_bits < 10**4:
            raise ValueError("test_bits must be at least 10^4")

    def geometry(self, spacing_tp: float) -> ChannelGeometry:
        return ChannelGeometry.for_reader_spacing(
            spacing_tp,
            n_readers=self.n_readers,
            n_tracks=self.n_tracks,
            w50_cross=self.w50_cross,
            sigma_p=self.sigma_p,
            pulse_halflen=self.pulse_halflen,
        )

    def slopes(self) -> np.ndarray:
        s = np.zeros(self.n_tracks)
        s[-1] = self.offset_slope
        return s

    def async_tracks(self) -> list:
        return [j for j, s in enumerate(self.slopes()) if s != 0.0]


@dataclass
class BerRecord:
    system: str
    spacing_tp: float
    sigma_awgn: float
    sigma_jitter: float
    slope: float
    track_ber: tuple
    avg_ber: float
    bits_counted: int
    train_loss_final: float
    wall_time_s: float
    flag: str = "ok"

    def key_fields(self):
        """Everything that must reproduce exactly across identical runs."""
        return (self.system, self.spacing_tp, self.sigma_awgn, self.sigma_jitter,
                self.slope, self.track_ber, self.avg_ber, self.bits_counted, self.flag)


# --- seeding -----------------------------------------------------------------

def derive_seed(*parts) -> int:
    """Stable integer seed from a tuple of integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _frame_seeds(cfg: ExperimentConfig, spacing_idx: int, test: bool):
    master = cfg.master_seed if not test else (
        cfg.test_seed if cfg.test_seed is not None else cfg.master_seed
    )
    role = 2 if test else 0
    return derive_seed(master, spacing_idx, role), derive_seed(master, spacing_idx, role + 1)


def make_frame(cfg: ExperimentConfig, spacing_tp: float, spacing_idx: int, test: bool):
    """Bits, trajectory and readback for one train or test frame."""
    n_bits = cfg.test_bits if test else cfg.train_bits
    bits_seed, noise_seed = _frame_seeds(cfg, spacing_idx, test)
    bits = generate_bits(cfg.n_tracks, n_bits, seed=bits_seed)
    traj = linear_offset_trajectory(cfg.n_tracks, n_bits, cfg.slopes())
    channel = build_channel(cfg.geometry(spacing_tp))
    noise = NoiseConfig(
        sigma_awgn=cfg.sigma_awgn,
        sigma_jitter=cfg.sigma_jitter,
        gamma_asym=cfg.gamma_asym,
        seed=noise_seed,
    )
    readback = simulate_readback(bits, traj, channel, noise)
    return bits, traj, readback, channel


# --- training ----------------------------------------------------------------

def pll_batched_pass(rows, bits, apply_target, delay, tau_hat, states,
                     batch_len: int = 256):
    """Closed-loop PLL walk over a frame with a fixed equalized output.

    Before each batch the loop coasts its current phase/frequency estimate
    across the batch, the delayed bits and the desired signal are rebuilt
    from that projection, and the TED then tracks the residual error. This
    keeps the loop error inside the TED's capture range while the true
    trajectory drifts by many samples over the frame.
    ``apply_target(bview) -> desired`` maps delayed bits to the
    target-branch outputs; ``rows`` holds the per-track equalized outputs.
    Updates ``tau_hat`` in place and returns the final loop states.
    """
    n = bits.shape[1]
    bview = nn.delayed_bits(bits, tau_hat)
    states = {j: replace(st, mu=0.0) for j, st in states.items()}
    for k0 in range(0, n, batch_len):
        k1 = min(k0 + batch_len, n)
        for j, st in states.items():
            steps = np.arange(1, k1 - k0 + 1)
            tau_hat[j, k0:k1] = st.mu + st.freq * steps
            bview[j] = delay_sequence(bits[j], tau_hat[j])
        d = apply_target(bview)
        for j, st in states.items():
            for k in range(k0, k1):
                e = 0.0 if k == 0 else pll.ted_mm(rows[j][k], rows[j][k - 1],
                                                  d[j][k], d[j][k - 1])
                st = pll.pll_step(st, e)
                tau_hat[j, k] = st.mu
            states[j] = st
            bview[j] = delay_sequence(bits[j], tau_hat[j])
    return states


def train_gprml_linear(readback, bits, cfg: ExperimentConfig):
    """Alternate the closed-form joint design with PLL trajectory passes.

    The decision delay is swept around the half-span default on the first
    iteration and the best-MSE value kept.
    """
    tau_hat = np.zeros_like(bits)
    states = {j: PllState(kp=cfg.pll_kp, ki=cfg.pll_ki) for j in cfg.async_tracks()}
    d0 = (cfg.eq_len - 1) // 2
    delay = d0
    fir = target = None
    mse = np.inf
    for it in range(cfg.design_iterations):
        bview = nn.delayed_bits(bits, tau_hat)
        if it == 0:
            best = None
            for d in range(max(0, d0 - cfg.delay_sweep), d0 + cfg.delay_sweep + 1):
                cand = design_gpr(readback, bview, cfg.target_len, cfg.eq_len, d)
                if best is None or cand[2] < best[2]:
                    best = cand
            fir, target, mse = best
            delay = fir.delay
        else:
            fir, target, mse = design_gpr(readback, bview, cfg.target_len, cfg.eq_len, delay)
        if not states:
            break
        y = equalize_linear(fir, readback)
        states = pll_batched_pass(
            y, bits, lambda bv: target_branch(target, bv, delay), delay, tau_hat, states
        )
    lines = {j: fit_line(tau_hat[j]) for j in cfg.async_tracks()}
    return dict(fir=fir, target=target, delay=delay, mse=mse, lines=lines,
                noise_var=max(mse / max(target.n_out, 1), 1e-6), tau_hat=tau_hat)


def train_gprml_nn(readback, bits, cfg: ExperimentConfig, spacing_idx: int,
                   linear: dict | None = None):
    """Warm-start from the linear design, then joint SGD training."""
    if linear is None:
        linear = train_gprml_linear(readback, bits, cfg)
    delay = linear["delay"]
    in_dim = cfg.n_readers * (2 * cfg.halfwin + 1)
    dims = [in_dim, *cfg.hidden, cfg.n_tracks]
    mlp0 = nn.init_mlp(dims, cfg.halfwin, seed=derive_seed(cfg.master_seed, spacing_idx, 4))
    tc = nn.TrainConfig(
        loss_mode=cfg.loss_mode,
        learning_rate=cfg.learning_rate,
        batch_len=cfg.batch_len,
        epochs=cfg.epochs,
        seed=derive_seed(cfg.master_seed, spacing_idx, 5),
        grad_clip=cfg.grad_clip,
    )
    pll_states = {j: PllState(kp=cfg.pll_kp, ki=cfg.pll_ki, freq=ln[0])
                  for j, ln in linear["lines"].items()}
    mlp, target, history, tau_hat, _ = nn.train(
        mlp0, linear["target"], readback, bits, pll_states, tc, delay
    )
    y = nn.forward(mlp, readback)
    resid = y - target_branch(target, nn.delayed_bits(bits, tau_hat), delay)
    noise_var = max(float(np.mean(resid**2)), 1e-6)
    lines = {j: fit_line(tau_hat[j]) for j in cfg.async_tracks()}
    return dict(mlp=mlp, target=target, delay=delay, lines=lines,
                noise_var=noise_var, loss_history=history,
                final_loss=float(history[-1]))


def train_prml_independent(readback, bits, cfg: ExperimentConfig):
    """Per-track MISO design; the offset track's design iterates with its
    own PLL pass exactly like the joint linear chain."""
    per_track = []
    d0 = (cfg.eq_len - 1) // 2
    async_set = set(cfg.async_tracks())
    for j in range(cfg.n_tracks):
        tau_row = np.zeros(bits.shape[1])
        state = PllState(kp=cfg.pll_kp, ki=cfg.pll_ki)
        fir = taps = None
        mse = np.inf
        iters = cfg.design_iterations if j in async_set else 1
        delay = d0
        for it in range(iters):
            brow = delay_sequence(bits[j], tau_row)
            if it == 0:
                best = None
                for d in range(max(0, d0 - cfg.delay_sweep), d0 + cfg.delay_sweep + 1):
                    cand = design_miso_gpr(readback, brow, cfg.prml_target_len, cfg.eq_len, d)
                    if best is None or cand[2] < best[2]:
                        best = cand
                fir, taps, mse = best
                delay = fir.delay
            else:
                fir, taps, mse = design_miso_gpr(
                    readback, brow, cfg.prml_target_len, cfg.eq_len, delay
                )
            if j not in async_set:
                break
            y = equalize_linear(fir, readback)[0]
            scalar_target = MatrixTarget(np.asarray(taps).reshape(-1, 1, 1))
            tau_j = tau_row[None, :]
            st = pll_batched_pass(
                [y], bits[j][None, :],
                lambda bv: target_branch(scalar_target, bv, delay),
                delay, tau_j, {0: state},
            )
            state = st[0]
            tau_row = tau_j[0]
        line = fit_line(tau_row) if j in async_set else (0.0, 0.0)
        per_track.append(dict(fir=fir, taps=taps, delay=delay, mse=mse, line=line))
    return dict(tracks=per_track)


# --- evaluation --------------------------------------------------------------

def count_bit_errors(true_bits, detected, decided, guard: int, max_shift: int = 2):
    """Best-global-alignment error count, identical for every system.

    Searches one shift s in [-max_shift, max_shift] applied to all tracks
    (detected bit i compared against written bit i+s), keeps the shift with
    the fewest total errors (ties toward s=0), and reports per-track error
    rates over interior, decided bits.
    """
    n = true_bits.shape[1]
    best = None
    for s in sorted(range(-max_shift, max_shift + 1), key=lambda v: (abs(v), v)):
        errs = []
        cnts = []
        for j in range(true_bits.shape[0]):
            i = np.arange(max(guard, -s + guard), min(n - guard, n - s - guard))
            i = i[decided[j, i]]
            cnts.append(i.size)
            errs.append(int(np.sum(detected[j, i] != true_bits[j, i + s])))
        total = sum(errs)
        if best is None or total < best[0]:
            best = (total, errs, cnts)
    _, errs, cnts = best
    per_track = tuple(e / c if c else 0.5 for e, c in zip(errs, cnts))
    total_bits = int(sum(cnts))
    avg = float(sum(errs) / total_bits) if total_bits else 0.5
    return per_track, avg, total_bits


def _test_trajectory(lines: dict, n_tracks: int, n: int) -> np.ndarray:
    tau = np.zeros((n_tracks, n))
    for j, (slope, intercept) in lines.items():
        tau[j] = intercept + slope * np.arange(n)
    return tau


def evaluate_gprml(model: dict, cfg: ExperimentConfig, bits, readback, channel,
                   use_nn: bool):
    delay = model["delay"]
    y = nn.forward(model["mlp"], readback) if use_nn else equalize_linear(model["fir"], readback)
    y_det = y[:, delay:]
    tau_est = _test_trajectory(model["lines"], cfg.n_tracks, y_det.shape[1])
    detected, decided = detect_frame_viterbi(model["target"], tau_est, y_det)
    full_decided = np.zeros_like(bits, dtype=bool)
    full_decided[:, : decided.shape[1]] = decided
    full_detected = -np.ones_like(bits)
    full_detected[:, : detected.shape[1]] = detected
    return count_bit_errors(bits, full_detected, full_decided, channel.edge_guard)


def evaluate_prml(model: dict, cfg: ExperimentConfig, bits, readback, channel):
    n = bits.shape[1]
    detected = -np.ones_like(bits)
    decided = np.zeros_like(bits, dtype=bool)
    for j, tm in enumerate(model["tracks"]):
        y = equalize_linear(tm["fir"], readback)[0]
        slope, intercept = tm["line"]
        if slope != 0.0 or intercept != 0.0:
            y = delay_sequence(y, -(intercept + slope * np.arange(n)))
        y_det = y[tm["delay"]:]
        target = MatrixTarget(np.asarray(tm["taps"]).reshape(-1, 1, 1))
        out, dec = detect_frame_viterbi(
            target, np.zeros((1, y_det.size)), y_det[None, :], interp_order=0
        )
        detected[j, : out.shape[1]] = out[0]
        decided[j, : dec.shape[1]] = dec[0]
    return count_bit_errors(bits, detected, decided, channel.edge_guard)


# --- sweep -------------------------------------------------------------------

def _cache_key(cfg: ExperimentConfig, spacing_idx: int, system: str) -> str:
    relevant = {
        k: v for k, v in asdict(cfg).items()
        if k not in ("output_dir", "workers", "test_bits", "test_seed", "spacings_tp",
                     "systems")
    }
    relevant["spacing_tp"] = cfg.spacings_tp[spacing_idx]
    relevant["train_seeds"] = _frame_seeds(cfg, spacing_idx, test=False)
    relevant["system"] = system
    blob = repr(sorted(relevant.items())).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_point(cfg: ExperimentConfig, spacing_idx: int, system: str,
               cache_dir: str | None = None) -> BerRecord:
    spacing = cfg.spacings_tp[spacing_idx]
    t0 = time.perf_counter()
    bits_tr, traj_tr, read_tr, channel = make_frame(cfg, spacing, spacing_idx, test=False)
    flag = "ok"
    train_loss = float("nan")
    try:
        if system == "gprml_linear":
            model = train_gprml_linear(read_tr, bits_tr, cfg)
            train_loss = model["mse"]
        elif system == "gprml_nn":
            model = _cached_nn_model(cfg, spacing_idx, read_tr, bits_tr, cache_dir)
            train_loss = model["final_loss"]
        else:
            model = train_prml_independent(read_tr, bits_tr, cfg)
            train_loss = float(np.mean([t["mse"] for t in model["tracks"]]))
    except TrainingDivergedError:
        n_tracks = cfg.n_tracks
        return BerRecord(
            system=system, spacing_tp=spacing, sigma_awgn=cfg.sigma_awgn,
            sigma_jitter=cfg.sigma_jitter, slope=cfg.offset_slope,
            track_ber=tuple([0.5] * n_tracks), avg_ber=0.5, bits_counted=0,
            train_loss_final=float("nan"),
            wall_time_s=time.perf_counter() - t0, flag="diverged",
        )

    bits_te, traj_te, read_te, _ = make_frame(cfg, spacing, spacing_idx, test=True)
    if system == "prml_independent":
        per_track, avg, counted = evaluate_prml(model, cfg, bits_te, read_te, channel)
    else:
        per_track, avg, counted = evaluate_gprml(
            model, cfg, bits_te, read_te, channel, use_nn=(system == "gprml_nn")
        )
    return BerRecord(
        system=system, spacing_tp=spacing, sigma_awgn=cfg.sigma_awgn,
        sigma_jitter=cfg.sigma_jitter, slope=cfg.offset_slope,
        track_ber=per_track, avg_ber=avg, bits_counted=counted,
        train_loss_final=train_loss, wall_time_s=time.perf_counter() - t0, flag=flag,
    )


def _cached_nn_model(cfg, spacing_idx, read_tr, bits_tr, cache_dir):
    if cache_dir is None:
        return train_gprml_nn(read_tr, bits_tr, cfg, spacing_idx)
    key = _cache_key(cfg, spacing_idx, "gprml_nn")
    path = os.path.join(cache_dir, key)
    meta_path = os.path.join(path, "meta")
    if os.path.isfile(meta_path):
        meta = {}
        with open(meta_path) as f:
            for line in f:
                k, v = line.split("=", 1)
                meta[k] = v.strip()
        lines = {}
        if meta["lines"]:
            for part in meta["lines"].split():
                jtxt, stxt, itxt = part.split(":")
                lines[int(jtxt)] = (float(stxt), float(itxt))
        return dict(
            mlp=nn.load_mlp(os.path.join(path, "mlp.txt")),
            target=load_target(os.path.join(path, "target.txt")),
            delay=int(meta["delay"]), lines=lines,
            noise_var=float(meta["noise_var"]), final_loss=float(meta["final_loss"]),
            loss_history=None,
        )
    model = train_gprml_nn(read_tr, bits_tr, cfg, spacing_idx)
    os.makedirs(path, exist_ok=True)
    nn.save_mlp(model["mlp"], os.path.join(path, "mlp.txt"))
    save_target(model["target"], os.path.join(path, "target.txt"))
    with open(meta_path, "w") as f:
        f.write(f"delay={model['delay']}\n")
        f.write(f"noise_var={model['noise_var']!r}\n")
        f.write(f"final_loss={model['final_loss']!r}\n")
        lines = " ".join(f"{j}:{ln[0]!r}:{ln[1]!r}" for j, ln in model["lines"].items())
        f.write(f"lines={lines}\n")
    return model


def _point_job(args):
    cfg_dict, spacing_idx, system, cache_dir = args
    cfg = ExperimentConfig(**cfg_dict)
    return _run_point(cfg, spacing_idx, system, cache_dir)


def run_experiment(cfg: ExperimentConfig, cache: bool = True) -> list:
    """Train and evaluate every (spacing, system) point; deterministic for a
    fixed master seed regardless of worker count."""
    cache_dir = os.path.join(cfg.output_dir, "cache") if cache else None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
    jobs = [(spacing_idx, system)
            for spacing_idx in range(len(cfg.spacings_tp))
            for system in cfg.systems]
    if cfg.workers > 1:
        cfg_dict = asdict(cfg)
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(
                _point_job,
                [(cfg_dict, si, sys_, cache_dir) for si, sys_ in jobs],
            ))
    else:
        records = [_run_point(cfg, si, sys_, cache_dir) for si, sys_ in jobs]
    return records


# --- results -----------------------------------------------------------------

def emit_results(records, out_dir):
    """Write ``ber.csv`` (one row per track plus an ``avg`` row per record)
    and a ``run_meta`` echo file; returns the paths written."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "ber.csv")
        with open(csv_path, "w") as f:
            f.write(BER_HEADER + "\n")
            for r in records:
                common = (
                    f"{r.system},{r.spacing_tp:.12g},{r.sigma_awgn:.12g},"
                    f"{r.sigma_jitter:.12g},{r.slope:.12g}"
                )
                for j, ber in enumerate(r.track_ber, start=1):
                    f.write(f"{common},{j},{ber:.12g},{r.bits_counted},{r.flag}\n")
                f.write(f"{common},avg,{r.avg_ber:.12g},{r.bits_counted},{r.flag}\n")
        meta_path = os.path.join(out_dir, "run_meta")
        with open(meta_path, "w") as f:
            f.write("tdmrlab run metadata\n")
            f.write(f"numpy={np.__version__}\n")
            f.write(f"records={len(records)}\n")
            f.write(f"wall_times_s={' '.join(f'{r.wall_time_s:.2f}' for r in records)}\n")
        return [csv_path, meta_path]
    except OSError as exc:
        raise OSError(f"failed writing results under {out_dir}: {exc}") from exc


def parse_ber_csv(path):
    """Round-trip reader for ber.csv; returns a list of row dicts."""
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != BER_HEADER:
            raise ValueError(f"unexpected ber.csv header: {header}")
        for line in f:
            parts = line.strip().split(",")
            rows.append(dict(
                system=parts[0], spacing_tp=float(parts[1]), sigma_awgn=float(parts[2]),
                sigma_jitter=float(parts[3]), slope=float(parts[4]), track=parts[5],
                ber=float(parts[6]), bits=int(parts[7]), flag=parts[8],
            ))
    return rows


# --- structured-text config --------------------------------------------------

def _parse_tuple(text, conv):
    return tuple(conv(tok) for tok in text.replace(",", " ").split())


def load_config(path) -> ExperimentConfig:
    """Read the nested key-value (INI) experiment configuration."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    kw = {}
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    if "systems" in exp:
        kw["systems"] = _parse_tuple(exp["systems"], str)
    if "spacings_tp" in exp:
        kw["spacings_tp"] = _parse_tuple(exp["spacings_tp"], float)
    for key, conv in (("train_bits", int), ("test_bits", int), ("master_seed", int),
                      ("test_seed", int), ("workers", int), ("output_dir", str)):
        if key in exp:
            kw[key] = conv(exp[key])
    if parser.has_section("channel"):
        ch = parser["channel"]
        for key, conv in (("n_tracks", int), ("n_readers", int), ("w50_cross", float),
                          ("sigma_p", float), ("pulse_halflen", int),
                          ("sigma_awgn", float), ("sigma_jitter", float),
                          ("gamma_asym", float), ("offset_slope", float)):
            if key in ch:
                kw[key] = conv(ch[key])
    if parser.has_section("design"):
        de = parser["design"]
        for key in ("eq_len", "target_len", "prml_target_len", "delay_sweep",
                    "design_iterations"):
            if key in de:
                kw[key] = int(de[key])
    if parser.has_section("nn"):
        nn_sec = parser["nn"]
        if "hidden" in nn_sec:
            kw["hidden"] = _parse_tuple(nn_sec["hidden"], int)
        for key, conv in (("halfwin", int), ("loss_mode", str),
                          ("learning_rate", float), ("batch_len", int),
                          ("epochs", int), ("grad_clip", float)):
            if key in nn_sec:
                kw[key] = conv(nn_sec[key])
    if parser.has_section("pll"):
        pl = parser["pll"]
        if "kp" in pl:
            kw["pll_kp"] = float(pl["kp"])
        if "ki" in pl:
            kw["pll_ki"] = float(pl["ki"])
    return ExperimentConfig(**kw)


def config_text(cfg: ExperimentConfig) -> str:
    """Config echo in the same nested key-value format."""
    lines = ["[experiment]"]
    lines.append("systems = " + " ".join(cfg.systems))
    lines.append("spacings_tp = " + " ".join(f"{s:g}" for s in cfg.spacings_tp))
    for key in ("train_bits", "test_bits", "master_seed", "workers", "output_dir"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    if cfg.test_seed is not None:
        lines.append(f"test_seed = {cfg.test_seed}")
    lines.append("\n[channel]")
    for key in ("n_tracks", "n_readers", "w50_cross", "sigma_p", "pulse_halflen",
                "sigma_awgn", "sigma_jitter", "gamma_asym", "offset_slope"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("\n[design]")
    for key in ("eq_len", "target_len", "prml_target_len", "delay_sweep",
                "design_iterations"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("\n[nn]")
    lines.append("hidden = " + " ".join(str(h) for h in cfg.hidden))
    for key in ("halfwin", "loss_mode", "learning_rate", "batch_len", "epochs",
                "grad_clip"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("\n[pll]")
    lines.append(f"kp = {cfg.pll_kp}")
    lines.append(f"ki = {cfg.pll_ki}")
    return "\n".join(lines) + "\n"
