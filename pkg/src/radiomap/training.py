"""Training objectives and loops for the completion autoencoder.

Every objective is a mean over training examples of a squared Frobenius
norm, in normalized units. An example is one (map, frequency) pair, or one
(map, frequency, split) triple for sample splitting, so all frequencies
share a single network.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from radiomap.autoencoder import Network, save_network
from radiomap.gridmap import Normalizer
from radiomap.mapgen import Dataset
from radiomap.neuralcore import AdamState, adam_step

log = logging.getLogger(__name__)

MODES = ("synthetic_target", "masked_selfsupervised", "real_samplesplit", "hybrid",
         "nomask_ablation")


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    mode: str = "synthetic_target"
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-4
    seed: int = 0
    q_splits: int = 1
    input_fraction: float = 0.5
    disjoint_split: bool = False
    holdout_fraction: float = 0.1
    patience: int = 20
    denoise_sigma: float = 0.0  # dB, added to network inputs only
    ablation_target: str = "true"  # "true" maps or "observed" entries
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode == "real_samplesplit" and not 0 < self.input_fraction < 1:
            raise ValueError("input_fraction must lie in (0, 1) for sample splitting")
        if self.q_splits < 1:
            raise ValueError("q_splits must be >= 1")
        if self.ablation_target not in ("true", "observed"):
            raise ValueError("ablation_target must be 'true' or 'observed'")


@dataclass
class TrainResult:
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    n_examples: int = 0
    best_epoch: int = 0

    @property
    def train_losses(self) -> list[float]:
        return [row[1] for row in self.trace]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "holdout_loss"])
            for epoch, tr, ho in self.trace:
                w.writerow([epoch, f"{tr:.9g}", f"{ho:.9g}"])


def masked_loss(pred, target, mask) -> float:
    """Squared Frobenius norm of the residual restricted to ``mask``.

    ``mask`` broadcasts over trailing axes of ``pred`` (e.g. a frequency axis).
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} and target {target.shape} differ")
    m = np.asarray(mask, dtype=float)
    if m.ndim < pred.ndim:
        m = m.reshape(m.shape + (1,) * (pred.ndim - m.ndim))
    r = np.where(m > 0, pred - target, 0.0)
    return float(np.sum(r * r))


def split_sampling_set(omega, q: int, input_fraction: float, seed,
                       disjoint: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Draw the input subset for split ``q`` uniformly without replacement.

    The target subset is all of ``omega`` unless ``disjoint`` is set, in which
    case it is the complement of the input subset. ``seed`` is an int or a
    tuple of ints.
    """
    omega = np.asarray(omega, dtype=int).reshape(-1, 2)
    n = len(omega)
    if n < 2:
        raise ValueError(f"sample splitting needs |omega| >= 2, got {n}")
    if not 0 < input_fraction <= 1:
        raise ValueError("input_fraction must lie in (0, 1]")
    k = int(np.clip(round(input_fraction * n), 1, n))
    if disjoint:
        k = min(k, n - 1)
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(int(q),)))
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    omega_in = omega[chosen]
    if disjoint:
        keep = np.ones(n, dtype=bool)
        keep[chosen] = False
        return omega_in, omega[keep]
    return omega_in, omega.copy()


class ExampleSource:
    """Builds (input, target, loss-weight) batches for one objective.

    Example ``e`` maps to map ``t``, frequency ``f`` and split ``q`` with
    ``e = (t * nf + f) * n_splits + q``.
    """

    def __init__(self, ds: Dataset, normalizer: Normalizer, objective: str, with_mask: bool = True,
                 n_splits: int = 1, input_fraction: float = 0.5, split_seed: int = 0,
                 disjoint: bool = False, dtype=np.float32):
        if objective not in ("true", "observed", "split"):
            raise ValueError(f"unknown objective {objective!r}")
        self.ds = ds
        self.norm = normalizer
        self.objective = objective
        self.with_mask = with_mask
        self.n_splits = n_splits if objective == "split" else 1
        self.nf = ds.true.shape[3]
        self.dtype = dtype
        self._split_masks = None
        if objective == "split":
            self._split_masks = self._make_splits(input_fraction, split_seed, disjoint)

    def _make_splits(self, fraction, seed, disjoint):
        ds = self.ds
        ny, nx = ds.mask.shape[1:]
        m_in = np.zeros((len(ds), self.n_splits, ny, nx), dtype=np.uint8)
        m_out = np.zeros_like(m_in)
        for t in range(len(ds)):
            omega = np.argwhere(ds.mask[t])
            if len(omega) < 2:
                raise ValueError(f"map {t} has |omega| = {len(omega)}; sample splitting needs >= 2")
            for q in range(self.n_splits):
                w_in, w_out = split_sampling_set(omega, q, fraction, (seed, t), disjoint)
                m_in[t, q, w_in[:, 0], w_in[:, 1]] = 1
                m_out[t, q, w_out[:, 0], w_out[:, 1]] = 1
        return m_in, m_out

    def __len__(self):
        return len(self.ds) * self.nf * self.n_splits

    def decompose(self, idx):
        idx = np.asarray(idx)
        q = idx % self.n_splits
        tf = idx // self.n_splits
        return tf // self.nf, tf % self.nf, q

    def batch(self, idx, noise_rng=None, noise_sigma=0.0):
        t, f, q = self.decompose(idx)
        obs = self.ds.observed[t, :, :, f].astype(float)
        if self.objective == "split":
            m_in = self._split_masks[0][t, q].astype(float)
            m_out = self._split_masks[1][t, q].astype(float)
        else:
            m_in = self.ds.mask[t].astype(float)
            m_out = m_in
        vals = self.norm.forward(obs)
        if noise_sigma > 0 and noise_rng is not None:
            vals = vals + noise_rng.standard_normal(vals.shape) * (noise_sigma / self.norm.std)
        slab = np.where(m_in > 0, vals, 0.0)
        x = np.stack([slab, m_in], axis=3) if self.with_mask else slab[..., None]
        if self.objective == "true":
            y = self.norm.forward(self.ds.true[t, :, :, f].astype(float))
            w = np.ones_like(y)
        else:
            y = np.where(m_out > 0, self.norm.forward(obs), 0.0)
            w = m_out
        return x.astype(self.dtype), y.astype(self.dtype), w.astype(self.dtype)


def batch_loss_and_grad(net: Network, x, y, w, scale: float = 1.0) -> float:
    """Forward and backward for one batch of ``sum_e ||W_e * (p(x_e) - y_e)||^2 * scale``.

    Gradients land in ``net.grads``; returns the unscaled summed loss.
    """
    pred = net.forward(x)[..., 0]
    r = (pred - y) * w
    loss = float(np.sum(r.astype(float) ** 2))
    net.backward((2.0 * scale * r)[..., None].astype(net.dtype))
    return loss


def objective_value(net: Network, src: ExampleSource, idx=None, batch_size: int = 64) -> float:
    """Mean per-example objective over ``idx`` (default: all examples)."""
    idx = np.arange(len(src)) if idx is None else np.asarray(idx)
    if len(idx) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(idx), batch_size):
        x, y, w = src.batch(idx[start:start + batch_size])
        pred = net.forward(x)[..., 0]
        total += float(np.sum(((pred - y) * w).astype(float) ** 2))
    return total / len(idx)


def objective_gradient(net: Network, src: ExampleSource, idx) -> tuple[float, np.ndarray]:
    """Summed objective and its gradient over the examples ``idx`` (one batch)."""
    x, y, w = src.batch(np.asarray(idx))
    loss = batch_loss_and_grad(net, x, y, w)
    return loss, net.grads.copy()


def _holdout_split(n_maps: int, fraction: float, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x686f6c64,)))
    perm = rng.permutation(n_maps)
    n_hold = int(round(fraction * n_maps)) if n_maps > 1 else 0
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def _map_examples(src: ExampleSource, maps: np.ndarray) -> np.ndarray:
    per_map = src.nf * src.n_splits
    return (maps[:, None] * per_map + np.arange(per_map)[None, :]).ravel()


def fit(net: Network, src: ExampleSource, cfg: TrainConfig, log_every: int = 0) -> TrainResult:
    """ADAM over mini-batches with per-epoch seeded shuffling and early stopping.

    The best parameters by held-out objective are restored at the end.
    """
    if len(src) == 0:
        raise ValueError("no training examples")
    train_maps, hold_maps = _holdout_split(len(src.ds), cfg.holdout_fraction, cfg.seed)
    train_idx = _map_examples(src, train_maps)
    hold_idx = _map_examples(src, hold_maps)
    result = TrainResult(n_examples=len(src))
    state = AdamState.zeros_like(net.params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0x7368,)))
    best = (np.inf, net.params.copy(), 0)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, y, w = src.batch(idx, rng, cfg.denoise_sigma)
            loss = batch_loss_and_grad(net, x, y, w, 1.0 / len(idx))
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            total += loss
            adam_step(net.params, net.grads, state)
            if log_every and b % log_every == 0:
                log.info("epoch %d batch %d loss %.4f", epoch, b, loss / len(idx))
        train_loss = total / len(order)
        hold_loss = objective_value(net, src, hold_idx) if len(hold_idx) else train_loss
        result.trace.append((epoch, train_loss, hold_loss))
        log.info("epoch %d train %.5f holdout %.5f", epoch, train_loss, hold_loss)
        if hold_loss < best[0]:
            best = (hold_loss, net.params.copy(), epoch)
            stale = 0
        else:
            stale += 1
        if cfg.checkpoint_every and cfg.checkpoint_dir and epoch % cfg.checkpoint_every == 0:
            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_network(net, Path(cfg.checkpoint_dir) / f"epoch{epoch:04d}.rae")
        if stale >= cfg.patience:
            break
    if np.isfinite(best[0]):
        net.params[...] = best[1]
    result.best_epoch = best[2]
    return result


def ensure_normalizer(net: Network, ds: Dataset) -> Normalizer:
    """Fit the dBm standardization on the dataset's observed values once."""
    if net.normalizer.mean == 0.0 and net.normalizer.std == 1.0:
        net.normalizer = Normalizer.fit(ds.observed, ds.mask)
    return net.normalizer


def train_frequency_separated(net: Network, ds: Dataset, cfg: TrainConfig,
                              objective: str = "true") -> TrainResult:
    """Train one shared network on every (map, frequency) pair of ``ds``."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    norm = ensure_normalizer(net, ds)
    src = ExampleSource(ds, norm, objective, with_mask=net.with_mask, dtype=net.dtype)
    return fit(net, src, cfg)


def train_synthetic(net: Network, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Full-map targets: the true maps are known for synthetic data."""
    return train_frequency_separated(net, ds, cfg, objective="true")


def train_masked(net: Network, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Score the network only on the observed entries of each map."""
    return train_frequency_separated(net, ds, cfg, objective="observed")


def train_real_samplesplit(net: Network, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Feed one subset of the measurements and score on another; true maps unused."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    norm = ensure_normalizer(net, ds)
    src = ExampleSource(ds, norm, "split", with_mask=net.with_mask, n_splits=cfg.q_splits,
                        input_fraction=cfg.input_fraction, split_seed=cfg.seed,
                        disjoint=cfg.disjoint_split, dtype=net.dtype)
    return fit(net, src, cfg)


def train_hybrid(net: Network, synth: Dataset | None, real: Dataset, cfg: TrainConfig,
                 synth_cfg: TrainConfig | None = None) -> tuple[TrainResult | None, TrainResult]:
    """Warm start on synthetic maps, then continue with sample splitting on real data.

    Passing ``synth=None`` skips the first phase.
    """
    first = None
    if synth is not None:
        first = train_synthetic(net, synth, synth_cfg or replace(cfg, mode="synthetic_target"))
    second = train_real_samplesplit(net, real, replace(cfg, mode="real_samplesplit"))
    return first, second


def train_nomask_ablation(net: Network, ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Same loop with zero-filled inputs and no mask channel."""
    if net.cfg.in_channels != 1:
        raise ValueError("the no-mask ablation needs a network built with in_channels = 1")
    return train_frequency_separated(net, ds, cfg, objective=cfg.ablation_target)


def train(net: Network, ds: Dataset, cfg: TrainConfig, synth: Dataset | None = None) -> TrainResult:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "synthetic_target":
        return train_synthetic(net, ds, cfg)
    if cfg.mode == "masked_selfsupervised":
        return train_masked(net, ds, cfg)
    if cfg.mode == "real_samplesplit":
        return train_real_samplesplit(net, ds, cfg)
    if cfg.mode == "hybrid":
        return train_hybrid(net, synth, ds, cfg)[1]
    return train_nomask_ablation(net, ds, cfg)
