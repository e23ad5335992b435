"""Synthetic power maps: free-space and Gudmundson-shadowed propagation.

Every map draws from its own generator seeded by ``(master_seed, index)``,
so a dataset does not depend on how the work is chunked.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from radiomap.gridmap import Grid, SampledMap, TrueMap, build_grid, make_mask

MAGIC = b"RMAP1"
_HEADER = struct.Struct("<5sIIIQQdd")


@dataclass(frozen=True)
class SourceConfig:
    position: tuple[float, float]
    tx_power: float  # dBm
    height: float = 1.5

    def __post_init__(self):
        if not np.isfinite(self.tx_power):
            raise ValueError("tx_power must be finite")


@dataclass(frozen=True)
class ChannelConfig:
    pathloss_exponent: float = 3.0
    gain_at_unit_distance: float = -30.0  # dB
    shadowing_variance: float = 10.0  # dB^2
    shadowing_decay_base: float = 0.95  # per meter
    min_distance: float | None = None  # None -> half the grid spacing

    def __post_init__(self):
        if not self.pathloss_exponent > 0:
            raise ValueError("pathloss_exponent must be positive")
        if not self.shadowing_variance >= 0:
            raise ValueError("shadowing_variance must be non-negative")
        if not 0 < self.shadowing_decay_base < 1:
            raise ValueError("shadowing_decay_base must lie in (0, 1)")

    def clamp_distance(self, grid: Grid) -> float:
        if self.min_distance is not None:
            return self.min_distance
        return min(grid.delta_x, grid.delta_y) / 2


def gudmundson_covariance(grid: Grid, cfg: ChannelConfig) -> np.ndarray:
    """Shadowing covariance ``var * base**dist`` between all grid point pairs."""
    pts = grid.points()
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    return cfg.shadowing_variance * np.power(cfg.shadowing_decay_base, dist)


def jittered_cholesky(cov: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Lower Cholesky factor of ``cov``, adding diagonal jitter if needed.

    Jitter starts at ``1e-9 * scale`` and grows tenfold up to ``1e-3 * scale``;
    ``scale`` defaults to the largest diagonal entry.
    """
    cov = np.asarray(cov, dtype=float)
    if scale is None:
        scale = float(np.max(np.diag(cov))) if cov.size else 0.0
    if scale == 0.0:
        return np.zeros_like(cov)
    eye = np.eye(len(cov))
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    jitter = 1e-9
    while jitter <= 1e-3 * (1 + 1e-12):
        try:
            return linalg.cholesky(cov + jitter * scale * eye, lower=True)
        except linalg.LinAlgError:
            jitter *= 10
    raise linalg.LinAlgError("covariance is not positive definite even with 1e-3 jitter")


def sample_shadowing(cov: np.ndarray, seed, shape: tuple[int, int] | None = None,
                     factor: np.ndarray | None = None) -> np.ndarray:
    """One zero-mean Gaussian field ``L @ z`` with ``L L^T = cov``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if factor is None:
        factor = jittered_cholesky(cov)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(len(factor))
    field_ = factor @ z
    if shape is not None:
        field_ = field_.reshape(shape)
    return field_


def pathloss_gain_db(distance, cfg: ChannelConfig, min_distance: float | None = None):
    d_min = cfg.min_distance if min_distance is None else min_distance
    d = np.asarray(distance, dtype=float)
    if d_min is not None:
        d = np.maximum(d, d_min)
    return cfg.gain_at_unit_distance - 10.0 * cfg.pathloss_exponent * np.log10(d)


def db_to_mw(x):
    return np.power(10.0, np.asarray(x) / 10.0)


def mw_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def generate_true_map(grid: Grid, sources: Sequence[SourceConfig], cfg: ChannelConfig,
                      shadowing_per_source: Sequence[np.ndarray] | None = None,
                      noise_psd: float = -np.inf) -> TrueMap:
    """Single-frequency true map in dBm: linear-power sum over sources plus noise."""
    pts = grid.points()
    d_min = cfg.clamp_distance(grid)
    total = np.full(grid.size, float(db_to_mw(noise_psd)) if np.isfinite(noise_psd) else 0.0)
    for s, src in enumerate(sources):
        dist = np.linalg.norm(pts - np.asarray(src.position, dtype=float), axis=1)
        rx = src.tx_power + pathloss_gain_db(dist, cfg, d_min)
        if shadowing_per_source is not None:
            rx = rx + np.asarray(shadowing_per_source[s]).ravel()
        total += db_to_mw(rx)
    return TrueMap(mw_to_db(total).reshape(grid.shape + (1,)))


def sample_sensor_locations(grid: Grid, count: int, seed,
                            admissible: np.ndarray | None = None) -> np.ndarray:
    """Draw ``count`` distinct grid points uniformly; returns ``(count, 2)`` indices.

    ``admissible`` is an optional ``(K, 2)`` array of allowed indices.
    """
    if admissible is None:
        flat_pool = np.arange(grid.size)
    else:
        adm = np.asarray(admissible, dtype=int).reshape(-1, 2)
        flat_pool = adm[:, 0] * grid.nx + adm[:, 1]
    if not 0 <= count <= len(flat_pool):
        raise ValueError(f"cannot draw {count} sensors from {len(flat_pool)} admissible points")
    rng = np.random.default_rng(seed)
    picked = rng.choice(flat_pool, size=count, replace=False)
    return np.stack(np.unravel_index(np.sort(picked), grid.shape), axis=1)


def add_measurement_noise(tm: TrueMap, omega: np.ndarray, sigma_db: float, seed) -> SampledMap:
    if sigma_db < 0:
        raise ValueError("sigma_db must be non-negative")
    ny, nx, nf = tm.values.shape
    mask = make_mask(omega, ny, nx)
    rng = np.random.default_rng(seed)
    noise = sigma_db * rng.standard_normal(tm.values.shape)
    values = np.where(mask[:, :, None] > 0, tm.values + noise, 0.0)
    return SampledMap(values, mask)


@dataclass
class GenerationConfig:
    """What a dataset contains. ``mode`` is ``"gudmundson"`` or ``"freespace"``."""
    side_x: float = 100.0
    side_y: float = 100.0
    ny: int = 32
    nx: int = 32
    frequencies: tuple[float, ...] = (900e6,)
    tx_powers: tuple[float, ...] = (11.0, 7.0)
    mode: str = "gudmundson"
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    noise_psd: float = -np.inf
    noise_sigma: float = 1.0
    omega_min: int = 50
    omega_max: int = 300

    def __post_init__(self):
        if self.mode not in ("gudmundson", "freespace"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 <= self.omega_min <= self.omega_max <= self.ny * self.nx:
            raise ValueError("need 0 <= omega_min <= omega_max <= ny*nx")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def grid(self) -> Grid:
        return build_grid(self.side_x, self.side_y, self.ny, self.nx)


def toy_config(**overrides) -> GenerationConfig:
    """Two fixed-power sources in free space (exponent 2, -30 dB at 1 m)."""
    base = GenerationConfig(mode="freespace",
                            channel=ChannelConfig(pathloss_exponent=2.0,
                                                  shadowing_variance=0.0))
    return replace(base, **overrides)


@dataclass
class Dataset:
    grid: Grid
    frequencies: np.ndarray
    true: np.ndarray  # (T, ny, nx, nf) float32 dBm
    mask: np.ndarray  # (T, ny, nx) uint8
    observed: np.ndarray  # (T, ny, nx, nf) float32, 0 at misses
    master_seed: int = 0

    def __len__(self):
        return len(self.true)

    def true_map(self, t: int) -> TrueMap:
        return TrueMap(self.true[t].astype(float))

    def sampled_map(self, t: int) -> SampledMap:
        return SampledMap(self.observed[t].astype(float), self.mask[t].copy())

    def subset(self, index) -> "Dataset":
        return Dataset(self.grid, self.frequencies, self.true[index], self.mask[index],
                       self.observed[index], self.master_seed)


def map_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator for map ``index``; the seed depends only on (master_seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


_CHUNK = 256


def build_dataset(gen: GenerationConfig, T: int, master_seed: int) -> Dataset:
    """Generate ``T`` independent (true, sampled) map pairs.

    Per map the generator draws, in order: source positions, the standard
    normal shadowing vectors (per frequency, per source), the sensor count,
    the sensor set and the measurement noise.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    grid = gen.grid()
    nf, ns, npts = len(gen.frequencies), len(gen.tx_powers), grid.size
    cfg = gen.channel
    shadowed = gen.mode == "gudmundson" and cfg.shadowing_variance > 0
    factor = jittered_cholesky(gudmundson_covariance(grid, cfg)) if shadowed else None
    pts = grid.points()
    d_min = cfg.clamp_distance(grid)
    tx = np.asarray(gen.tx_powers, dtype=float)
    noise_mw = float(db_to_mw(gen.noise_psd)) if np.isfinite(gen.noise_psd) else 0.0
    lo = np.array(grid.origin)
    hi = lo + np.array([gen.side_x, gen.side_y])

    true = np.empty((T, grid.ny, grid.nx, nf), dtype=np.float32)
    mask = np.zeros((T, grid.ny, grid.nx), dtype=np.uint8)
    observed = np.zeros((T, grid.ny, grid.nx, nf), dtype=np.float32)

    for start in range(0, T, _CHUNK):
        stop = min(T, start + _CHUNK)
        rngs = [map_rng(master_seed, t) for t in range(start, stop)]
        positions = np.stack([rng.uniform(lo, hi, size=(ns, 2)) for rng in rngs])
        if shadowed:
            z = np.stack([rng.standard_normal((nf, ns, npts)) for rng in rngs])
            shadow = (z.reshape(-1, npts) @ factor.T).reshape(z.shape)
        else:
            shadow = np.zeros((stop - start, nf, ns, npts))
        dist = np.linalg.norm(pts[None, None] - positions[:, :, None, :], axis=3)
        gain = pathloss_gain_db(dist, cfg, d_min)  # (B, ns, npts)
        rx = tx[None, None, :, None] + gain[:, None] + shadow  # (B, nf, ns, npts)
        total = db_to_mw(rx).sum(axis=2) + noise_mw
        maps = mw_to_db(total).transpose(0, 2, 1).reshape(-1, grid.ny, grid.nx, nf)
        true[start:stop] = maps
        for b, rng in enumerate(rngs):
            t = start + b
            count = int(rng.integers(gen.omega_min, gen.omega_max + 1))
            omega = sample_sensor_locations(grid, count, rng)
            sm = add_measurement_noise(TrueMap(maps[b]), omega, gen.noise_sigma, rng)
            mask[t] = sm.mask
            observed[t] = sm.values
    return Dataset(grid, np.asarray(gen.frequencies, dtype=float), true, mask, observed,
                   int(master_seed))


def dataset_to_bytes(ds: Dataset) -> bytes:
    grid = ds.grid
    nf = len(ds.frequencies)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, grid.ny, grid.nx, nf, len(ds), ds.master_seed & (2**64 - 1),
                           grid.delta_x, grid.delta_y))
    buf.write(np.asarray(ds.frequencies, dtype="<f8").tobytes())
    for t in range(len(ds)):
        buf.write(np.ascontiguousarray(ds.true[t], dtype="<f4").tobytes())
        idx = np.argwhere(ds.mask[t])
        buf.write(struct.pack("<I", len(idx)))
        buf.write(idx.astype("<u2").tobytes())
        buf.write(ds.observed[t][idx[:, 0], idx[:, 1]].astype("<f4").tobytes())
    return buf.getvalue()


def dataset_from_bytes(raw: bytes) -> Dataset:
    magic, ny, nx, nf, T, seed, dx, dy = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError("not a radio-map dataset (bad magic)")
    pos = _HEADER.size
    freqs = np.frombuffer(raw, dtype="<f8", count=nf, offset=pos).astype(float)
    pos += 8 * nf
    true = np.empty((T, ny, nx, nf), dtype=np.float32)
    mask = np.zeros((T, ny, nx), dtype=np.uint8)
    observed = np.zeros((T, ny, nx, nf), dtype=np.float32)
    cells = ny * nx * nf
    for t in range(T):
        true[t] = np.frombuffer(raw, dtype="<f4", count=cells, offset=pos).reshape(ny, nx, nf)
        pos += 4 * cells
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        idx = np.frombuffer(raw, dtype="<u2", count=2 * count, offset=pos).reshape(-1, 2)
        pos += 4 * count
        vals = np.frombuffer(raw, dtype="<f4", count=count * nf, offset=pos).reshape(-1, nf)
        pos += 4 * count * nf
        mask[t, idx[:, 0], idx[:, 1]] = 1
        observed[t, idx[:, 0], idx[:, 1]] = vals
    grid = Grid(ny, nx, dx, dy)
    return Dataset(grid, freqs, true, mask, observed, int(seed))


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def export_csv(ds: Dataset, t: int, path, f_index: int = 0) -> None:
    """One row per grid point of map ``t`` with 1-based grid indices."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "true_dbm", "observed", "measured_dbm"])
        for i in range(ds.grid.ny):
            for j in range(ds.grid.nx):
                seen = int(ds.mask[t, i, j])
                measured = repr(float(ds.observed[t, i, j, f_index])) if seen else ""
                w.writerow([i + 1, j + 1, repr(float(ds.true[t, i, j, f_index])), seen, measured])
