"""Monte-Carlo RMSE benchmark over estimators and sampling-set sizes."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from radiomap import baselines
from radiomap.gridmap import Grid, Normalizer, SampledMap, TrueMap
from radiomap.mapgen import Dataset, add_measurement_noise, sample_sensor_locations

# (sampled map, grid) -> dBm estimate of shape (ny, nx)
Estimator = Callable[[SampledMap, Grid], np.ndarray]


@dataclass
class BenchmarkResult:
    estimator: str
    omega_sizes: list[int]
    rmse: list[float]
    stderr: list[float]
    trials: int
    master_seed: int
    triple_hash: str = ""
    squared_errors: dict[int, np.ndarray] = field(default_factory=dict, repr=False)


def rmse(true_map, est_map) -> float:
    """Root of the per-grid-point mean squared error of one map (single frequency)."""
    a = np.asarray(true_map, dtype=float)
    b = np.asarray(est_map, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"true {a.shape} and estimate {b.shape} differ in shape")
    ny, nx = a.shape[:2]
    return float(np.sqrt(np.sum((a - b) ** 2) / (ny * nx)))


def _slab(sm: SampledMap) -> np.ndarray:
    return sm.values[:, :, 0]


def normalized(fn, normalizer: Normalizer) -> Estimator:
    """Run a unit-agnostic baseline on standardized values and map back to dBm."""
    def est(sm: SampledMap, grid: Grid) -> np.ndarray:
        z = np.where(sm.mask > 0, normalizer.forward(_slab(sm)), 0.0)
        return normalizer.inverse(fn(z, sm.mask, grid))
    return est


def kriging_estimator(normalizer: Normalizer, ridge: float = 1e-5) -> Estimator:
    def fn(z, mask, grid):
        cfg = baselines.KernelConfig(baselines.sigma_K(grid, int(mask.sum())), ridge, "gaussian")
        return baselines.kriging_estimate(z, mask, grid, cfg)
    return normalized(fn, normalizer)


def multikernel_estimator(normalizer: Normalizer, ridge: float = 1e-4,
                          num_kernels: int = 20) -> Estimator:
    def fn(z, mask, grid):
        cfg = baselines.KernelConfig(baselines.sigma_K(grid, int(mask.sum())), ridge,
                                     "laplacian", num_kernels)
        return baselines.multikernel_estimate(z, mask, grid, cfg)
    return normalized(fn, normalizer)


def nuclear_estimator(normalizer: Normalizer, ridge: float = 1e-5, max_iter: int = 5000) -> Estimator:
    def fn(z, mask, grid):
        return baselines.nuclear_norm_complete(z, mask, ridge, max_iter=max_iter).estimate
    return normalized(fn, normalizer)


def knn_estimator(k: int = 5) -> Estimator:
    def est(sm, grid):
        return baselines.knn_estimate(_slab(sm), sm.mask, grid, k)
    return est


def network_estimator(net) -> Estimator:
    from radiomap.autoencoder import estimate_map

    def est(sm, grid):
        return estimate_map(net, sm, 0)
    return est


def default_estimators(normalizer: Normalizer, net=None,
                       names: Sequence[str] = ("network", "kriging", "multikernel", "knn")
                       ) -> dict[str, Estimator]:
    factories = {
        "kriging": lambda: kriging_estimator(normalizer),
        "multikernel": lambda: multikernel_estimator(normalizer),
        "nuclear": lambda: nuclear_estimator(normalizer),
        "knn": lambda: knn_estimator(5),
    }
    out = {}
    for name in names:
        if name == "network":
            if net is None:
                raise ValueError("the network estimator needs a trained network")
            out[name] = network_estimator(net)
        elif name in factories:
            out[name] = factories[name]()
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return out


def trial_triple(ds: Dataset, omega_size: int, trial: int, map_index: int, master_seed: int,
                 noise_sigma: float) -> tuple[TrueMap, SampledMap]:
    rng = np.random.default_rng(np.random.SeedSequence(master_seed,
                                                       spawn_key=(omega_size, trial, 1)))
    tm = TrueMap(ds.true[map_index, :, :, :1].astype(float))
    omega = sample_sensor_locations(ds.grid, omega_size, rng)
    return tm, add_measurement_noise(tm, omega, noise_sigma, rng)


def run_benchmark(estimators: Mapping[str, Estimator], test: Dataset, omega_sizes: Sequence[int],
                  trials: int, master_seed: int, noise_sigma: float = 1.0) -> list[BenchmarkResult]:
    """RMSE per estimator and sampling-set size over ``trials`` fresh draws.

    Each trial picks a distinct test map, a uniform sensor set and measurement
    noise from its own seed; every estimator sees the same draws. Squared
    errors are averaged before the square root.
    """
    if trials > len(test):
        raise ValueError(f"{trials} trials need as many test maps, dataset has {len(test)}")
    names = list(estimators)
    se = {name: {} for name in names}
    hashes = {name: hashlib.sha256() for name in names}
    grid = test.grid
    for n_obs in omega_sizes:
        pick = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(n_obs, 0)))
        maps = pick.choice(len(test), size=trials, replace=False)
        errs = {name: np.empty(trials) for name in names}
        for k in range(trials):
            tm, sm = trial_triple(test, n_obs, k, int(maps[k]), master_seed, noise_sigma)
            digest = (int(maps[k]).to_bytes(8, "little") + sm.mask.tobytes()
                      + sm.values.astype("<f8").tobytes())
            truth = tm.values[:, :, 0]
            for name in names:
                hashes[name].update(digest)
                est = estimators[name](sm, grid)
                errs[name][k] = np.sum((truth - est) ** 2) / grid.size
        for name in names:
            se[name][n_obs] = errs[name]
    results = []
    for name in names:
        r, s = [], []
        for n_obs in omega_sizes:
            e = se[name][n_obs]
            mse = float(e.mean())
            value = np.sqrt(mse)
            sem = float(e.std(ddof=1) / np.sqrt(len(e))) if len(e) > 1 else 0.0
            r.append(value)
            s.append(sem / (2 * value) if value > 0 else 0.0)
        results.append(BenchmarkResult(name, list(omega_sizes), r, s, trials, master_seed,
                                       hashes[name].hexdigest(), se[name]))
    return results


def export_results(results: Sequence[BenchmarkResult], path) -> None:
    """CSV rows ``estimator, omega, rmse_db, stderr_db, trials`` in estimator then omega order.

    Floats are written as the shortest decimal that parses back to the same double.
    """
    if not results:
        raise ValueError("no results to export")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "omega", "rmse_db", "stderr_db", "trials"])
        for res in results:
            for n_obs, r, s in sorted(zip(res.omega_sizes, res.rmse, res.stderr)):
                w.writerow([res.estimator, n_obs, repr(float(r)), repr(float(s)), res.trials])


def read_results(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["omega"] = int(row["omega"])
        row["rmse_db"] = float(row["rmse_db"])
        row["stderr_db"] = float(row["stderr_db"])
        row["trials"] = int(row["trials"])
    return rows


def render_map(values, path, min_db: float, max_db: float) -> None:
    """Write an 8-bit binary PGM; row ``i`` of the map is image row ``i`` from the top."""
    if not min_db < max_db:
        raise ValueError("min_db must be below max_db")
    v = np.asarray(values, dtype=float)
    if v.ndim == 3:
        v = v[:, :, 0]
    scaled = np.clip((v - min_db) / (max_db - min_db), 0.0, 1.0)
    pixels = np.floor(255.0 * scaled + 0.5).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
