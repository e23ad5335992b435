"""``radiomap`` command line: generate, train, estimate, benchmark, render.

Exit codes: 0 ok, 2 config or input error, 3 I/O error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("radiomap")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@contextmanager
def _thread_limit(n):
    env = os.environ.get("RADIOMAP_THREADS")
    if env:
        n = max(1, int(env))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=n):
        yield


def _load(rc_path):
    from radiomap.config import load_config
    try:
        return load_config(rc_path)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {rc_path}", EXIT_CONFIG) from exc


def cmd_generate(args) -> int:
    from radiomap.config import generation_config
    from radiomap.mapgen import build_dataset, write_dataset

    rc = _load(args.config)
    gen, T = generation_config(rc)
    out = rc.path_option("generate", "output")
    ds = build_dataset(gen, T, rc.master_seed)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(ds, out)
    except OSError as exc:
        raise CliError(f"cannot write dataset: {exc}", EXIT_IO) from exc
    print(f"wrote {out}: T={T} grid={gen.ny}x{gen.nx} nf={len(gen.frequencies)} "
          f"mode={gen.mode} seed={rc.master_seed}")
    return EXIT_OK


def _read_dataset(path):
    from radiomap.mapgen import read_dataset
    try:
        return read_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}", EXIT_IO) from exc
    except (ValueError, Exception) as exc:  # struct errors on truncated files
        raise CliError(f"malformed dataset {path}: {exc}", EXIT_CONFIG) from exc


def _read_network(path, dtype=np.float32):
    from radiomap.autoencoder import load_network
    try:
        return load_network(path, dtype)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(f"malformed checkpoint {path}: {exc}", EXIT_CONFIG) from exc


def cmd_train(args) -> int:
    from radiomap.autoencoder import build_network, save_network
    from radiomap.config import autoencoder_config, train_config
    from radiomap.training import DivergenceError, train, train_hybrid

    rc = _load(args.config)
    tcfg = train_config(rc)
    ds = _read_dataset(rc.path_option("train", "dataset"))
    init = rc.path_option("train", "init_checkpoint", required=False)
    if init is not None:
        net = _read_network(init, rc.dtype)
    else:
        acfg = autoencoder_config(rc, ds.grid.ny, ds.grid.nx)
        if tcfg.mode == "nomask_ablation":
            acfg = replace(acfg, in_channels=1)
        net = build_network(acfg, seed=tcfg.seed, dtype=rc.dtype)
    net.meta = {"delta_x": ds.grid.delta_x, "delta_y": ds.grid.delta_y}
    ckpt = rc.path_option("train", "checkpoint")
    loss_csv = rc.path_option("train", "loss_csv", required=False)
    try:
        if tcfg.mode == "hybrid":
            synth_path = rc.path_option("train", "synthetic_dataset", required=False)
            synth = _read_dataset(synth_path) if synth_path else None
            _, result = train_hybrid(net, synth, ds, tcfg)
        else:
            result = train(net, ds, tcfg)
    except DivergenceError as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    if not np.all(np.isfinite(net.params)):
        raise CliError("parameters became non-finite", EXIT_DIVERGED)
    try:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_network(net, ckpt)
        if loss_csv is not None:
            result.write_csv(loss_csv)
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}", EXIT_IO) from exc
    last = result.trace[-1] if result.trace else (0, float("nan"), float("nan"))
    print(f"wrote {ckpt}: mode={tcfg.mode} epochs={len(result.trace)} "
          f"examples={result.n_examples} final_train={last[1]:.6g} holdout={last[2]:.6g}")
    return EXIT_OK


def read_observations(path):
    """Parse an ``x_m, y_m, psd_dbm`` CSV; returns locations and values."""
    locs, vals = [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read observations {path}: {exc}", EXIT_IO) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CliError("empty observation file: empty omega", EXIT_CONFIG)
        cols = [h.strip() for h in header]
        try:
            ix, iy, iv = cols.index("x_m"), cols.index("y_m"), cols.index("psd_dbm")
        except ValueError:
            raise CliError("observation header must contain x_m, y_m, psd_dbm", EXIT_CONFIG)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                x, y, v = float(row[ix]), float(row[iy]), float(row[iv])
            except (ValueError, IndexError):
                raise CliError(f"malformed observation at row {lineno}: {row!r}", EXIT_CONFIG)
            if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(v)):
                raise CliError(f"non-finite observation at row {lineno}", EXIT_CONFIG)
            locs.append((x, y))
            vals.append(v)
    if not locs:
        raise CliError("no observations: empty omega", EXIT_CONFIG)
    return np.array(locs), np.array(vals)


def cmd_estimate(args) -> int:
    from radiomap.autoencoder import estimate_map
    from radiomap.evalbench import render_map
    from radiomap.gridmap import Grid, MeasurementSet, aggregate, assign_measurements

    net = _read_network(args.checkpoint)
    locs, vals = read_observations(args.observations)
    meta = getattr(net, "meta", {}) or {}
    dx = args.delta_x or meta.get("delta_x") or 100.0 / net.cfg.ny
    dy = args.delta_y or meta.get("delta_y") or 100.0 / net.cfg.nx
    grid = Grid(net.cfg.ny, net.cfg.nx, dx, dy)
    ms = MeasurementSet(locs, vals[:, None])
    sm = aggregate(grid, ms, assign_measurements(grid, ms))
    est = estimate_map(net, sm, 0)
    prefix = Path(args.out_prefix)
    lo = args.min_db if args.min_db is not None else float(np.floor(est.min()))
    hi = args.max_db if args.max_db is not None else float(np.ceil(est.max()))
    if hi <= lo:
        hi = lo + 1.0
    try:
        prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(f"{prefix}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "x_m", "y_m", "observed", "estimate_dbm"])
            for i in range(grid.ny):
                for j in range(grid.nx):
                    x, y = grid.point(i, j)
                    w.writerow([i + 1, j + 1, f"{x:.9g}", f"{y:.9g}", int(sm.mask[i, j]),
                                f"{est[i, j]:.9g}"])
        render_map(est, f"{prefix}.pgm", lo, hi)
    except OSError as exc:
        raise CliError(f"cannot write estimate: {exc}", EXIT_IO) from exc
    print(f"wrote {prefix}.csv and {prefix}.pgm from |omega|={sm.omega_size} "
          f"({len(vals)} observations)")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from radiomap.config import benchmark_settings
    from radiomap.evalbench import default_estimators, export_results, run_benchmark
    from radiomap.gridmap import Normalizer

    rc = _load(args.config)
    settings = benchmark_settings(rc)
    test = _read_dataset(rc.path_option("benchmark", "test_dataset"))
    net = None
    if "network" in settings["estimators"]:
        net = _read_network(rc.path_option("benchmark", "checkpoint"))
        normalizer = net.normalizer
    else:
        normalizer = Normalizer.fit(test.observed, test.mask)
    try:
        ests = default_estimators(normalizer, net, settings["estimators"])
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        results = run_benchmark(ests, test, settings["omega_sizes"], settings["trials"],
                                settings["seed"], settings["noise_sigma"])
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = rc.path_option("benchmark", "output")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        export_results(results, out)
    except OSError as exc:
        raise CliError(f"cannot write results: {exc}", EXIT_IO) from exc
    for res in results:
        cells = ", ".join(f"{n}:{r:.3f}" for n, r in zip(res.omega_sizes, res.rmse))
        print(f"{res.estimator:12s} {cells}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from radiomap.evalbench import render_map

    ds = _read_dataset(args.dataset)
    if not 0 <= args.index < len(ds):
        raise CliError(f"map index {args.index} out of range (T={len(ds)})", EXIT_CONFIG)
    layer = ds.true[args.index, :, :, 0] if args.which == "true" else np.where(
        ds.mask[args.index] > 0, ds.observed[args.index, :, :, 0], args.min_db)
    if args.max_db <= args.min_db:
        raise CliError("--max-db must exceed --min-db", EXIT_CONFIG)
    try:
        render_map(layer, args.output, args.min_db, args.max_db)
    except OSError as exc:
        raise CliError(f"cannot write image: {exc}", EXIT_IO) from exc
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radiomap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("config")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a completion autoencoder")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="complete a map from point measurements")
    e.add_argument("checkpoint")
    e.add_argument("observations", help="CSV with columns x_m, y_m, psd_dbm")
    e.add_argument("out_prefix")
    e.add_argument("--delta-x", type=float, default=None)
    e.add_argument("--delta-y", type=float, default=None)
    e.add_argument("--min-db", type=float, default=None)
    e.add_argument("--max-db", type=float, default=None)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="RMSE benchmark against the baselines")
    b.add_argument("config")
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("render", help="render a dataset map as a PGM image")
    r.add_argument("dataset")
    r.add_argument("output")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--which", choices=("true", "sampled"), default="true")
    r.add_argument("--min-db", type=float, default=-90.0)
    r.add_argument("--max-db", type=float, default=-20.0)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    from radiomap.config import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    threads = 1
    if getattr(args, "config", None):
        try:
            rc = _load(args.config)
            threads = 1 if rc.deterministic else rc.threads
        except (CliError, ConfigError, OSError):
            pass
    try:
        with _thread_limit(threads):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if getattr(args, "config", None) == exc.filename else EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
