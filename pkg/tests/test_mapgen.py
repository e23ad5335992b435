import math

import mpmath
import numpy as np
import pytest
from scipy import linalg

from radiomap.gridmap import TrueMap, build_grid
from radiomap.mapgen import (
    ChannelConfig, GenerationConfig, SourceConfig, add_measurement_noise, build_dataset,
    dataset_from_bytes, dataset_to_bytes, db_to_mw, export_csv, generate_true_map,
    gudmundson_covariance, jittered_cholesky, map_rng, mw_to_db, pathloss_gain_db,
    read_dataset, sample_sensor_locations, sample_shadowing, toy_config, write_dataset,
)

# 10 * 0.95 ** 3.125 from a 40-digit mpmath evaluation
NEIGHBOR_COV = 8.518953869503469912


def test_neighbor_covariance_oracle():
    mpmath.mp.dps = 40
    ref = float(10 * mpmath.power(mpmath.mpf("0.95"), mpmath.mpf("3.125")))
    assert ref == pytest.approx(NEIGHBOR_COV, rel=1e-15)


def test_covariance_values():
    g = build_grid(100, 100, 32, 32)
    C = gudmundson_covariance(g, ChannelConfig())
    assert C.shape == (1024, 1024)
    np.testing.assert_array_equal(np.diag(C), 10.0)
    assert C[0, 1] == pytest.approx(NEIGHBOR_COV, rel=1e-12)
    assert C[0, 32] == pytest.approx(NEIGHBOR_COV, rel=1e-12)
    np.testing.assert_array_equal(C, C.T)


def test_covariance_factorizes():
    g = build_grid(100, 100, 32, 32)
    C = gudmundson_covariance(g, ChannelConfig())
    L = jittered_cholesky(C)
    assert np.allclose(L @ L.T, C, atol=1e-5 * 10)
    assert np.all(np.triu(L, 1) == 0)


def test_jitter_rescues_singular_matrix():
    v = np.array([1.0, 2.0, 3.0])
    C = np.outer(v, v)  # rank 1
    with pytest.raises(linalg.LinAlgError):
        linalg.cholesky(C, lower=True)
    L = jittered_cholesky(C)
    assert np.allclose(L @ L.T, C, atol=1e-3 * 9)


def test_jitter_gives_up_on_indefinite():
    with pytest.raises(linalg.LinAlgError):
        jittered_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_zero_covariance_gives_zero_field():
    f = sample_shadowing(np.zeros((16, 16)), 4, shape=(4, 4))
    assert f.shape == (4, 4) and not f.any()


def test_shadowing_same_seed_identical():
    g = build_grid(20, 20, 6, 6)
    C = gudmundson_covariance(g, ChannelConfig())
    a = sample_shadowing(C, 11)
    b = sample_shadowing(C, 11)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_shadowing(C, 12))


def test_shadowing_stationary_mean():
    g = build_grid(8, 8, 8, 8)
    C = gudmundson_covariance(g, ChannelConfig())
    L = jittered_cholesky(C)
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20000, 64)) @ L.T
    # 3 sigma of the mean of 20000 draws with variance 10
    assert np.all(np.abs(X.mean(axis=0)) < 3 * math.sqrt(10 / 20000))


@pytest.mark.parametrize("d,gamma,want", [(1.0, 3.0, -30.0), (10.0, 3.0, -60.0),
                                          (100.0, 3.0, -90.0), (10.0, 2.0, -50.0)])
def test_pathloss_powers_of_ten(d, gamma, want):
    cfg = ChannelConfig(pathloss_exponent=gamma)
    assert pathloss_gain_db(d, cfg) == pytest.approx(want, abs=1e-12)


def test_pathloss_clamp():
    cfg = ChannelConfig()
    assert pathloss_gain_db(0.0, cfg, min_distance=1.0) == -30.0
    g = build_grid(100, 100, 32, 32)
    assert cfg.clamp_distance(g) == pytest.approx(1.5625)


def test_channel_validation_names_field():
    with pytest.raises(ValueError, match="pathloss_exponent"):
        ChannelConfig(pathloss_exponent=0.0)
    with pytest.raises(ValueError, match="shadowing_decay_base"):
        ChannelConfig(shadowing_decay_base=1.0)


def test_single_source_at_unit_distance():
    g = build_grid(4, 4, 4, 4)  # points at 1..4 m
    cfg = ChannelConfig(shadowing_variance=0.0)
    src = SourceConfig((0.0, 1.0), 11.0)
    tm = generate_true_map(g, [src], cfg)
    assert tm.values[0, 0, 0] == pytest.approx(-19.0, abs=1e-12)


def test_two_colocated_sources():
    g = build_grid(4, 4, 4, 4)
    cfg = ChannelConfig(shadowing_variance=0.0)
    src = SourceConfig((0.0, 1.0), 11.0)
    tm = generate_true_map(g, [src, src], cfg)
    mpmath.mp.dps = 30
    want = float(-19 + 10 * mpmath.log10(2))
    assert tm.values[0, 0, 0] == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(-15.99, abs=5e-3)


def test_no_sources_noise_floor():
    g = build_grid(10, 10, 3, 3)
    tm = generate_true_map(g, [], ChannelConfig(), noise_psd=-90.0)
    np.testing.assert_allclose(tm.values, -90.0, atol=1e-12)


def test_linear_superposition():
    g = build_grid(100, 100, 16, 16)
    cfg = ChannelConfig()
    C = gudmundson_covariance(g, cfg)
    L = jittered_cholesky(C)
    rng = np.random.default_rng(0)
    a, b = SourceConfig((20.0, 70.0), 11.0), SourceConfig((80.0, 10.0), 7.0)
    sa, sb = sample_shadowing(C, rng, factor=L), sample_shadowing(C, rng, factor=L)
    both = generate_true_map(g, [a, b], cfg, [sa, sb]).values
    ma = generate_true_map(g, [a], cfg, [sa]).values
    mb = generate_true_map(g, [b], cfg, [sb]).values
    np.testing.assert_allclose(both, mw_to_db(db_to_mw(ma) + db_to_mw(mb)), atol=1e-9)


def test_monotone_in_tx_power():
    g = build_grid(100, 100, 16, 16)
    cfg = ChannelConfig(shadowing_variance=0.0)
    a, b = SourceConfig((20.0, 70.0), 11.0), SourceConfig((80.0, 10.0), 7.0)
    base = generate_true_map(g, [a, b], cfg).values
    for delta in (0.0, 0.5, 3.0, 20.0):
        up = generate_true_map(g, [SourceConfig(a.position, 11.0 + delta), b], cfg).values
        assert np.all(up >= base)


def test_sensor_extremes():
    g = build_grid(10, 10, 4, 4)
    full = sample_sensor_locations(g, 16, 0)
    assert sorted(map(tuple, full)) == [(i, j) for i in range(4) for j in range(4)]
    assert sample_sensor_locations(g, 0, 0).shape == (0, 2)
    with pytest.raises(ValueError):
        sample_sensor_locations(g, 17, 0)


def test_sensor_distinct_and_admissible():
    g = build_grid(10, 10, 8, 8)
    adm = np.array([(i, j) for i in range(8) for j in range(8) if (i + j) % 2 == 0])
    pick = sample_sensor_locations(g, 20, 3, admissible=adm)
    assert len({tuple(p) for p in pick}) == 20
    assert all((i + j) % 2 == 0 for i, j in pick)


def test_sensor_uniformity():
    g = build_grid(10, 10, 4, 4)
    rng = np.random.default_rng(2024)
    n = 100_000
    counts = np.zeros(16, dtype=int)
    for _ in range(n):
        i, j = sample_sensor_locations(g, 1, rng)[0]
        counts[i * 4 + j] += 1
    p = 1 / 16
    sd = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sd), counts


def test_noise_zero_sigma_exact():
    rng = np.random.default_rng(0)
    tm = TrueMap(rng.normal(-60, 10, size=(6, 6, 1)))
    omega = np.array([(0, 0), (2, 3), (5, 5)])
    sm = add_measurement_noise(tm, omega, 0.0, 1)
    for i, j in omega:
        assert sm.values[i, j, 0] == tm.values[i, j, 0]
    assert np.all(sm.values[sm.mask == 0] == 0)


def test_noise_std():
    rng = np.random.default_rng(7)
    tm = TrueMap(rng.normal(-60, 10, size=(32, 32, 1)))
    omega = np.array([(i, j) for i in range(32) for j in range(32)])
    diffs = []
    for _ in range(98):  # 100 352 samples
        sm = add_measurement_noise(tm, omega, 1.0, rng)
        diffs.append((sm.values - tm.values).ravel())
    sd = np.concatenate(diffs).std()
    assert abs(sd - 1.0) < 0.01


def test_noise_keeps_misses_zero():
    tm = TrueMap(np.full((5, 5, 1), -50.0))
    sm = add_measurement_noise(tm, np.array([(1, 1)]), 30.0, 0)
    assert np.count_nonzero(sm.values) == 1 and sm.mask.sum() == 1


def test_dataset_independent_of_chunking(monkeypatch):
    from radiomap import mapgen
    gen = GenerationConfig(side_x=50, side_y=50, ny=8, nx=8, omega_min=5, omega_max=20)
    ref = build_dataset(gen, 30, 5)
    monkeypatch.setattr(mapgen, "_CHUNK", 7)
    chunked = build_dataset(gen, 30, 5)
    assert dataset_to_bytes(ref) == dataset_to_bytes(chunked)
    assert map_rng(5, 17).random() == map_rng(5, 17).random()


def test_dataset_deterministic_bytes():
    gen = GenerationConfig(side_x=50, side_y=50, ny=8, nx=8, omega_min=5, omega_max=20)
    a = dataset_to_bytes(build_dataset(gen, 3, 42))
    b = dataset_to_bytes(build_dataset(gen, 3, 42))
    assert a == b
    assert a != dataset_to_bytes(build_dataset(gen, 3, 43))


def test_distinct_maps_have_distinct_sources():
    ds = build_dataset(toy_config(ny=8, nx=8, omega_min=5, omega_max=5), 2, 0)
    assert not np.array_equal(ds.true[0], ds.true[1])


def test_dataset_contents():
    gen = toy_config(omega_min=50, omega_max=60)
    ds = build_dataset(gen, 20, 1)
    assert ds.true.shape == (20, 32, 32, 1) and ds.true.dtype == np.float32
    sizes = ds.mask.reshape(20, -1).sum(axis=1)
    assert sizes.min() >= 50 and sizes.max() <= 60
    assert np.all(ds.observed[ds.mask == 0] == 0)
    # free space, two sources: the map is below the sum of both tx powers minus 30 dB at 1 m
    assert ds.true.max() <= 11 - 30 + 10 * math.log10(1 + 10 ** -0.4) + 20 * math.log10(2) + 1e-4


def test_dataset_round_trip(tmp_path):
    gen = GenerationConfig(side_x=40, side_y=60, ny=8, nx=16, frequencies=(8e8, 9e8),
                           omega_min=3, omega_max=30)
    ds = build_dataset(gen, 4, 2**63 + 5)
    path = tmp_path / "d.bin"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.master_seed == 2**63 + 5
    assert back.grid == ds.grid
    np.testing.assert_array_equal(back.frequencies, ds.frequencies)
    np.testing.assert_array_equal(back.true, ds.true)
    np.testing.assert_array_equal(back.mask, ds.mask)
    np.testing.assert_array_equal(back.observed, ds.observed)
    assert dataset_to_bytes(back) == path.read_bytes()


def test_dataset_bad_magic():
    with pytest.raises(ValueError):
        dataset_from_bytes(b"XXXXX" + bytes(60))


def test_export_csv(tmp_path):
    ds = build_dataset(toy_config(ny=4, nx=4, omega_min=3, omega_max=3), 1, 0)
    path = tmp_path / "m.csv"
    export_csv(ds, 0, path)
    rows = path.read_text().splitlines()
    assert rows[0] == "i,j,true_dbm,observed,measured_dbm"
    assert len(rows) == 17
    i, j, true_dbm, seen, measured = rows[1].split(",")
    assert (i, j) == ("1", "1") and float(true_dbm) == float(ds.true[0, 0, 0, 0])
    assert sum(int(r.split(",")[3]) for r in rows[1:]) == 3


def test_generation_bounded_time():
    import time
    t0 = time.perf_counter()
    build_dataset(GenerationConfig(), 1000, 0)
    assert time.perf_counter() - t0 < 120
