import shutil
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslide.nnet.checkpoint import load_checkpoint
from sslide.pipeline import (Dataset, ExperimentConfig, Manifest, desk_preset, full_preset, generate_dataset,
                             run_baseline, run_eval, run_training, split_counts, split_datapoints, split_records)
from sslide.pipeline.dataset import HEADER_BYTES, generate_datapoint, sample_source_position

TINY = dict(T=7, rt60s=[0.3, 0.5], source_duration=0.1, grid_Y=17, grid_X=25, enc_channels=[4, 4, 4, 4],
            max_order=4, epochs=2, batch_size=4, lr=1e-3)


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw})


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_dataset(tiny(), out)
    return out


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    res = run_training(tiny(), data, run)
    return res, run


# -- counts -------------------------------------------------------------------

@pytest.mark.parametrize("duration,expected", [(1.0, 2 * 62), (16128 / 16000, 2 * 63)])
def test_record_count_is_T_times_S(tmp_path, duration, expected):
    cfg = tiny(T=2, source_duration=duration, rt60s=[0.2])
    m = generate_dataset(cfg, tmp_path)
    assert m.record_count == expected == cfg.T * cfg.snapshots
    assert (tmp_path / "records.bin").stat().st_size == expected * Dataset(tmp_path).records.dtype.itemsize


def test_full_scale_count():
    cfg = full_preset(source_duration=16128 / 16000)
    assert cfg.T * cfg.snapshots == 600 * 63 == 37800


def test_presets():
    d = desk_preset()
    assert (d.T, d.grid_Y, d.grid_X, d.room_dims) == (100, 41, 65, [8.0, 5.0, 4.0])
    assert sorted(d.rt60s) == [0.2, 0.6]
    f = full_preset()
    assert (f.T, f.grid_Y, f.grid_X) == (600, 101, 161)


# -- files --------------------------------------------------------------------

def test_same_seed_byte_identical(data, tmp_path):
    generate_dataset(tiny(), tmp_path)
    for name in ("records.bin", "signals.bin", "manifest.txt", "config.txt"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()


def test_parallel_generation_matches_serial(data, tmp_path):
    generate_dataset(tiny(), tmp_path, workers=2)
    for name in ("records.bin", "signals.bin", "manifest.txt"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()


def test_other_seed_differs(data, tmp_path):
    generate_dataset(tiny(seed=1), tmp_path)
    assert (tmp_path / "records.bin").read_bytes() != (data / "records.bin").read_bytes()


def test_manifest_round_trip(data, tmp_path):
    text = (data / "manifest.txt").read_text()
    m = Manifest.loads(text)
    m.write(tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_bytes() == (data / "manifest.txt").read_bytes()
    assert m.config_digest == tiny().data_digest()
    offsets = [r[3] for r in m.records]
    assert all(b > a for a, b in zip(offsets, offsets[1:]))


def test_manifest_rejects_corruption(data):
    text = (data / "manifest.txt").read_text()
    with pytest.raises(ValueError):
        Manifest.loads(text.replace("sslide-dataset 1", "something else", 1))
    lines = text.splitlines()
    i = lines.index("[records]")
    lines[i + 1], lines[i + 2] = lines[i + 2], lines[i + 1]
    with pytest.raises(ValueError):
        Manifest.loads("\n".join(lines) + "\n")


def test_records_decode_from_manifest_alone(data, tmp_path):
    # copy only the binary records and the manifest, then decode by hand
    shutil.copy(data / "records.bin", tmp_path)
    shutil.copy(data / "manifest.txt", tmp_path)
    m = Manifest.read(tmp_path / "manifest.txt")
    raw = (tmp_path / "records.bin").read_bytes()
    block = m.N * m.Y * m.X
    ref = Dataset(data)
    for rid, dp, snap, off, x, y in m.records[::5]:
        head = struct.unpack_from("<IIIdd", raw, off)
        assert head == (rid, dp, snap, x, y)
        body = np.frombuffer(raw, "<f4", 2 * block + m.Y * m.X, off + HEADER_BYTES)
        inp = body[:block].reshape(m.N, m.Y, m.X)
        np.testing.assert_array_equal(inp, ref.records["input"][rid])
        heat = body[2 * block :].reshape(m.Y, m.X)
        g = m.grid()
        gx, gy = np.meshgrid(g.xs, g.ys)
        assert heat.argmax() == np.argmin(np.hypot(gx - x, gy - y))


def test_dataset_contents(data):
    ds = Dataset(data, verify=True)
    m = ds.manifest
    assert len(ds) == 7 * m.S
    assert m.S == 6 and m.M == 12 and m.L == 1600
    for t in range(7):
        rows = np.nonzero(ds.datapoint_ids == t)[0]
        np.testing.assert_array_equal(ds.records["snapshot"][rows], np.arange(m.S))
        x, y, z = ds.datapoint_position(t)
        np.testing.assert_array_equal(ds.truths[rows], [[x, y]] * m.S)
        assert ds.datapoint_rt60(t) == [0.3, 0.5][t % 2]
        assert ds.signals(t).shape == (12, 1600)
    heat = ds.arrays("heatmap")
    assert heat.max() <= 1.0 and np.all(heat >= 0)
    inp = ds.arrays("input")
    np.testing.assert_allclose(inp.max(axis=(2, 3)), 1.0, rtol=1e-6)


def test_verify_detects_tampering(data, tmp_path):
    for name in ("records.bin", "signals.bin", "manifest.txt"):
        shutil.copy(data / name, tmp_path)
    raw = bytearray((tmp_path / "signals.bin").read_bytes())
    raw[100] ^= 0xFF
    (tmp_path / "signals.bin").write_bytes(bytes(raw))
    Dataset(tmp_path)
    with pytest.raises(ValueError):
        Dataset(tmp_path, verify=True)


def test_datapoint_matches_manifest(data):
    ds = Dataset(data)
    dp = generate_datapoint(tiny(), 3)
    rows = np.nonzero(ds.datapoint_ids == 3)[0]
    np.testing.assert_array_equal(dp["inputs"], ds.records["input"][rows])
    np.testing.assert_array_equal(dp["signals"], ds.signals(3).astype("<f4"))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_source_clearance(seed):
    cfg = desk_preset()
    x, y, z = sample_source_position(cfg, np.random.default_rng(seed))
    lx, ly, _ = cfg.room_dims
    assert 0.3 <= x <= lx - 0.3 and 0.3 <= y <= ly - 0.3 and z == cfg.source_z
    for a in cfg.arrays:
        assert np.hypot(x - a["center"][0], y - a["center"][1]) >= 0.5


# -- splits -------------------------------------------------------------------

def test_split_sizes_T20():
    assert split_counts(20) == (14, 3, 3)
    s = split_datapoints(0, 20)
    assert [len(s[k]) for k in ("train", "val", "test")] == [14, 3, 3]


@settings(max_examples=50, deadline=None)
@given(st.integers(7, 400), st.integers(0, 2**31 - 1))
def test_split_partitions_datapoints(T, seed):
    s = split_datapoints(seed, T)
    allv = np.concatenate([s["train"], s["val"], s["test"]])
    np.testing.assert_array_equal(np.sort(allv), np.arange(T))
    again = split_datapoints(seed, T)
    for k in s:
        np.testing.assert_array_equal(s[k], again[k])
    dp = np.repeat(np.arange(T), 4)
    rows = split_records(dp, s)
    for k in s:
        # every snapshot of a datapoint goes with it
        assert set(dp[rows[k]]) == set(s[k])
        assert rows[k].size == 4 * s[k].size


def test_split_too_small():
    with pytest.raises(ValueError):
        split_datapoints(0, 3)


# -- training and evaluation ----------------------------------------------------

def test_training_outputs(trained):
    res, run = trained
    assert (run / "model.ckpt").exists()
    log = (run / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_loss,val_error_m" and log[1].startswith("init,") and len(log) == 4
    _, mc, meta = load_checkpoint(run / "model.ckpt")
    assert meta["data_digest"] == tiny().data_digest()
    assert mc.enc_channels == (4, 4, 4, 4)


def test_epoch0_loss_reproducible(data, trained, tmp_path):
    res, _ = trained
    again = run_training(tiny(), data, tmp_path)["result"]
    assert again.initial_loss == res["result"].initial_loss
    assert again.train_losses[0] == res["result"].train_losses[0]


def test_digest_mismatch_refused(data, tmp_path):
    with pytest.raises(ValueError, match="config"):
        run_training(tiny(snr_db=20.0), data, tmp_path)


def test_training_only_fields_keep_digest(data, tmp_path):
    # learning rate changes do not invalidate the dataset
    run_training(tiny(lr=5e-4, epochs=1), data, tmp_path)


def test_eval_report_and_cdf(data, trained, tmp_path):
    _, run = trained
    rep = run_eval(run / "model.ckpt", data, tmp_path)
    assert (tmp_path / "report.txt").exists() and (tmp_path / "cdf.csv").exists()
    test_dps = split_datapoints(0, 7)["test"]
    assert rep.extras["test_datapoints"] == [int(t) for t in test_dps]
    assert rep.errors.size == 6 * test_dps.size
    assert rep.mae == pytest.approx(rep.errors.mean())
    cdf = np.loadtxt(tmp_path / "cdf.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(cdf[:, 1]) >= 0) and cdf[-1, 1] == 1.0


def test_eval_bit_identical(data, trained, tmp_path):
    _, run = trained
    run_eval(run / "model.ckpt", data, tmp_path / "a", baselines=True)
    run_eval(run / "model.ckpt", data, tmp_path / "b", baselines=True)
    for name in ("report.txt", "cdf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_baselines_one_entry_per_estimator_per_rt60(tmp_path):
    cfg = tiny(T=14)
    generate_dataset(cfg, tmp_path / "d")
    run_training(cfg, tmp_path / "d", tmp_path / "r")
    rep = run_eval(tmp_path / "r" / "model.ckpt", tmp_path / "d", baselines=True)
    ds = Dataset(tmp_path / "d")
    rts = {repr(ds.datapoint_rt60(int(t))) for t in rep.extras["test_datapoints"]}
    for method in ("music", "srp-phat"):
        assert set(rep.extras[f"{method}_doa_mae_by_rt60"]) == rts
        assert np.isfinite(rep.extras[f"{method}_doa_mae_deg"])
        standalone = run_baseline(tmp_path / "d", method)
        assert standalone["doa_mae_deg"] == rep.extras[f"{method}_doa_mae_deg"]


def test_unknown_baseline(data):
    with pytest.raises(ValueError):
        run_baseline(data, "beamscan")


# -- configuration ----------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = desk_preset(seed=4, lr=3e-4, source_path=None, d_max=7.5)
    cfg.save(tmp_path / "c.txt")
    back = ExperimentConfig.load(tmp_path / "c.txt")
    assert back == cfg and back.digest() == cfg.digest()
    assert back.dumps() == (tmp_path / "c.txt").read_text()


def test_config_partial_and_comments():
    cfg = ExperimentConfig.loads("# comment\n\nT = 12\nrt60s = [0.4]\n")
    assert cfg.T == 12 and cfg.rt60s == [0.4] and cfg.grid_Y == 41


@pytest.mark.parametrize("text", ["bogus = 1\n", "T 12\n", "T = twelve\n", "rt60s = []\n", "T = 0\n",
                                  "split = [0.5, 0.5]\n"])
def test_config_rejects(text):
    with pytest.raises(ValueError):
        ExperimentConfig.loads(text)


def test_data_digest_ignores_training_fields():
    a = desk_preset()
    assert a.data_digest() == a.replace(lr=1.0, epochs=3, enc_channels=[8, 8, 8, 8]).data_digest()
    assert a.data_digest() != a.replace(sigma=0.3).data_digest()
    assert a.digest() != a.replace(lr=1.0).digest()
