import subprocess
import sys

import numpy as np
import pytest

from lrtt.errors import ConfigError, ShapeMismatch
from lrtt.experiments import BLOB_ARCH, DATA_DIR, LARGE_RANKS, load_blobs
from lrtt.nn import (Architecture, Dataset, TrainConfig, build_network, dense_spec,
                     network_forward, train, tt_spec)
from lrtt.pipeline import (build_lr_network, compare_init, compress_network, make_blobs,
                           read_csv, train_val_split, write_csv)
from lrtt.rgd import RgdConfig


@pytest.fixture(scope="module")
def blobs():
    return load_blobs()


@pytest.fixture(scope="module")
def trained_large(blobs):
    train_data, val = blobs
    nets = {}
    for seed in range(3):
        net = build_network(BLOB_ARCH, LARGE_RANKS, seed)
        nets[seed] = train(net, train_data, TrainConfig("adam", 1e-3, 32, 20, seed), val)
    return nets


def tiny_arch():
    return Architecture((tt_spec((2, 3), (3, 2)), tt_spec((3, 2), (2, 2)),
                         dense_spec(4, 3, "identity")))


def tiny_data(seed=0, n=40):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 6)), rng.integers(0, 3, n))


class TestCsv:
    def test_classification_round_trip(self, tmp_path, rng):
        data = Dataset(rng.normal(size=(5, 3)), rng.integers(0, 4, 5))
        write_csv(data, tmp_path / "c.csv")
        back = read_csv(tmp_path / "c.csv")
        assert back.kind == "classification"
        assert np.array_equal(back.x, data.x) and np.array_equal(back.y, data.y)

    def test_regression_round_trip(self, tmp_path, rng):
        data = Dataset(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), "regression")
        write_csv(data, tmp_path / "r.csv")
        back = read_csv(tmp_path / "r.csv")
        assert back.kind == "regression"
        assert np.array_equal(back.x, data.x) and np.array_equal(back.y, data.y)

    def test_header_layout(self, tmp_path):
        write_csv(Dataset(np.zeros((1, 2)), [1]), tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == "x0,x1,label"

    @pytest.mark.parametrize("text", ["", "x0,label\n", "a,b\n1,2\n", "x0,label\n1.0,0.5\n",
                                      "x0,z\n1,2\n"])
    def test_bad_files(self, tmp_path, text):
        (tmp_path / "bad.csv").write_text(text)
        with pytest.raises(ShapeMismatch):
            read_csv(tmp_path / "bad.csv")

    def test_committed_blobs(self, blobs):
        train_data, val = blobs
        assert train_data.x.shape == (400, 256) and val.x.shape == (200, 256)
        assert set(np.unique(train_data.y)) == {0, 1, 2, 3}

    def test_blobs_regenerate_identically(self, tmp_path):
        script = DATA_DIR.parent / "scripts" / "make_blobs.py"
        subprocess.run([sys.executable, str(script), "--out-dir", str(tmp_path)], check=True,
                       capture_output=True)
        for name in ("blobs_train.csv", "blobs_val.csv"):
            assert (tmp_path / name).read_bytes() == (DATA_DIR / name).read_bytes()


class TestBlobs:
    def test_deterministic(self):
        a, b = make_blobs(5, 8, 3, seed=1), make_blobs(5, 8, 3, seed=1)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_split(self):
        data = make_blobs(10, 4, 3, seed=0)
        tr, va = train_val_split(data, 0.2, 0)
        assert len(tr) == 24 and len(va) == 6
        with pytest.raises(ConfigError):
            train_val_split(data, 1.0)


class TestBuildLr:
    def test_same_ranks_is_no_op(self):
        net = build_network(tiny_arch(), (1, 2, 1), 0)
        data = tiny_data()
        lr_net, report = build_lr_network(net, (1, 2, 1), None, None, data)
        for key, val in report.metrics_before.items():
            assert abs(report.metrics_after[key] - val) <= 1e-9
        assert all(len(t) == 1 for t in report.traces.values())
        x = np.random.default_rng(1).normal(size=(10, 6))
        assert np.max(np.abs(network_forward(lr_net, x) - network_forward(net, x))) <= 1e-9

    def test_2048_layer_counts(self):
        f = (8, 4, 8, 8)
        arch = Architecture((tt_spec(f, f, "relu"), dense_spec(2048, 2, "identity")))
        net = build_network(arch, (1, 12, 12, 12, 1), 0)
        small, traces = compress_network(net, (1, 3, 4, 3, 1), RgdConfig((1, 3, 4, 3, 1), max_steps=2))
        _, report = build_lr_network(net, (1, 3, 4, 3, 1), RgdConfig((1, 3, 4, 3, 1), max_steps=2),
                                     None, Dataset(np.zeros((2, 2048)), [0, 1]))
        assert report.params_before[0] == 13056 and report.params_after[0] == 1344
        assert round(13056 / 1344, 2) == 9.71
        assert small.layers[0].weight.ranks == (1, 3, 4, 3, 1)

    def test_target_above_current_rejected(self):
        net = build_network(tiny_arch(), (1, 2, 1), 0)
        with pytest.raises(ConfigError):
            compress_network(net, (1, 3, 1))

    def test_fine_tune_history(self):
        net = build_network(tiny_arch(), (1, 3, 1), 0)
        _, report = build_lr_network(net, (1, 1, 1), None, TrainConfig("sgd", 0.1, 8, 3, 0),
                                     tiny_data())
        assert len(report.history) == 3
        assert report.metrics_after["train_loss"] == report.history[-1].train_loss

    def test_recovered_fraction_without_drop(self):
        net = build_network(tiny_arch(), (1, 2, 1), 0)
        _, report = build_lr_network(net, (1, 2, 1), None, None, tiny_data())
        assert report.recovered_fraction() == 1.0


class TestCompareInit:
    def test_equal_ranks_identical(self):
        data = tiny_data()
        cfg = TrainConfig("sgd", 0.05, 8, 3, 0)
        res = compare_init(tiny_arch(), (1, 2, 1), (1, 2, 1), data, cfg, seed=5)
        assert [h.line() for h in res.random_history] == [h.line() for h in res.lr_history]
        assert res.random_params == res.lr_params

    def test_reproducible(self):
        data = tiny_data()
        cfg = TrainConfig("adam", 0.01, 8, 2, 0)
        runs = [compare_init(tiny_arch(), (1, 3, 1), (1, 1, 1), data, cfg, pretrain_cfg=cfg,
                             val=tiny_data(1, 10), seed=2).summary() for _ in range(2)]
        assert runs[0] == runs[1]
        assert runs[0]["random_params"] == runs[0]["lr_params"]
        assert {"random_final_val_accuracy", "lr_final_val_accuracy",
                "random_best_val_accuracy", "lr_best_val_accuracy"} <= set(runs[0])


class TestBlobTask:
    def test_large_rank_fits(self, trained_large):
        for seed, (net, history) in trained_large.items():
            assert history[-1].train_accuracy >= 0.95, seed

    def test_fine_tuning_recovers(self, blobs, trained_large):
        train_data, val = blobs
        for seed, (net, _) in trained_large.items():
            _, report = build_lr_network(net, (1, 3, 4, 3, 1), None,
                                         TrainConfig("adam", 1e-3, 32, 20, seed), train_data, val)
            assert report.recovered_fraction() >= 0.9, seed

    def test_capacity_monotone_in_rank(self, blobs, trained_large):
        train_data, _ = blobs
        ft = TrainConfig("adam", 1e-3, 32, 5, 0)
        means = []
        for r in (1, 2, 3, 4):
            losses = []
            for seed, (net, _) in trained_large.items():
                _, report = build_lr_network(net, (1, r, r, r, 1), None, ft, train_data)
                losses.append(report.metrics_after["train_loss"])
            means.append(float(np.mean(losses)))
        assert all(b <= a * 1.01 for a, b in zip(means, means[1:])), means
