"""The desk-scale blob experiment shared by scripts and tests.

A 4-class Gaussian-blob task in 256 dimensions, two 256 -> 256 TT layers
with 4x4x4x4 modes and a dense softmax head. Large TT-ranks are
(1, 12, 12, 12, 1), small ones (1, 3, 4, 3, 1).
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .nn import Architecture, TrainConfig, dense_spec, tt_spec
from .pipeline import compare_init, read_csv
from .rgd import RgdConfig

DATA_DIR = Path(__file__).resolve().parents[2] / "data"
MODES = (4, 4, 4, 4)
LARGE_RANKS = (1, 12, 12, 12, 1)
SMALL_RANKS = (1, 3, 4, 3, 1)
BLOB_ARCH = Architecture((tt_spec(MODES, MODES), tt_spec(MODES, MODES),
                          dense_spec(256, 4, "identity")), "cross_entropy")
BLOB_TRAIN = TrainConfig("adam", 1e-3, 32, 20, 0)
BLOB_RGD = RgdConfig(SMALL_RANKS, eta=1.0, max_steps=10)


def load_blobs(data_dir: Path = DATA_DIR):
    return read_csv(data_dir / "blobs_train.csv"), read_csv(data_dir / "blobs_val.csv")


def run_blob_seed(seed: int, train_data=None, val=None, cfg: TrainConfig = BLOB_TRAIN):
    """Pretrain the large-rank net, derive the LR net and train a random-init twin."""
    if train_data is None:
        train_data, val = load_blobs()
    seeded = replace(cfg, seed=seed)
    return compare_init(BLOB_ARCH, LARGE_RANKS, SMALL_RANKS, train_data, seeded,
                        pretrain_cfg=seeded, rgd_cfg=BLOB_RGD, val=val, seed=seed)
