"""Regenerate the committed 4-class Gaussian-blob dataset in data/."""
import argparse
from pathlib import Path

from lrtt.pipeline import make_blobs, train_val_split, write_csv

ROOT = Path(__file__).resolve().parent.parent

# dataset parameters used by the pipeline experiments and the acceptance tests
BLOBS = dict(n_per_class=150, dim=256, n_classes=4, spread=3.0, separation=1.0, seed=100)
VAL_FRACTION = 1 / 3
SPLIT_SEED = 0


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=ROOT / "data")
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    train, val = train_val_split(make_blobs(**BLOBS), VAL_FRACTION, SPLIT_SEED)
    write_csv(train, args.out_dir / "blobs_train.csv")
    write_csv(val, args.out_dir / "blobs_val.csv")
    print(f"train: {len(train)} rows, val: {len(val)} rows -> {args.out_dir}")


if __name__ == "__main__":
    main()
