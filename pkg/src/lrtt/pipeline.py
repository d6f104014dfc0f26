"""Dense -> TT -> low-rank TT conversion pipeline and its datasets."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .nn import (Architecture, Dataset, EpochRecord, Network, TrainConfig, TTLayer, build_network,
                 evaluate, train)
from .rgd import RgdConfig, rgd_compress
from .tt import check_ranks, param_count


# -- datasets ---------------------------------------------------------------

def make_blobs(n_per_class: int, dim: int, n_classes: int, *, spread: float = 1.0,
               separation: float = 1.0, seed: int = 0) -> Dataset:
    """Gaussian clusters with random unit-norm centres scaled by ``separation``."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_classes, dim))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    x = np.concatenate([c + spread / np.sqrt(dim) * rng.normal(size=(n_per_class, dim))
                        for c in centres])
    y = np.repeat(np.arange(n_classes), n_per_class)
    order = rng.permutation(len(y))
    return Dataset(x[order], y[order], "classification")


def write_csv(data: Dataset, path) -> None:
    d = data.x.shape[1]
    if data.kind == "classification":
        header = [f"x{i}" for i in range(d)] + ["label"]
        rows = ([repr(float(v)) for v in xi] + [str(int(yi))] for xi, yi in zip(data.x, data.y))
    else:
        header = [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(data.y.shape[1])]
        rows = ([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi]
                for xi, yi in zip(data.x, data.y))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path) -> Dataset:
    """Load ``x0..xn,label`` (classification) or ``x0..xn,y0..ym`` (regression)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ShapeMismatch(f"{path}: empty CSV") from None
        rows = [r for r in reader if r]
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    if not xs:
        raise ShapeMismatch(f"{path}: no x columns in header")
    table = np.array(rows, dtype=object) if rows else None
    if table is None:
        raise ShapeMismatch(f"{path}: no data rows")
    x = table[:, xs].astype(np.float64)
    if "label" in header:
        labels = table[:, header.index("label")].astype(np.float64)
        if not np.all(labels == np.round(labels)):
            raise ShapeMismatch(f"{path}: labels must be integers")
        return Dataset(x, labels.astype(np.int64), "classification")
    ys = [i for i, h in enumerate(header) if h.startswith("y")]
    if not ys:
        raise ShapeMismatch(f"{path}: need a label column or y columns")
    return Dataset(x, table[:, ys].astype(np.float64), "regression")


# -- low-rank conversion ----------------------------------------------------

@dataclass
class LrReport:
    traces: dict                 # layer index -> ConvergenceTrace
    params_before: dict          # layer index -> TT weight parameter count
    params_after: dict
    metrics_before: dict         # trained large-rank net
    metrics_truncated: dict      # after RGD, before fine-tuning
    metrics_after: dict          # after fine-tuning
    history: list = field(default_factory=list)

    def recovered_fraction(self, key: str = "train_accuracy") -> float:
        """Share of the truncation-induced drop won back by fine-tuning (1 if no drop)."""
        drop = self.metrics_before[key] - self.metrics_truncated[key]
        if drop <= 0:
            return 1.0
        return (self.metrics_after[key] - self.metrics_truncated[key]) / drop


def _metrics(net: Network, train_data: Dataset, val: Dataset | None) -> dict:
    out = {"train_" + k: v for k, v in evaluate(net, train_data).items()}
    if val is not None:
        out.update({"val_" + k: v for k, v in evaluate(net, val).items()})
    return out


def compress_network(net: Network, target_ranks, rgd_cfg: RgdConfig | None = None):
    """RGD-compress every TT layer independently; returns ``(net, traces)``."""
    base = rgd_cfg or RgdConfig(target_ranks)
    net = net.copy()
    traces = {}
    for n, layer in enumerate(net.layers):
        if not isinstance(layer, TTLayer):
            continue
        target = check_ranks(target_ranks, layer.weight.order)
        if any(t > r for t, r in zip(target, layer.weight.ranks)):
            raise ConfigError(f"layer {n}: target ranks {target} exceed {layer.weight.ranks}")
        w, trace = rgd_compress(layer.weight, replace(base, target_ranks=target))
        net.layers[n] = TTLayer(w, layer.bias.copy(), layer.activation)
        traces[n] = trace
    return net, traces


def build_lr_network(net: Network, target_ranks, rgd_cfg: RgdConfig | None,
                     fine_tune_cfg: TrainConfig | None, data: Dataset,
                     val: Dataset | None = None):
    """Compress every TT layer with RGD, then fine-tune the whole network.

    Returns ``(lr_net, LrReport)``. ``fine_tune_cfg=None`` skips fine-tuning.
    """
    before = _metrics(net, data, val)
    small, traces = compress_network(net, target_ranks, rgd_cfg)
    truncated = _metrics(small, data, val)
    history = []
    if fine_tune_cfg is not None:
        small, history = train(small, data, fine_tune_cfg, val)
    after = _metrics(small, data, val)
    report = LrReport(
        traces=traces,
        params_before={n: param_count(net.layers[n].weight) for n in traces},
        params_after={n: param_count(small.layers[n].weight) for n in traces},
        metrics_before=before,
        metrics_truncated=truncated,
        metrics_after=after,
        history=history,
    )
    return small, report


@dataclass
class InitComparison:
    random_history: list
    lr_history: list
    random_params: int
    lr_params: int
    pretrain_history: list
    lr_report: LrReport
    random_net: Network
    lr_net: Network
    large_net: Network           # the pretrained large-rank net the LR net came from

    @staticmethod
    def _final(history: list[EpochRecord], key: str):
        return getattr(history[-1], key) if history else None

    def summary(self) -> dict:
        out = {"random_params": self.random_params, "lr_params": self.lr_params}
        for name, hist in (("random", self.random_history), ("lr", self.lr_history)):
            accs = [r.val_accuracy for r in hist if r.val_accuracy is not None]
            out[f"{name}_final_val_accuracy"] = self._final(hist, "val_accuracy")
            out[f"{name}_best_val_accuracy"] = max(accs) if accs else None
            out[f"{name}_final_train_loss"] = self._final(hist, "train_loss")
        return out


def compare_init(arch: Architecture, large_ranks, small_ranks, data: Dataset,
                 cfg: TrainConfig, *, pretrain_cfg: TrainConfig | None = None,
                 rgd_cfg: RgdConfig | None = None, val: Dataset | None = None,
                 seed: int = 0) -> InitComparison:
    """Random-init small-rank net versus one derived from a trained large-rank net.

    Both small-rank nets are then trained with the same ``cfg`` budget.
    """
    random_net = build_network(arch, small_ranks, seed)
    random_trained, random_hist = train(random_net, data, cfg, val)

    large = build_network(arch, large_ranks, seed)
    pre_hist = []
    if pretrain_cfg is not None:
        large, pre_hist = train(large, data, pretrain_cfg, val)
    lr_net, report = build_lr_network(large, small_ranks, rgd_cfg, cfg, data, val)
    return InitComparison(random_hist, report.history, random_trained.n_params(),
                          lr_net.n_params(), pre_hist, report, random_trained, lr_net, large)


def train_val_split(data: Dataset, val_fraction: float, seed: int = 0):
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(data))
    n_val = max(1, int(round(val_fraction * len(data))))
    return data.subset(order[n_val:]), data.subset(order[:n_val])
