"""Command-line interface: ``lrtt <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or corrupt
container, 4 numerical failure, 5 a checked inequality (or a replay
comparison) failed. Errors print one ``lrtt: error: ...`` line on stderr.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError, ContainerError, LrttError, NumericalFailure
from .io import (RunManifest, atomic_write_text, read_container, read_meta, sha256_file,
                 write_container)
from .nn import (Architecture, Network, TrainConfig, TTLayer, build_network, dense_spec, evaluate,
                 train, tt_spec)
from .pipeline import build_lr_network, read_csv
from .retraction import retract_literal, retract_orthogonal
from .rgd import (RgdConfig, check_gradient_dominated, check_theorem1_bounds, rgd_compress)
from .tensor import frobenius_norm
from .tt import (TTMatrix, TTVector, check_factorization, check_ranks, dense_param_count, fuse,
                 param_count, tt_add, tt_full, tt_matrix_from_dense, tt_matrix_full, tt_norm,
                 tt_scale, tt_svd)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4, 5
CONFIG_KEYS = {"layers", "ranks", "factors", "optimizer", "lr", "epochs", "batch", "seed", "loss",
               "freeze_non_tt"}
LAYER_KEYS = {"kind", "activation", "factors", "in_factors", "out_factors", "in", "out"}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty integer list")
    return vals


def _fmt_ranks(ranks) -> str:
    return ",".join(str(r) for r in ranks)


def _sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.name + suffix)


def _with_mode(path, mode: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.{mode}{path.suffix}")


def _tt_diff_norm(a, b) -> float:
    if isinstance(a, TTMatrix):
        a, b = fuse(a), fuse(b)
    return tt_norm(tt_add(a, tt_scale(b, -1.0)))


def _read_tt(path):
    obj = read_container(path)
    if not isinstance(obj, (TTVector, TTMatrix)):
        raise ConfigError(f"{path} holds a {type(obj).__name__}, expected a TT container")
    return obj


def _read_network(path) -> Network:
    obj = read_container(path)
    if not isinstance(obj, Network):
        raise ConfigError(f"{path} does not hold a network")
    return obj


def _read_data(path):
    try:
        return read_csv(path)
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror or exc}") from exc


# -- config -----------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _merged(cfg: dict, args) -> dict:
    """File values overridden by any flag the user actually passed."""
    out = dict(cfg)
    for key in ("optimizer", "lr", "epochs", "batch", "seed", "loss"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "ranks", None) is not None:
        out["ranks"] = list(args.ranks)
    if getattr(args, "freeze_non_tt", False):
        out["freeze_non_tt"] = True
    return out


def train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(optimizer=cfg.get("optimizer", "sgd"),
                     learning_rate=float(cfg.get("lr", 0.01)),
                     batch_size=int(cfg.get("batch", 32)),
                     epochs=int(cfg.get("epochs", 10)),
                     seed=int(cfg.get("seed", 0)),
                     freeze_non_tt=bool(cfg.get("freeze_non_tt", False)))
    tc.validate()
    return tc


def architecture(cfg: dict) -> Architecture:
    if "layers" not in cfg:
        raise ConfigError("config needs a [[layers]] list")
    default = cfg.get("factors")
    specs = []
    for n, layer in enumerate(cfg["layers"]):
        unknown = set(layer) - LAYER_KEYS
        if unknown:
            raise ConfigError(f"layer {n}: unknown keys: {', '.join(sorted(unknown))}")
        kind = layer.get("kind", "tt")
        act = layer.get("activation", "relu")
        if kind == "tt":
            in_f = layer.get("in_factors", layer.get("factors", default))
            out_f = layer.get("out_factors", layer.get("factors", default))
            if in_f is None or out_f is None:
                raise ConfigError(f"layer {n}: TT layers need in_factors/out_factors or factors")
            if len(in_f) != len(out_f):
                raise ConfigError(f"layer {n}: factorizations have different lengths")
            specs.append(tt_spec(in_f, out_f, act))
        elif kind == "dense":
            specs.append(dense_spec(layer["in"], layer["out"], act))
        else:
            raise ConfigError(f"layer {n}: unknown kind {kind!r}")
    return Architecture(tuple(specs), cfg.get("loss", "cross_entropy"))


# -- commands ---------------------------------------------------------------

def cmd_decompose(args) -> dict:
    a = read_container(args.input)
    if not isinstance(a, np.ndarray):
        raise ConfigError(f"{args.input} is not a dense container")
    cap = args.ranks if args.ranks is not None else args.max_rank
    if args.in_factors or args.out_factors:
        if not (args.in_factors and args.out_factors):
            raise ConfigError("give both --in-factors and --out-factors")
        if a.ndim != 2:
            raise ConfigError(f"matrix decomposition needs a 2-D input, got shape {a.shape}")
        check_factorization(args.in_factors, a.shape[1])
        check_factorization(args.out_factors, a.shape[0])
        w = tt_matrix_from_dense(a, args.in_factors, args.out_factors, cap)
        err = frobenius_norm(tt_matrix_full(w) - a)
        dense_count = dense_param_count(w)
    else:
        w = tt_svd(a, cap)
        err = frobenius_norm(tt_full(w) - a)
        dense_count = a.size
    write_container(args.output, w)
    norm = frobenius_norm(a)
    n = param_count(w)
    print(f"kind: {'tt_matrix' if isinstance(w, TTMatrix) else 'tt_vector'}")
    print(f"ranks: {_fmt_ranks(w.ranks)}")
    print(f"params before: {dense_count}")
    print(f"params: {n}")
    print(f"compression ratio: {dense_count / n:.1f}x")
    print(f"reconstruction error: {err:.6e} (relative {err / norm if norm else 0.0:.6e})")
    return {"outputs": [args.output]}


def _round_one(w, args, mode: str):
    if mode == "literal":
        r_max = args.max_rank if args.max_rank is not None else max(args.ranks)
        return retract_literal(w, r_max)
    return retract_orthogonal(w, args.ranks if args.ranks is not None else args.max_rank)


def cmd_round(args) -> dict:
    w = _read_tt(args.input)
    if args.ranks is not None:
        check_ranks(args.ranks, w.order)
    modes = ("orthogonal", "literal") if args.mode == "both" else (args.mode,)
    outputs = []
    errors = {}
    print(f"input ranks: {_fmt_ranks(w.ranks)}")
    for mode in modes:
        out, report = _round_one(w, args, mode)
        path = args.output if len(modes) == 1 else _with_mode(args.output, mode)
        write_container(path, out)
        outputs.append(str(path))
        errors[mode] = _tt_diff_norm(w, out)
        print(f"[{mode}] output ranks: {_fmt_ranks(report.output_ranks)}")
        for k, e in enumerate(report.per_core_discarded_energy):
            print(f"[{mode}] core {k}: discarded energy {e:.6e}")
        print(f"[{mode}] error bound: {report.error_bound:.6e}")
        print(f"[{mode}] actual error: {errors[mode]:.6e}")
        print(f"[{mode}] written: {path}")
    if len(modes) == 2:
        print(f"literal/orthogonal error ratio: "
              f"{errors['literal'] / errors['orthogonal'] if errors['orthogonal'] else float('nan'):.6g}")
    return {"outputs": outputs}


def cmd_compress(args) -> dict:
    w = _read_tt(args.input)
    target = args.target_ranks if len(args.target_ranks) > 1 else args.target_ranks[0]
    cfg = RgdConfig(target, args.eta, args.steps, args.smoothness, args.stop_tol)
    cfg.validate(args.smoothness)
    out, trace = rgd_compress(w, cfg)
    trace_path = args.trace or _sibling(args.output, ".trace")
    write_container(args.output, out)
    atomic_write_text(trace_path, "\n".join(trace.to_lines()) + "\n")
    print(f"ranks: {_fmt_ranks(w.ranks)} -> {_fmt_ranks(out.ranks)}")
    print(f"steps: {len(trace)}")
    print(f"final loss: {trace.final_loss!r}")
    print(f"params: {param_count(w)} -> {param_count(out)}")
    print(f"trace: {trace_path}")
    ok = True
    if args.check_bounds:
        reports = [check_theorem1_bounds(trace, args.smoothness, args.eta, 0.0),
                   check_gradient_dominated(trace, 0.5, 0.0, h=args.smoothness, eta=args.eta)]
        for rep in reports:
            for line in rep.lines():
                print(line)
        ok = all(rep.all_ok for rep in reports)
    result = {"outputs": [args.output, str(trace_path)]}
    if not ok:
        result["check_failed"] = "a convergence inequality was violated"
    return result


def _history_text(history) -> str:
    return "".join(rec.line() + "\n" for rec in history)


def _print_metrics(prefix: str, metrics: dict) -> None:
    for key in sorted(metrics):
        print(f"{prefix}{key}={metrics[key]!r}")


def cmd_train(args) -> dict:
    cfg = _merged(load_config(args.config), args)
    tc = train_config(cfg)
    data = _read_data(args.data)
    val = _read_data(args.val) if args.val else None
    if args.init:
        net = _read_network(args.init)
    else:
        if "ranks" not in cfg:
            raise ConfigError("config needs ranks (or pass --ranks)")
        net = build_network(architecture(cfg), cfg["ranks"], tc.seed)
    trained, history = train(net, data, tc, val)
    trace_path = args.trace or _sibling(args.output, ".trace")
    write_container(args.output, trained)
    atomic_write_text(trace_path, _history_text(history))
    print(f"params: {trained.n_params()}")
    if history:
        print(history[-1].line())
    print(f"trace: {trace_path}")
    return {"outputs": [args.output, str(trace_path)], "config": cfg}


def cmd_build_lr(args) -> dict:
    cfg = _merged(load_config(args.config), args)
    tc = train_config(cfg)
    net = _read_network(args.model)
    data = _read_data(args.data)
    val = _read_data(args.val) if args.val else None
    rgd = RgdConfig(args.target_ranks, args.eta, args.steps, 1.0, args.stop_tol)
    rgd.validate(1.0)
    lr_net, report = build_lr_network(net, args.target_ranks, rgd, tc, data, val)
    write_container(args.output, lr_net)
    outputs = [args.output]
    for n, trace in report.traces.items():
        path = _sibling(args.output, f".layer{n}.trace")
        atomic_write_text(path, "\n".join(trace.to_lines()) + "\n")
        outputs.append(str(path))
        print(f"layer {n}: params {report.params_before[n]} -> {report.params_after[n]}, "
              f"rgd steps {len(trace)}, final loss {trace.final_loss!r}")
    hist_path = _sibling(args.output, ".trace")
    atomic_write_text(hist_path, _history_text(report.history))
    outputs.append(str(hist_path))
    _print_metrics("before: ", report.metrics_before)
    _print_metrics("truncated: ", report.metrics_truncated)
    _print_metrics("after: ", report.metrics_after)
    return {"outputs": outputs, "config": cfg}


def cmd_evaluate(args) -> dict:
    net = _read_network(args.model)
    data = _read_data(args.data)
    m = evaluate(net, data)
    print(f"loss={m['loss']!r}")
    if "accuracy" in m:
        print(f"accuracy={m['accuracy']!r}")
    return {}


def cmd_info(args) -> dict:
    meta = read_meta(args.input)
    obj = read_container(args.input)
    size = os.path.getsize(args.input)
    kind = meta["kind"]
    print(f"kind: {kind}")
    if kind == "dense":
        print(f"shape: {'x'.join(map(str, obj.shape))}")
        print(f"elements: {obj.size}")
    elif kind == "tt_vector":
        print(f"shape: {'x'.join(map(str, obj.shape))}")
        print(f"ranks: {_fmt_ranks(obj.ranks)}")
        print(f"params: {param_count(obj)}")
    elif kind == "tt_matrix":
        print(f"in factors: {'x'.join(map(str, obj.in_shape))}")
        print(f"out factors: {'x'.join(map(str, obj.out_shape))}")
        print(f"ranks: {_fmt_ranks(obj.ranks)}")
        print(f"params: {param_count(obj)}")
        print(f"dense params: {dense_param_count(obj)}")
    else:
        print(f"loss: {obj.loss_kind}")
        for n, layer in enumerate(obj.layers):
            if isinstance(layer, TTLayer):
                w = layer.weight
                print(f"layer {n}: tt {'x'.join(map(str, w.in_shape))} -> "
                      f"{'x'.join(map(str, w.out_shape))} ranks {_fmt_ranks(w.ranks)} "
                      f"params {layer.n_params()} activation {layer.activation}")
            else:
                print(f"layer {n}: dense {layer.in_dim} -> {layer.out_dim} "
                      f"params {layer.n_params()} activation {layer.activation}")
        print(f"params: {obj.n_params()}")
    print(f"file size: {size}")
    return {}


@contextmanager
def _cwd(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def cmd_replay(args) -> dict:
    try:
        text = Path(args.manifest).read_text(encoding="utf-8")
    except OSError as exc:
        raise ContainerError(f"cannot read {args.manifest}: {exc.strerror or exc}") from exc
    try:
        man = RunManifest.from_json(text)
    except (ValueError, TypeError) as exc:
        raise ContainerError(f"corrupt manifest: {exc}") from exc
    cwd = man.config.get("cwd", os.getcwd())
    with _cwd(cwd):
        code = main(list(man.command))
        if code != EXIT_OK:
            return {"check_failed": f"replayed command exited with {code}"}
        mismatched = [p for p, digest in man.outputs.items() if sha256_file(p) != digest]
    for p in man.outputs:
        print(f"{'MISMATCH' if p in mismatched else 'identical'}: {p}")
    if mismatched:
        return {"check_failed": f"{len(mismatched)} output(s) differ from the manifest"}
    return {}


# -- parser -----------------------------------------------------------------

def _rank_args(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--ranks", type=int_list, help="full rank profile, e.g. 1,12,12,12,1")
    g.add_argument("--max-rank", type=int, help="uniform cap on interior ranks")


def _train_args(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--val", help="validation CSV")
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--freeze-non-tt", action="store_true",
                   help="only update TT cores during training")
    p.add_argument("-o", "--output", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrtt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="dense container -> TT container")
    p.add_argument("input")
    p.add_argument("--in-factors", type=int_list)
    p.add_argument("--out-factors", type=int_list)
    _rank_args(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decompose, produces=True)

    p = sub.add_parser("round", help="reduce the ranks of a TT container")
    p.add_argument("input")
    _rank_args(p)
    p.add_argument("--mode", choices=("orthogonal", "literal", "both"), default="orthogonal")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_round, produces=True)

    p = sub.add_parser("compress", help="Riemannian gradient descent rank reduction")
    p.add_argument("input")
    p.add_argument("--target-ranks", type=int_list, required=True)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--smoothness", type=float, default=1.0)
    p.add_argument("--stop-tol", type=float)
    p.add_argument("--check-bounds", action="store_true")
    p.add_argument("--trace")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_compress, produces=True)

    p = sub.add_parser("train", help="train a network from a config or an initial model")
    _train_args(p)
    p.add_argument("--init", help="start from this network container")
    p.add_argument("--ranks", type=int_list)
    p.add_argument("--loss", choices=("mae", "cross_entropy"))
    p.add_argument("--trace")
    p.set_defaults(func=cmd_train, produces=True)

    p = sub.add_parser("build-lr", help="compress every TT layer, then fine-tune")
    p.add_argument("model")
    _train_args(p)
    p.add_argument("--target-ranks", type=int_list, required=True)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--stop-tol", type=float)
    p.set_defaults(func=cmd_build_lr, produces=True)

    p = sub.add_parser("evaluate", help="loss (and accuracy) on a dataset")
    p.add_argument("model")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate, produces=False)

    p = sub.add_parser("info", help="describe a container")
    p.add_argument("input")
    p.set_defaults(func=cmd_info, produces=False)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay, produces=False)
    return parser


def _jsonable(args) -> dict:
    out = {}
    for key, val in vars(args).items():
        if key in ("func", "produces"):
            continue
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


def _run(args, argv) -> int:
    start = time.perf_counter()
    result = args.func(args) or {}
    if args.produces:
        config = _jsonable(args) | {"resolved": result.get("config", {}), "cwd": os.getcwd()}
        outputs = {str(p): sha256_file(p) for p in result.get("outputs", [])}
        man = RunManifest(command=list(argv), config=config,
                          seed=result.get("config", {}).get("seed", getattr(args, "seed", None)),
                          inputs=[str(v) for k, v in vars(args).items()
                                  if k in ("input", "model", "data", "val", "init", "config")
                                  and v is not None],
                          outputs=outputs, version=_version(),
                          wall_clock_s=time.perf_counter() - start)
        man.write(_sibling(args.output, ".manifest.json"))
    if "check_failed" in result:
        print(f"lrtt: check failed: {result['check_failed']}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _run(args, argv)
    except (ContainerError, OSError) as exc:
        msg = str(exc) if isinstance(exc, ContainerError) else f"{exc.strerror or exc}: {exc.filename}"
        print(f"lrtt: error: {msg}", file=sys.stderr)
        return EXIT_IO
    except NumericalFailure as exc:
        print(f"lrtt: error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LrttError, ValueError, KeyError, TypeError) as exc:
        print(f"lrtt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
