"""Acceptance criteria 1-9, each printing one PASS/FAIL line with its runtime.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines
interleaved with the test names.
"""
import json
import time

import numpy as np
import pytest

from conftest import rel_err
from lrtt.cli import main
from lrtt.experiments import SMALL_RANKS, load_blobs, run_blob_seed
from lrtt.io import decode, encode, sha256_file
from lrtt.nn import Architecture, build_network, dense_spec, loss_and_gradients, tt_spec
from lrtt.pipeline import compress_network, write_csv
from lrtt.retraction import retract_literal, retract_orthogonal
from lrtt.rgd import (RgdConfig, check_gradient_dominated, check_theorem1_bounds, rgd_compress,
                      unsquared_dominance)
from lrtt.tt import (TTMatrix, TTVector, dense_param_count, param_count, random_tt,
                     random_tt_matrix, sum_of_indices_tt, tt_element, tt_full, tt_svd)

BLOB_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture
def report(capsys):
    """Return ``emit(criterion, ok, runtime, detail)`` that prints past capture."""
    def emit(n, ok, runtime, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} ({runtime:.2f} s) {detail}")
    return emit


def timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


# -- 1 ----------------------------------------------------------------------

def test_criterion_1_analytic_fixture(report):
    def run():
        w = sum_of_indices_tt((4, 4, 4))
        idx = np.indices((4, 4, 4))
        target = idx.sum(axis=0).astype(float)
        elem = max(abs(tt_element(w, i) - target[i]) for i in np.ndindex(4, 4, 4))
        full = float(np.max(np.abs(tt_full(w) - target)))
        svd = tt_svd(target, (1, 2, 2, 1))
        return max(elem, full), rel_err(tt_full(svd), target), svd.ranks

    (abs_err, svd_err, ranks), t = timed(run)
    ok = abs_err <= 1e-12 and svd_err <= 1e-10 and ranks == (1, 2, 2, 1) and t < 1.0
    report(1, ok, t, f"core abs err {abs_err:.1e}, tt_svd rel err {svd_err:.1e}")
    assert ok


# -- 2 ----------------------------------------------------------------------

def test_criterion_2_parameter_counts(report):
    def run():
        f = (8, 4, 8, 8)
        big = random_tt_matrix(f, f, (1, 12, 12, 12, 1), np.random.default_rng(0))
        small = random_tt_matrix(f, f, (1, 3, 4, 3, 1), np.random.default_rng(0))
        return param_count(big), param_count(small), dense_param_count(big)

    (n_big, n_small, n_dense), t = timed(run)
    r_big, r_small = n_dense / n_big, n_dense / n_small
    ok = ((n_big, n_small, n_dense) == (13056, 1344, 4194304)
          and f"{r_big:.1f}" == "321.3" and f"{r_small:.1f}" == "3120.8" and t < 1.0)
    report(2, ok, t, f"{n_big} / {n_small} params, dense {n_dense}, "
                     f"ratios {r_big:.1f}x / {r_small:.1f}x")
    assert ok


# -- 3 ----------------------------------------------------------------------

def test_criterion_3_retraction_contract(report):
    def run():
        worst_ratio = worst_exact = 0.0
        literal_ratios = []
        rank_ok = True
        for seed in range(200):
            rng = np.random.default_rng(seed)
            k = int(rng.integers(3, 5))
            shape = tuple(int(n) for n in rng.integers(2, 5, k))
            ranks = (1, *(int(r) for r in rng.integers(2, 6, k - 1)), 1)
            w = random_tt(shape, ranks, rng)
            cap = int(rng.integers(1, 4))
            out, rep = retract_orthogonal(w, cap)
            rank_ok &= all(r <= cap for r in out.ranks[1:-1])
            err = float(np.linalg.norm(tt_full(out) - tt_full(w)))
            if rep.error_bound > 0:
                worst_ratio = max(worst_ratio, err / rep.error_bound)
            elif err > 1e-12 * np.linalg.norm(tt_full(w)):
                worst_ratio = np.inf
            lit, _ = retract_literal(w, cap)
            rank_ok &= all(r <= cap for r in lit.ranks[1:-1])
            if err > 1e-8 * np.linalg.norm(tt_full(w)):
                literal_ratios.append(float(np.linalg.norm(tt_full(lit) - tt_full(w))) / err)
            # exactly low rank: a rank-cap train padded with zero-energy directions
            low = random_tt(shape, (1, *[cap] * (k - 1), 1), rng)
            padded = TTVector(tuple(np.pad(c, ((0, 0), (0, 2 * (i > 0)), (0, 2 * (i < k - 1))))
                                    for i, c in enumerate(low.cores)))
            back, _ = retract_orthogonal(padded, cap)
            worst_exact = max(worst_exact, rel_err(tt_full(back), tt_full(low)))
        return rank_ok, worst_ratio, worst_exact, literal_ratios

    (rank_ok, ratio, exact, lit), t = timed(run)
    ok = rank_ok and ratio <= 1.0001 and exact <= 1e-10 and t < 30
    report(3, ok, t, f"ranks ok {rank_ok}, max error/bound {ratio:.6f}, exact recovery "
                     f"{exact:.1e}; literal/orthogonal error ratio median {np.median(lit):.3f}, "
                     f"max {max(lit):.1f} (informational)")
    assert ok


# -- 4 ----------------------------------------------------------------------

def _problem(seed):
    rng = np.random.default_rng(seed)
    return random_tt((4, 5, 4), (1, 4, 4, 1), rng), (1, 2, 2, 1)


def _mixed_problem(seed):
    # varied shapes and targets including rank one; used for the informational count
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(3, 6, 3))
    w_ref = random_tt(shape, (1, 4, 4, 1), rng)
    return w_ref, (1, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 1)


def test_criterion_4_descent_bounds(report):
    def run():
        worst = {}
        monotone = True
        for eta in (0.1, 0.5, 1.0, 1.5):
            slack = np.inf
            for seed in range(100):
                w_ref, target = _problem(seed)
                _, trace = rgd_compress(w_ref, RgdConfig(target, eta, 20, 1.0, stop_tol=0.0))
                rep = check_theorem1_bounds(trace, 1.0, eta, 0.0)
                slack = min(slack, rep.max_grad_slack, rep.min_grad_slack)
                if eta == 1.0:
                    seq = trace.losses + [trace.final_loss]
                    monotone &= all(b <= a + 1e-12 * max(1.0, a) for a, b in zip(seq, seq[1:]))
            worst[eta] = slack
        return worst, monotone

    def run_mixed():
        mixed = {}
        for eta in (1.0, 1.5):
            mixed[eta] = 0
            for seed in range(100):
                w_ref, target = _mixed_problem(seed)
                _, trace = rgd_compress(w_ref, RgdConfig(target, eta, 20, 1.0, stop_tol=0.0))
                mixed[eta] += not check_theorem1_bounds(trace, 1.0, eta, 0.0).all_ok
        return mixed

    (worst, monotone), t = timed(run)
    mixed = run_mixed()
    ok = all(s >= -1e-9 for s in worst.values()) and monotone and t < 60
    detail = ", ".join(f"eta={e}: min slack {s:.2e}" for e, s in worst.items())
    report(4, ok, t, f"riemannian gradient, L*=0, target (1,2,2,1); {detail}; eta=1 "
                     f"non-increasing {monotone}; mixed-target family violating traces "
                     f"(informational): {mixed}")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_gradient_dominance(report):
    def run():
        slack = np.inf
        chain = squared = 0
        for seed in range(100):
            w_ref, target = _mixed_problem(1000 + seed)
            w_hat, trace = rgd_compress(w_ref, RgdConfig(target, 0.5, 5, 1.0, stop_tol=0.0))
            slack = min(slack, check_gradient_dominated(trace, 0.5, 0.0).dominated_slack)
            u = unsquared_dominance(w_ref, w_hat)
            chain += u["chain_ok"]
            squared += u["squared_ok"]
        return slack, chain, squared

    (slack, chain, squared), t = timed(run)
    ok = slack >= -1e-9 and t < 10
    report(5, ok, t, f"tau=1/2 min slack {slack:.2e}; unsquared loss, tau=1: chain reading holds "
                     f"{chain}/100, squared-gradient reading holds {squared}/100")
    assert ok


# -- 6 ----------------------------------------------------------------------

def test_criterion_6_gradients(report):
    def run():
        arch = Architecture((tt_spec((2, 3), (3, 2)), tt_spec((3, 2), (2, 2)),
                             dense_spec(4, 3, "identity")))
        net = build_network(arch, (1, 2, 1), 0)
        rng = np.random.default_rng(1)
        for layer in net.layers:
            layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
        x, y = rng.normal(size=(8, 6)), rng.integers(0, 3, 8)
        _, grads = loss_and_gradients(net, x, y)
        worst = {}
        for name, p, g in zip(net.parameter_names(), net.parameters(), grads):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                h = 1e-6 * max(1.0, abs(orig))
                p[idx] = orig + h
                plus, _ = loss_and_gradients(net, x, y)
                p[idx] = orig - h
                minus, _ = loss_and_gradients(net, x, y)
                p[idx] = orig
                num[idx] = (plus - minus) / (2 * h)
            worst[name] = rel_err(g, num)
        return worst

    worst, t = timed(run)
    top = max(worst.values())
    ok = top <= 1e-5 and t < 30
    report(6, ok, t, f"{len(worst)} parameter arrays, max rel err {top:.1e}")
    assert ok


# -- 7 and 8 ----------------------------------------------------------------

@pytest.fixture(scope="module")
def blob_runs():
    train_data, val = load_blobs()
    start = time.perf_counter()
    runs = {seed: run_blob_seed(seed, train_data, val) for seed in BLOB_SEEDS}
    return runs, time.perf_counter() - start


def test_criterion_7_pipeline(report, blob_runs):
    runs, t = blob_runs
    fit = [r.pretrain_history[-1].train_accuracy for r in runs.values()]
    recovered = [r.lr_report.recovered_fraction() for r in runs.values()]
    wins = sum(r.lr_history[-1].val_accuracy >= r.random_history[-1].val_accuracy
               for r in runs.values())
    same_budget = all(r.lr_params == r.random_params for r in runs.values())
    ok = (min(fit) >= 0.95 and min(recovered) >= 0.9 and wins >= 4 and same_budget and t < 300)
    rows = "; ".join(
        f"seed {s}: large {r.pretrain_history[-1].train_accuracy:.3f}, truncated "
        f"{r.lr_report.metrics_truncated['train_accuracy']:.3f}, fine-tuned "
        f"{r.lr_report.metrics_after['train_accuracy']:.3f}, val lr/random "
        f"{r.lr_history[-1].val_accuracy:.3f}/{r.random_history[-1].val_accuracy:.3f}"
        for s, r in runs.items())
    report(7, ok, t, f"(a) min train acc {min(fit):.3f} (b) min recovered {min(recovered):.3f} "
                     f"(c) lr >= random in {wins}/5 seeds; {rows}")
    assert ok


def _iterations_to_one_percent(trace) -> int:
    final = trace.final_loss
    for i, loss in enumerate(trace.losses + [final]):
        if abs(loss - final) <= 0.01 * abs(final):
            return i
    return len(trace.losses)


def test_criterion_8_rgd_convergence(report, blob_runs):
    runs, _ = blob_runs
    start = time.perf_counter()
    configured = [_iterations_to_one_percent(tr) for r in runs.values()
                  for tr in r.lr_report.traces.values()]
    # the configured unit step stops at its fixed point after one iteration,
    # so rerun the same layer problems with a half step for 40 iterations
    half = []
    for r in runs.values():
        _, traces = compress_network(r.large_net, SMALL_RANKS,
                                     RgdConfig(SMALL_RANKS, 0.5, 40, 1.0, 0.0))
        half += [_iterations_to_one_percent(tr) for tr in traces.values()]
    t = time.perf_counter() - start
    ok = max(configured) <= 10 and max(half) <= 10
    report(8, ok, t, f"iterations to within 1% of final loss: eta=1 max {max(configured)}, "
                     f"eta=0.5 max {max(half)} (per layer {half})")
    assert ok


# -- 9 ----------------------------------------------------------------------

def _random_payload(rng):
    kind = rng.integers(4)
    if kind == 0:
        a = rng.normal(size=tuple(rng.integers(1, 5, rng.integers(1, 4))))
        a.ravel()[rng.integers(a.size)] = rng.choice([np.nan, np.inf, -0.0, 5e-324])
        return a
    if kind == 1:
        return random_tt(tuple(rng.integers(1, 5, 3)), (1, 2, 3, 1), rng)
    if kind == 2:
        return random_tt_matrix((2, 3), (3, 2), (1, 2, 1), rng)
    arch = Architecture((tt_spec((2, 2), (2, 2)), dense_spec(4, 2, "identity")))
    return build_network(arch, (1, 2, 1), int(rng.integers(1000)))


def _arrays(obj):
    if isinstance(obj, (TTVector, TTMatrix)):
        return list(obj.cores)
    if isinstance(obj, np.ndarray):
        return [obj]
    return obj.parameters()


def test_criterion_9_serialization_and_replay(report, tmp_path, monkeypatch):
    def run():
        rng = np.random.default_rng(9)
        exact = 0
        for _ in range(100):
            obj = _random_payload(rng)
            back = decode(encode(obj))
            exact += all(a.shape == b.shape and a.tobytes() == b.tobytes()
                         for a, b in zip(_arrays(obj), _arrays(back)))
        monkeypatch.chdir(tmp_path)
        train_data, val = load_blobs()
        write_csv(train_data.subset(np.arange(120)), tmp_path / "train.csv")
        write_csv(val.subset(np.arange(40)), tmp_path / "val.csv")
        (tmp_path / "net.toml").write_text(
            'factors = [4, 4, 4, 4]\nranks = [1, 6, 6, 6, 1]\noptimizer = "adam"\nlr = 0.001\n'
            'epochs = 2\nbatch = 32\nseed = 3\n[[layers]]\nkind = "tt"\n'
            '[[layers]]\nkind = "dense"\nin = 256\nout = 4\nactivation = "identity"\n')
        codes = [main(["train", "--config", "net.toml", "--data", "train.csv", "--val", "val.csv",
                       "-o", "large.ttrz"]),
                 main(["build-lr", "large.ttrz", "--config", "net.toml", "--data", "train.csv",
                       "--val", "val.csv", "--target-ranks", "1,3,4,3,1", "-o", "small.ttrz"])]
        digests = {p: sha256_file(p) for p in ("large.ttrz", "small.ttrz")}
        codes += [main(["replay", "large.ttrz.manifest.json"]),
                  main(["replay", "small.ttrz.manifest.json"])]
        recorded = json.loads((tmp_path / "small.ttrz.manifest.json").read_text())["outputs"]
        identical = all(sha256_file(p) == digests[p] for p in digests) and \
            recorded["small.ttrz"] == digests["small.ttrz"]
        return exact, codes, identical

    (exact, codes, identical), t = timed(run)
    ok = exact == 100 and codes == [0, 0, 0, 0] and identical and t < 30
    report(9, ok, t, f"bit-exact round trips {exact}/100, exit codes {codes}, "
                     f"replay byte-identical {identical}")
    assert ok
