"""Acceptance suite.

Each test checks one release criterion at its stated tolerance and prints
one PASS/FAIL line (visible with ``pytest -s`` or in captured output).
Run with: ``pytest tests/test_acceptance.py -v -s``
"""

import contextlib
import json
import time

import numpy as np
import pytest

from synthetic import digit_like_dataset, two_moons_dataset, write_idx_pair

from confprop.cli import main as cli_main
from confprop.core import stratified_split
from confprop.harness import export_csv, load_dataset
from confprop.learner import MlpConfig, MlpLearner, gradient_check
from confprop.opf import PropagationGraph, brute_force_minimax, fit_propagate, per_class_cost_map
from confprop.pipeline import (
    LearnerConfig,
    LoopConfig,
    Regime,
    run_loop,
    select_confident,
    tau_for_iteration,
)
from confprop.tsne import (
    TsneParams,
    conditional_affinities,
    kl_divergence,
    kl_gradient,
    run_tsne,
    symmetrize,
)

from test_learner import as_labeled, blobs


@contextlib.contextmanager
def criterion(number, summary):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number} FAIL: {summary}")
        raise
    print(f"ACCEPTANCE {number} PASS: {summary}")


def oracle_instances(count, rng):
    """Random propagation graphs: n <= 40, 2-4 classes, uniform 2D points,
    at least one seed per class."""
    for _ in range(count):
        c = int(rng.integers(2, 5))
        n = int(rng.integers(c + 1, 41))
        points = rng.uniform(0.0, 1.0, size=(n, 2))
        n_seeds = int(rng.integers(c, max(c, n // 2) + 1))
        seed_idx = np.sort(rng.choice(n, size=n_seeds, replace=False))
        seed_labels = np.concatenate([np.arange(c), rng.integers(0, c, n_seeds - c)])
        rng.shuffle(seed_labels)
        yield PropagationGraph(
            points=points, seed_indices=seed_idx, seed_labels=seed_labels, c=c
        )


def test_criterion_1_oracle_equivalence():
    with criterion(1, "per-class cost maps and labels match the brute-force "
                      "minimax oracle bitwise on 200 random instances in < 10 s"):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        for graph in oracle_instances(200, rng):
            oracle = np.empty((graph.n, graph.c))
            for k in range(graph.c):
                seeds_k = graph.seed_indices[graph.seed_labels == k]
                oracle[:, k] = brute_force_minimax(graph.points, seeds_k)
                got = per_class_cost_map(graph, k)
                np.testing.assert_array_equal(got, oracle[:, k])
            forest = fit_propagate(graph)
            np.testing.assert_array_equal(forest.label, np.argmin(oracle, axis=1))
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"


def test_criterion_2_confidence_law():
    with criterion(2, "V in [0.5, 1]; V = 1 iff zero-cost win; V = 0.5 at "
                      "exact cross-class ties"):
        rng = np.random.default_rng(2024)
        for graph in oracle_instances(200, rng):
            forest = fit_propagate(graph)
            is_seed = np.zeros(graph.n, dtype=bool)
            is_seed[graph.seed_indices] = True
            v = forest.confidence[~is_seed]
            cost = forest.cost[~is_seed]
            rival = forest.rival_cost[~is_seed]
            assert np.all(v >= 0.5) and np.all(v <= 1.0)
            np.testing.assert_array_equal(v == 1.0, (cost == 0.0) & (rival > 0.0))
            np.testing.assert_array_equal(v == 0.5, cost == rival)

        # crafted exact cases: one free point on a seed, one at the midpoint
        pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 0.0], [5.0, 0.0]])
        forest = fit_propagate(
            PropagationGraph(
                points=pts,
                seed_indices=np.array([0, 1]),
                seed_labels=np.array([0, 1]),
                c=2,
            )
        )
        assert forest.confidence[2] == 1.0
        assert forest.confidence[3] == 0.5


def test_criterion_3_tsne_numerics():
    with criterion(3, "perplexity within 1e-3 per row; gradient matches "
                      "finite differences at 1e-4; KL decreases; < 30 s"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)

        # perplexity constraint on random Gaussian data, n=200, d=10
        x = rng.standard_normal((200, 10))
        cond, _ = conditional_affinities(x, TsneParams(perplexity=30.0))
        for i in range(200):
            row = cond[i][np.arange(200) != i]
            nz = row[row > 0]
            achieved = 2.0 ** float(-(nz * np.log2(nz)).sum())
            assert abs(achieved - 30.0) <= 1e-3

        # gradient vs central finite differences, n=10, 64-bit
        xs = rng.standard_normal((10, 4))
        cond_s, sig_s = conditional_affinities(xs, TsneParams(perplexity=3.0))
        aff = symmetrize(cond_s, sig_s)
        y = rng.standard_normal((10, 2))
        grad = kl_gradient(aff, y)
        h = 1e-6
        for i in range(10):
            for j in range(2):
                yp, ym = y.copy(), y.copy()
                yp[i, j] += h
                ym[i, j] -= h
                numeric = (kl_divergence(aff, yp) - kl_divergence(aff, ym)) / (2 * h)
                denom = max(abs(numeric) + abs(grad[i, j]), 1e-10)
                assert abs(numeric - grad[i, j]) / denom <= 1e-4

        # KL at the end below KL at the start on every seeded run
        data, _ = blobs(n=200, d=10, seed=1)
        for seed in (0, 1, 2):
            emb = run_tsne(data, TsneParams(perplexity=30.0, n_iter=1000, seed=seed))
            assert emb.kl_history[-1][1] < emb.kl_history[0][1]
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"t-SNE numerics took {elapsed:.1f}s"


def test_criterion_4_mlp_numerics():
    with criterion(4, "backprop matches finite differences at 1e-4; "
                      "row-stochastic predictions; blob accuracy >= 0.95"):
        rng = np.random.default_rng(11)
        for seed in (0, 1):
            cfg = MlpConfig(hidden_sizes=(5, 4), seed=seed)
            xt = rng.standard_normal((6, 3))
            yt = np.array([0, 1, 2, 0, 1, 2])
            assert gradient_check(cfg, xt, yt) <= 1e-4

        x, y = blobs(n=100, d=5)
        learner = MlpLearner(MlpConfig(seed=0)).fit(x, as_labeled(y))
        probs = learner.predict_proba(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert learner.config.epochs == 15
        assert learner.config.lr0 == 0.1
        assert learner.config.momentum == 0.9
        assert learner.config.lr_decay == 1e-6
        assert (np.argmax(probs, axis=1) == y).mean() >= 0.95


def test_criterion_5_split_protocol(tmp_path):
    with criterion(5, "5000-sample 10-class set at 1%/69%/30% gives "
                      "|S|=50, |U|=3450; disjoint cover; every class seeded"):
        ds5000 = digit_like_dataset(n=5000, seed=0)
        img = tmp_path / "digits-images-idx3-ubyte"
        lab = tmp_path / "digits-labels-idx1-ubyte"
        write_idx_pair(ds5000, img, lab)
        ds = load_dataset(str(img), "idx", limit=5000)
        assert ds.n == 5000 and ds.d == 784 and ds.c == 10
        split = stratified_split(ds, (0.01, 0.69, 0.30), seed=0)
        assert split.s_idx.size == 50
        assert split.u_idx.size == 3450
        assert split.t_idx.size == 1500
        split.validate(ds.n)
        s_classes = set(ds.labels[split.s_idx].tolist())
        assert s_classes == set(range(10))


def test_criterion_6_loop_semantics():
    with criterion(6, "deepfa coverage 1.0; selection monotone in tau; "
                      "tau=0.5 equals deepfa; adaptive schedule exact"):
        # full-propagation coverage on a small real loop
        ds = two_moons_dataset(n=240, seed=4)
        split = stratified_split(ds, (0.05, 0.65, 0.30), seed=0)
        cfg = LoopConfig(
            regime=Regime.DEEPFA,
            n_iterations=2,
            learner=LearnerConfig(kind="mlp", mlp=MlpConfig(hidden_sizes=(16, 8))),
            tsne=TsneParams(perplexity=15.0, n_iter=250),
        )
        reports = run_loop(cfg, ds, split)
        assert all(r.coverage == 1.0 for r in reports)

        # shared forest: monotone threshold effect and the tau=0.5 degeneracy
        rng = np.random.default_rng(3)
        graph = PropagationGraph(
            points=rng.uniform(0, 1, (40, 2)),
            seed_indices=np.arange(5),
            seed_labels=np.array([0, 1, 2, 0, 1]),
            c=3,
        )
        forest = fit_propagate(graph)
        u_idx = np.arange(5, 40)
        counts = [
            len(select_confident(forest, u_idx, tau))
            for tau in (0.5, 0.55, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
        ]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert select_confident(forest, u_idx, 0.5) == select_confident(
            forest, u_idx, 0.0
        )
        assert counts[0] == u_idx.size

        adaptive = LoopConfig(regime=Regime.CONF_ADAPTIVE, n_iterations=5)
        schedule = [tau_for_iteration(adaptive, i) for i in range(1, 6)]
        assert schedule == [0.80, 0.84, 0.88, 0.92, 0.96]


def _directional_runs(ds, hidden_sizes, seeds, tsne_iters=500):
    """Last-iteration kappas for conf-gated vs self-training, per seed."""
    conf_last, conf_first, conf_best, self_last = [], [], [], []
    for seed in seeds:
        split = stratified_split(ds, (0.01, 0.69, 0.30), seed=seed)
        for regime, tau, sink in (
            (Regime.CONF_FIXED, 0.8, None),
            (Regime.SELF_TRAINING, None, None),
        ):
            cfg = LoopConfig(
                regime=regime,
                tau=tau,
                n_iterations=5,
                seed=seed,
                learner=LearnerConfig(kind="mlp", mlp=MlpConfig(hidden_sizes=hidden_sizes)),
                tsne=TsneParams(perplexity=30.0, n_iter=tsne_iters),
            )
            t0 = time.perf_counter()
            reports = run_loop(cfg, ds, split)
            elapsed = time.perf_counter() - t0
            assert elapsed < 300.0, f"run took {elapsed:.0f}s, budget is 5 minutes"
            kappas = [r.kappa for r in reports]
            if regime is Regime.CONF_FIXED:
                conf_last.append(kappas[-1])
                conf_first.append(kappas[0])
                conf_best.append(max(kappas))
            else:
                self_last.append(kappas[-1])
    return conf_last, conf_first, conf_best, self_last


def test_criterion_7a_directional_moons():
    with criterion("7a", "two moons: mean kappa of conf-gating at tau=0.8 "
                         "beats self-training; best iteration >= iteration 1"):
        ds = two_moons_dataset(n=1000, seed=0)
        conf_last, conf_first, conf_best, self_last = _directional_runs(
            ds, hidden_sizes=(32, 16), seeds=(0, 1, 2)
        )
        assert np.mean(conf_last) > np.mean(self_last)
        for best, first in zip(conf_best, conf_first):
            assert best >= first


def test_criterion_7b_directional_digits():
    with criterion("7b", "digit-like pixels: mean kappa of conf-gating at "
                         "tau=0.8 beats self-training; best >= iteration 1"):
        ds = digit_like_dataset(n=2000, seed=0)
        conf_last, conf_first, conf_best, self_last = _directional_runs(
            ds, hidden_sizes=(256, 128), seeds=(0, 1, 2)
        )
        assert np.mean(conf_last) > np.mean(self_last)
        for best, first in zip(conf_best, conf_first):
            assert best >= first


def test_criterion_8_determinism(tmp_path):
    with criterion(8, "running the grid twice from one config produces "
                      "byte-identical result files"):
        ds = two_moons_dataset(n=120, seed=9)
        data_path = tmp_path / "moons.csv"
        export_csv(ds, str(data_path))
        cfg = {
            "dataset": {"path": str(data_path), "format": "csv"},
            "fractions": [0.05, 0.65, 0.30],
            "seeds": [0, 1],
            "regimes": [
                {
                    "name": "self",
                    "regime": "self_training",
                    "n_iterations": 2,
                    "learner": {"kind": "mlp", "hidden_sizes": [8, 4], "epochs": 5},
                },
                {
                    "name": "conf08",
                    "regime": "conf_fixed",
                    "tau": 0.8,
                    "n_iterations": 2,
                    "learner": {"kind": "mlp", "hidden_sizes": [8, 4], "epochs": 5},
                    "tsne": {"perplexity": 10.0, "n_iter": 250},
                },
            ],
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r1")]) == 0
        assert cli_main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r2")]) == 0
        for rel in (
            "records.jsonl",
            "aggregate.csv",
            "curves/self_kappa.csv",
            "curves/self_propagation_accuracy.csv",
            "curves/conf08_kappa.csv",
            "curves/conf08_propagation_accuracy.csv",
        ):
            b1 = (tmp_path / "r1" / rel).read_bytes()
            b2 = (tmp_path / "r2" / rel).read_bytes()
            assert b1 == b2, f"{rel} differs between reruns"
