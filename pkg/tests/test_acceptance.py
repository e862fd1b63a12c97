"""Acceptance suite: one test per release criterion, stubs only.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion with its measured runtime.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import PAPER_BALANCED_COUNTS, PAPER_RAW_COUNTS, centroid_dataset, make_manifest
from scoutcv import cli
from scoutcv.dataset import (
    assign_folds,
    balance_truncate,
    class_histogram,
    save_manifest,
    split_kfold,
)
from scoutcv.evaluate import (
    ConfusionMatrix,
    SelectionPolicy,
    accuracy,
    cpq,
    cross_validate,
    report_from_confusion,
    select_best,
)
from scoutcv.features.extractors import HashStubExtractor
from scoutcv.head import HeadConfig, TrainConfig, init_head, train
from scoutcv.search import enumerate_configs, parse_space, run_experiments, write_ranking_csv
from test_eval import matrix_with
from test_head import analytic_gradient, numeric_gradient, random_differentiable_head


def _report(n: int, label: str, started: float) -> None:
    print(f"ACCEPTANCE {n:02d} [{label}]: PASS ({time.perf_counter() - started:.2f}s)")


TOL = 0.005 + 1e-12


def test_criterion_01_per_class_quality_arithmetic():
    started = time.perf_counter()
    cm = matrix_with({3: (10, 30)}, accuracy_trace=10, total=60)
    assert abs(cpq(cm, 3) - 33.33) <= TOL
    cm = matrix_with({4: (11, 32), 3: (7, 28)}, accuracy_trace=2677, total=10000)
    assert abs(cpq(cm, 4) - 34.38) <= TOL
    assert abs(cpq(cm, 3) - 25.00) <= TOL
    assert cm.column_sum(4) == 32 and cm.column_sum(3) == 28
    assert abs(accuracy(cm) - 26.77) <= TOL
    _report(1, "per-class quality arithmetic", started)


def test_criterion_02_metric_oracle_1000_matrices():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        cm = ConfusionMatrix(rng.integers(0, 101, size=(5, 5)))
        predicted = [0] * 5
        correct = [0] * 5
        trace = 0
        for t in range(5):
            for p in range(5):
                c = int(cm.counts[t, p])
                predicted[p] += c
                if t == p:
                    correct[p] += c
                    trace += c
        for c in range(5):
            value = cpq(cm, c)
            if predicted[c] == 0:
                assert value is None, "undefined must never be reported as zero"
            else:
                assert value == 100.0 * correct[c] / predicted[c]
        assert accuracy(cm) == 100.0 * trace / cm.total
    _report(2, "metric oracle over 1000 random matrices", started)


def test_criterion_03_balancing_reproduction():
    started = time.perf_counter()
    manifest = make_manifest(PAPER_RAW_COUNTS)
    assert class_histogram(manifest).total == 1669
    balanced = balance_truncate(manifest, PAPER_BALANCED_COUNTS, seed=0)
    hist = class_histogram(balanced)
    assert hist.counts == (300, 300, 300, 230, 140)
    assert hist.total == 1270
    _report(3, "published balancing reproduction", started)


def test_criterion_04_kfold_properties():
    started = time.perf_counter()
    rng = np.random.default_rng(77)
    for _ in range(200):
        n = int(rng.integers(2, 2001))
        k = int(rng.integers(2, min(n, 20) + 1))
        labels = rng.integers(0, 5, size=n)
        stratified = bool(rng.integers(2))
        folds = assign_folds(labels, k, seed=int(rng.integers(1e9)), stratified=stratified)
        sizes = np.bincount(folds, minlength=k)
        assert sizes.sum() == n
        assert sizes.max() - sizes.min() <= 1
        if stratified:
            for c in np.unique(labels):
                per = np.bincount(folds[labels == c], minlength=k)
                assert per.max() - per.min() <= 1
    plan = split_kfold(make_manifest(PAPER_BALANCED_COUNTS), k=10, seed=1)
    assert plan.sizes() == [127] * 10
    _report(4, "k-fold partition properties", started)


def test_criterion_05_gradient_check_50_heads():
    started = time.perf_counter()
    for seed in range(50):
        model, x, y = random_differentiable_head(seed)
        analytic = analytic_gradient(model, x, y)
        numeric = numeric_gradient(model, x, y)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-10), f"head seed {seed}"
    _report(5, "gradient check on 50 random heads", started)


def test_criterion_06_learning_sanity():
    started = time.perf_counter()
    feats, labels = centroid_dataset(per_class=200, dim=32, sigma=1.0, separation=6.0, seed=6)
    head_cfg = HeadConfig.uniform(32, [64], init_seed=0)
    train_cfg = TrainConfig(epochs=200, batch_size=32, learning_rate=1e-3)
    _, history = train(init_head(head_cfg), feats, labels, train_cfg)
    assert history.epoch_accuracy[-1] >= 0.99
    report = cross_validate(head_cfg, train_cfg, feats, labels, k=10, fold_seed=3)
    assert report.accuracy_percent >= 90.0
    _report(6, "learning sanity on separable synthetic task", started)


def null_accuracy_interval(class_counts, confidence=0.99):
    """Envelope of pooled accuracy for any label-independent predictor.

    Expected accuracy of such a predictor is a prior-weighted mix bounded
    by the smallest and largest class priors; exact binomial tails at the
    requested confidence widen both ends.
    """
    n = sum(class_counts)
    priors = [c / n for c in class_counts]
    alpha = (1 - confidence) / 2
    lo = stats.binom.ppf(alpha, n, min(priors)) / n
    hi = stats.binom.ppf(1 - alpha, n, max(priors)) / n
    return 100.0 * lo, 100.0 * hi


def test_criterion_07_null_signal_sanity():
    started = time.perf_counter()
    manifest = make_manifest(PAPER_BALANCED_COUNTS)
    extractor = HashStubExtractor(dim=64)
    feats = np.stack([extractor.extract_record(rec) for rec in manifest.records]).astype(np.float64)
    labels = manifest.labels()
    report = cross_validate(
        HeadConfig.uniform(64, [32], init_seed=1),
        TrainConfig(epochs=30, batch_size=32, learning_rate=1e-3),
        feats,
        labels,
        k=10,
        fold_seed=5,
    )
    lo, hi = null_accuracy_interval(PAPER_BALANCED_COUNTS)
    assert lo <= report.accuracy_percent <= hi, (
        f"accuracy {report.accuracy_percent:.2f}% outside null envelope "
        f"[{lo:.2f}%, {hi:.2f}%]: features are leaking label information"
    )
    _report(7, "null-signal sanity (no leakage)", started)


def test_criterion_08_pipeline_determinism(tmp_path):
    started = time.perf_counter()
    manifest_path = tmp_path / "paper.csv"
    save_manifest(make_manifest(PAPER_RAW_COUNTS), manifest_path)
    artifact_sets = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = cli.main(
            [
                "cv",
                "--manifest",
                str(manifest_path),
                "--balance",
                "--stub",
                "hash",
                "--dim",
                "32",
                "--k",
                "10",
                "--widths",
                "16",
                "--epochs",
                "5",
                "--batch",
                "64",
                "--seed",
                "123",
                "--out",
                str(out),
                "--save-model",
                str(out / "model.bin"),
            ]
        )
        assert code == 0
        run_info = json.loads((out / "run.json").read_text())
        artifacts = {
            name: Path(path).read_bytes() for name, path in run_info["outputs"].items()
        }
        artifact_sets.append(artifacts)
    assert artifact_sets[0].keys() == artifact_sets[1].keys()
    for name in artifact_sets[0]:
        assert artifact_sets[0][name] == artifact_sets[1][name], f"{name} differs between runs"
    _report(8, "pipeline determinism under fixed seed", started)


def test_criterion_09_selection_rule():
    started = time.perf_counter()
    a = report_from_confusion(matrix_with({4: (11, 32), 3: (7, 28)}, accuracy_trace=2677, total=10000))
    b = report_from_confusion(matrix_with({4: (12, 30), 3: (2, 40)}, accuracy_trace=2700, total=10000))
    index, just = select_best([("A", a), ("B", b)])
    assert index == 0 and not just.fallback
    # monotonicity: boosting only the winner's focus successes keeps it first
    for bump in (1, 3, 5):
        better = report_from_confusion(
            matrix_with({4: (11 + bump, 32), 3: (7 + bump, 28)}, accuracy_trace=2677 + 2 * bump, total=10000)
        )
        assert select_best([("A+", better), ("B", b)])[0] == 0
    # min-predictions fallback
    small = report_from_confusion(matrix_with({4: (3, 5), 3: (4, 10)}, accuracy_trace=50, total=400))
    smaller = report_from_confusion(matrix_with({4: (2, 6), 3: (3, 12)}, accuracy_trace=90, total=400))
    index, just = select_best([("A", small), ("B", smaller)], SelectionPolicy(min_predictions=20))
    assert just.fallback and index == 1
    _report(9, "talent-weighted selection rule", started)


def test_criterion_10_sweep_reproducibility(tmp_path):
    started = time.perf_counter()
    feats, labels = centroid_dataset(per_class=30, dim=8, seed=10)
    configs = enumerate_configs(
        parse_space(
            "layers=1\nwidths=8,16\ndropout=0,0.2\nlr=1e-2,1e-3\noptimizer=adam\n"
            "epochs=5\nbatch=25\nbase_seed=3\n"
        ),
        input_dim=8,
    )
    assert len(configs) == 8
    rankings = {}
    for name, parallelism in (("seq", 1), ("par", 4)):
        records = run_experiments(
            configs, feats, labels, k=10, out_dir=tmp_path / name, parallelism=parallelism
        )
        write_ranking_csv(records, tmp_path / f"{name}.csv")
        rankings[name] = (tmp_path / f"{name}.csv").read_bytes()

    interrupted = []

    def stop_after_three(rec):
        interrupted.append(rec.config_id)
        if len(interrupted) == 3:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_experiments(
            configs, feats, labels, k=10, out_dir=tmp_path / "resume", on_record=stop_after_three
        )
    records = run_experiments(configs, feats, labels, k=10, out_dir=tmp_path / "resume")
    write_ranking_csv(records, tmp_path / "resume.csv")
    rankings["resume"] = (tmp_path / "resume.csv").read_bytes()

    assert rankings["seq"] == rankings["par"] == rankings["resume"]
    _report(10, "sweep reproducibility and resume", started)
