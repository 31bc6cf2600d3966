"""Acceptance criteria 1 to 11 at desk scale.

Each test is named ``test_criterion_NN_*``; the conftest hook prints one
PASS/FAIL line per criterion at the end of the session.
"""
import itertools
import time

import numpy as np
import pytest

from poisonbench import attack_registry, defense_registry
from poisonbench.config import build_config
from poisonbench.defenses.robust import Bulyan, Krum, Median, MultiKrum, TrimmedMean
from poisonbench.experiment import run_experiment
from poisonbench.learning import ServerContext
from poisonbench.metrics import tai, tdr
from poisonbench.models import Model
from poisonbench.timing import time_aggregation

from test_defenses import oracle_bulyan, oracle_krum, oracle_median, oracle_multikrum, oracle_trimmed
from test_models import numeric_grad

pytestmark = pytest.mark.acceptance


def desk(**entries):
    base = {"train.rounds": 100}
    base.update(entries)
    return build_config(base)


def acc_of(**entries):
    return run_experiment(desk(**entries), write=False).acc


def sctx(d):
    return ServerContext(round=1, model=None, global_params=np.zeros(d), n_classes=10,
                         rng=np.random.default_rng(0))


# 1 ---------------------------------------------------------------------------


def test_criterion_01_aggregator_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    checks = {"krum": 0, "multikrum": 0, "median": 0, "trimmedmean": 0, "bulyan": 0}
    while min(checks.values()) < 200:
        n, d = int(rng.integers(3, 10)), int(rng.integers(1, 5))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
        if n >= 4:
            f = int(rng.integers(0, (n - 3) // 2 + 1))
            m = int(rng.integers(1, n + 1))
            np.testing.assert_allclose(Krum(f=f).aggregate(X, sctx(d)), oracle_krum(X, f), atol=1e-9, rtol=0)
            np.testing.assert_allclose(MultiKrum(f=f, m=m).aggregate(X, sctx(d)), oracle_multikrum(X, f, m),
                                       atol=1e-9, rtol=0)
            checks["krum"] += 1
            checks["multikrum"] += 1
        np.testing.assert_allclose(Median().aggregate(X, sctx(d)), oracle_median(X), atol=1e-9, rtol=0)
        checks["median"] += 1
        beta = float(rng.uniform(0, 0.49))
        if 2 * int(beta * n) < n:
            np.testing.assert_allclose(TrimmedMean(beta=beta).aggregate(X, sctx(d)), oracle_trimmed(X, beta),
                                       atol=1e-9, rtol=0)
            checks["trimmedmean"] += 1
        fb = int(rng.integers(0, (n - 3) // 4 + 1))
        np.testing.assert_allclose(Bulyan(f=fb).aggregate(X, sctx(d)), oracle_bulyan(X, fb), atol=1e-9, rtol=0)
        checks["bulyan"] += 1
    assert time.perf_counter() - start < 10.0


# 2 ---------------------------------------------------------------------------


def test_criterion_02_mlp_gradient():
    rng = np.random.default_rng(0)
    model = Model("mlp", 100, 10, hidden=32)
    w = model.init_params(rng) + 0.05 * rng.normal(size=model.dim)
    X, y = rng.random((32, 100)), rng.integers(0, 10, size=32)
    _, g = model.loss_and_grad(w, X, y)
    idx = rng.choice(model.dim, size=100, replace=False)
    num = numeric_grad(model, w, X, y, idx)
    rel = np.abs(g[idx] - num) / np.maximum(np.maximum(np.abs(g[idx]), np.abs(num)), 1e-8)
    assert rel.max() < 1e-4


# 3 ---------------------------------------------------------------------------


def test_criterion_03_clean_baseline():
    start = time.perf_counter()
    sgd = acc_of(algorithm="fedsgd", f=0)
    opt = acc_of(algorithm="fedopt", f=0, **{"train.local_steps": 5})
    assert sgd >= 0.95
    assert abs(opt - sgd) <= 0.02
    assert time.perf_counter() - start < 120


# 4 ---------------------------------------------------------------------------


def test_criterion_04_sign_flipping_ordering():
    start = time.perf_counter()
    ok = 0
    for seed in range(5):
        clean = acc_of(n=50, f=0, seed=seed)
        attacked = {d: acc_of(n=50, f=24, seed=seed, **{"attack.name": "signflipping", "defense.name": d})
                    for d in ("mean", "median", "fltrust")}
        ok += (clean - attacked["mean"] >= 0.25
               and clean - attacked["median"] <= 0.10
               and clean - attacked["fltrust"] <= 0.10)
    assert ok >= 4
    assert time.perf_counter() - start < 600


# 5 ---------------------------------------------------------------------------


def test_criterion_05_badnets_ordering():
    start = time.perf_counter()
    ok = 0
    for seed in range(5):
        clean = acc_of(f=0, seed=seed)
        mean = run_experiment(desk(f=2, seed=seed, **{"attack.name": "badnets"}), write=False)
        krum = run_experiment(desk(f=2, seed=seed, **{"attack.name": "badnets", "defense.name": "krum"}),
                              write=False)
        ok += mean.asr >= 0.7 and clean - mean.acc <= 0.05 and krum.asr <= 0.25
    assert ok >= 4
    assert time.perf_counter() - start < 600


# 6 ---------------------------------------------------------------------------


@pytest.mark.parametrize("attack", ["ipm", "signflipping"])
def test_criterion_06_fedsgd_more_vulnerable(attack):
    drops = {"fedsgd": [], "fedopt": []}
    for seed in range(3):
        for alg in drops:
            extra = {"train.local_steps": 5} if alg == "fedopt" else {}
            clean = acc_of(algorithm=alg, f=0, seed=seed, **extra)
            hit = acc_of(algorithm=alg, f=4, seed=seed, **extra,
                         **{"attack.name": attack, "defense.name": "trimmedmean"})
            drops[alg].append(clean - hit)
    assert np.mean(drops["fedsgd"]) >= np.mean(drops["fedopt"])


# 7 ---------------------------------------------------------------------------


def test_criterion_07_ratio_monotonicity():
    for seed in range(3):
        accs = [acc_of(n=50, f=f, seed=seed, **{"attack.name": "signflipping"}) for f in (5, 10, 24)]
        assert accs[0] >= accs[1] >= accs[2], (seed, accs)


# 8 ---------------------------------------------------------------------------


def test_criterion_08_metric_formulas():
    assert tai(0.9, 0.9, 0.5) == pytest.approx(1.5)
    assert tai(0.45, 0.9, 0.0) == pytest.approx(0.5)
    assert tai(0.855, 0.9, 0.8) == pytest.approx(1.75)
    assert tdr(0.9, 0.9, 0.0) == pytest.approx(2.0)
    assert tdr(0.9, 0.9, 1.0) == pytest.approx(1.0)
    assert tdr(0.72, 0.9, 0.2) == pytest.approx(1.6)


# 9 ---------------------------------------------------------------------------


@pytest.mark.parametrize("attack,defense,alg", [
    ("none", "mean", "fedsgd"),
    ("badnets", "flame", "fedopt"),
    ("gaussian", "bucketing", "fedavg"),
    ("edgecase", "deepsight", "fedsgd"),
])
def test_criterion_09_determinism(tmp_path, attack, defense, alg):
    cfg = desk(algorithm=alg, f=2, **{"train.rounds": 20, "attack.name": attack, "defense.name": defense})
    run_experiment(cfg, tmp_path / "a", write_summary=False)
    run_experiment(cfg, tmp_path / "b", write_summary=False)
    a = (tmp_path / "a" / "rounds.jsonl").read_bytes()
    assert a and a == (tmp_path / "b" / "rounds.jsonl").read_bytes()


# 10 --------------------------------------------------------------------------


def test_criterion_10_smoke_matrix():
    start = time.perf_counter()
    failures = []
    triples = itertools.product(sorted(attack_registry), sorted(defense_registry), ("fedsgd", "fedopt"))
    count = 0
    for attack, defense, alg in triples:
        # Bulyan needs n >= 4f + 3, so at n = 10 it is told f = 1
        params = {"defense.f": 1} if defense == "bulyan" else {}
        cfg = desk(algorithm=alg, n=10, f=2, **{"train.rounds": 3, "eval.every": 3, "attack.name": attack,
                                                 "defense.name": defense}, **params)
        try:
            res = run_experiment(cfg, write=False)
            assert np.isfinite(res.acc)
        except Exception as exc:  # collect every failing triple before reporting
            failures.append(f"{attack}/{defense}/{alg}: {type(exc).__name__}: {exc}")
        count += 1
    assert count == 15 * 18 * 2
    assert not failures, "\n".join(failures)
    assert time.perf_counter() - start < 900


# 11 --------------------------------------------------------------------------


def test_criterion_11_complexity_ordering():
    X = np.random.default_rng(0).normal(size=(100, 10_000))
    t_median = time_aggregation(Median(), X)
    t_krum = time_aggregation(Krum(f=24), X)
    t_bulyan = time_aggregation(Bulyan(f=24), X)
    assert t_median < t_krum < t_bulyan
