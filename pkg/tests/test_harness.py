import csv
import json

import numpy as np
import pytest

from poisonbench import algorithms, attack_registry, defense_registry
from poisonbench.cli import main
from poisonbench.config import DESK_LR, ExperimentConfig, build_config, load_config, parse_text, parse_value
from poisonbench.data import Trigger
from poisonbench.defenses.robust import Bulyan, Krum, Mean, Median
from poisonbench.errors import ConfigurationError, NumericError, UndefinedMetricError
from poisonbench.experiment import SUMMARY_FIELDS, append_summary, read_rounds, run_experiment
from poisonbench.metrics import MetricsRecord, tai, tdr
from poisonbench.plotting import plot_curves, render_report
from poisonbench.timing import default_context, time_aggregation

SMALL = """
# tiny run used across the harness tests
algorithm = fedsgd
n = 5
f = 1
dataset.train_size = 300
dataset.test_size = 200
model.arch = logreg
train.rounds = 10
eval.every = 2
"""


def small(**over):
    entries = parse_text(SMALL)
    entries.update(over)
    return build_config(entries)


# ---------------------------------------------------------------- metrics


def test_tai_examples():
    assert tai(0.9, 0.9, 0.5) == pytest.approx(1.5)
    assert tai(0.45, 0.9, 0.0) == pytest.approx(0.5)
    assert tai(0.855, 0.9, 0.8) == pytest.approx(1.75)


def test_tdr_examples():
    assert tdr(0.9, 0.9, 0.0) == pytest.approx(2.0)
    assert tdr(0.9, 0.9, 1.0) == pytest.approx(1.0)
    assert tdr(0.72, 0.9, 0.2) == pytest.approx(1.6)


def test_metrics_undefined_without_clean_accuracy():
    with pytest.raises(UndefinedMetricError):
        tai(0.5, 0.0, 0.1)
    with pytest.raises(UndefinedMetricError):
        tdr(0.5, 0.0, 0.1)


def test_metrics_record_bounds_and_json():
    assert MetricsRecord(5, 0.5).to_json() == '{"acc": 0.5, "round": 5}'
    assert json.loads(MetricsRecord(5, 0.5, 0.25, 3).to_json())["survivors"] == 3
    with pytest.raises(ValueError):
        MetricsRecord(1, 1.5)


# ----------------------------------------------------------------- config


def test_parse_values():
    assert parse_value("3") == 3 and parse_value("0.5") == 0.5
    assert parse_value("true") is True and parse_value("none") is None
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("{x=0, y=1, value=1.0}") == {"x": 0, "y": 1, "value": 1.0}
    assert parse_value("'krum'") == "krum"


def test_config_keys_and_aliases(tmp_path):
    text = SMALL + """
attack.name = badnets
poison.trigger = {x=1, y=2, w=3, h=3, value=1.0}
defense.name = TrimmedMean
defense.params.beta = 0.1
partition.mode = dirichlet
partition.alpha = 0.5
"""
    path = tmp_path / "a.cfg"
    path.write_text(text)
    cfg = load_config(path, seed=7)
    assert cfg.defense == "trimmedmean" and cfg.defense_params == {"beta": 0.1}
    assert cfg.poison.trigger == Trigger(x=1, y=2, w=3, h=3, value=1.0)
    assert cfg.partition.mode == "dirichlet" and cfg.partition.n == 5
    assert cfg.seed == 7 and cfg.hyper.rounds == 10
    alias = build_config({**parse_text(text), "defense.beta": 0.1})
    assert alias.defense_params == cfg.defense_params
    assert ExperimentConfig().hyper.lr == DESK_LR


def test_config_errors():
    with pytest.raises(ConfigurationError):
        parse_text("no equals sign")
    with pytest.raises(ConfigurationError):
        build_config({"bogus.key": 1})
    with pytest.raises(ConfigurationError):
        small(f=5)
    with pytest.raises(ConfigurationError):
        small(**{"defense.name": "kruum"})
    with pytest.raises(ConfigurationError) as err:
        defense_registry.lookup("kruum")
    assert "'krum'" in str(err.value)


def test_fedsgd_forces_single_local_step_in_hash():
    a = small(**{"train.local_steps": 5})
    b = small(**{"train.local_steps": 1})
    assert a.hash() == b.hash()
    assert small(algorithm="fedopt", **{"train.local_steps": 5}).hash() != a.hash()
    assert small(out="elsewhere").hash() == small().hash()


# ------------------------------------------------------------- experiments


def test_clean_run_logs_and_summary(tmp_path):
    res = run_experiment(small(), tmp_path)
    recs = read_rounds(tmp_path / "rounds.jsonl")
    assert [r["round"] for r in recs] == [2, 4, 6, 8, 10]
    assert all(0 <= r["acc"] <= 1 and "asr" not in r for r in recs)
    assert recs[-1]["acc"] > recs[0]["acc"]
    assert res.acc == pytest.approx(np.mean([r["acc"] for r in recs]))
    timing = read_rounds(tmp_path / "timing.jsonl")
    assert len(timing) == 10
    with open(tmp_path / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == SUMMARY_FIELDS and rows[0]["config_hash"] == res.config_hash


def test_same_seed_gives_identical_logs(tmp_path):
    cfg = small(**{"attack.name": "badnets", "defense.name": "median"})
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "rounds.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "rounds.jsonl").read_bytes()
    run_experiment(small(seed=1, **{"attack.name": "badnets", "defense.name": "median"}), tmp_path / "c")
    assert a != (tmp_path / "c" / "rounds.jsonl").read_bytes()


def test_targeted_run_reports_asr_and_scores(tmp_path):
    res = run_experiment(small(**{"attack.name": "badnets"}), tmp_path)
    assert res.asr is not None and res.tai is not None and res.tdr is not None
    assert all("asr" in r for r in read_rounds(tmp_path / "rounds.jsonl"))


def test_summary_is_idempotent_by_hash(tmp_path):
    row = {k: "x" for k in SUMMARY_FIELDS}
    row["config_hash"] = "abc"
    path = tmp_path / "summary.csv"
    assert append_summary(path, row)
    assert not append_summary(path, row)
    assert append_summary(path, {**row, "config_hash": "def"})
    first = path.read_text()
    append_summary(path, row)
    assert path.read_text() == first
    assert first.count("\n") == 3


def test_non_finite_model_aborts_with_diagnostic(tmp_path):
    cfg = small(**{"attack.name": "gaussian", "attack.sigma": 1e308})
    with pytest.raises(NumericError):
        run_experiment(cfg, tmp_path)
    last = read_rounds(tmp_path / "rounds.jsonl")[-1]
    assert last["round"] == 1 and "error" in last and last["config_hash"] == cfg.hash()


# ---------------------------------------------------------------------- CLI


def test_cli_listings(capsys):
    assert main(["--list-defenses"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 18
    assert main(["--list-attacks"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 15
    assert main(["--list-algorithms"]) == 0
    assert capsys.readouterr().out.split() == ["fedsgd", "fedavg", "fedopt"]
    assert len(attack_registry) == 15 and len(defense_registry) == 18 and len(algorithms) == 3


def test_cli_run_report_and_errors(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--plot"]) == 0
    assert (out / "rounds.jsonl").exists() and (out / "curves.png").exists()
    (out / "curves.png").unlink()
    assert main(["report", str(out)]) == 0
    assert (out / "curves.png").stat().st_size > 0 and (out / "summary.png").exists()
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL + "defense.name = kruum\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "krum" in capsys.readouterr().err
    boom = tmp_path / "boom.cfg"
    boom.write_text(SMALL + "attack.name = gaussian\nattack.sigma = 1e308\n")
    assert main(["run", "--config", str(boom), "--out", str(tmp_path / "boom")]) == 3


def test_cli_sweep_shares_summary(tmp_path):
    for name, defense in (("one", "mean"), ("two", "median")):
        (tmp_path / f"{name}.cfg").write_text(SMALL + f"defense.name = {defense}\n")
    out = tmp_path / "sweep"
    assert main(["sweep", "--configs", str(tmp_path / "*.cfg"), "--out", str(out)]) == 0
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted(r["defense"] for r in rows) == ["mean", "median"]
    assert (out / "one" / "rounds.jsonl").exists() and (out / "two" / "rounds.jsonl").exists()


def test_plot_curves_with_asr(tmp_path):
    path = tmp_path / "rounds.jsonl"
    path.write_text("".join(MetricsRecord(r, 0.1 * r, 0.05 * r).to_json() + "\n" for r in range(1, 6)))
    png = plot_curves(path)
    assert png == tmp_path / "curves.png" and png.read_bytes()[:4] == b"\x89PNG"
    assert render_report(tmp_path) == [png]


# ------------------------------------------------------------------- timing


def test_mean_is_faster_than_krum():
    X = np.random.default_rng(0).normal(size=(100, 10_000))
    t_mean = time_aggregation(Mean(), X, repeats=5)
    t_krum = time_aggregation(Krum(f=10), X, repeats=5)
    assert t_mean < t_krum


def test_timing_is_stable():
    X = np.random.default_rng(1).normal(size=(50, 2000))
    samples = [time_aggregation(Median(), X, repeats=10) for _ in range(5)]
    med = float(np.median(samples))
    assert np.var(samples) ** 0.5 < 0.5 * med


def test_timing_context_carries_f():
    ctx = default_context(4, f=1)
    assert ctx.f == 1 and ctx.global_params.shape == (4,)
    X = np.random.default_rng(2).normal(size=(7, 4))
    assert time_aggregation(Bulyan(f=1), X, repeats=2) > 0
