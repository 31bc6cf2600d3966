"""Run one configured experiment end to end and persist its logs."""
from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, load_mnist, make_edge_case, partition, synthetic_blobs
from .errors import ConfigurationError, NumericError, UndefinedMetricError
from .learning import ClientState, Federation, evaluate
from .metrics import MetricsRecord, tai, tdr
from .models import Model
from .registry import attacks, defenses
from .vector import rng_for

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ["config_hash", "attack", "defense", "algorithm", "partition",
                  "acc", "asr", "tai", "tdr", "agg_time"]


@dataclass
class Splits:
    train: Dataset
    test: Dataset
    root: Dataset
    reserve: Optional[Dataset] = None


@dataclass
class RunResult:
    config_hash: str
    records: list[MetricsRecord]
    acc: float
    asr: Optional[float]
    tai: Optional[float] = None
    tdr: Optional[float] = None
    agg_time: float = 0.0
    out_dir: Optional[Path] = None
    notes: list[dict] = field(default_factory=list)

    def summary_row(self, cfg: ExperimentConfig) -> dict:
        part = cfg.partition.mode if cfg.partition.mode == "iid" else f"dirichlet({cfg.partition.alpha:g})"

        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        return {
            "config_hash": self.config_hash, "attack": cfg.attack, "defense": cfg.defense,
            "algorithm": cfg.algorithm, "partition": part, "acc": fmt(self.acc), "asr": fmt(self.asr),
            "tai": fmt(self.tai), "tdr": fmt(self.tdr), "agg_time": f"{self.agg_time:.6g}",
        }


def load_splits(cfg: ExperimentConfig, with_reserve: bool = False) -> Splits:
    seed = cfg.seed
    reserve_size = 2 * cfg.poison.edge_pool * 10 if with_reserve else 0
    if cfg.dataset == "mnist":
        train_all, test_all = load_mnist(split="train"), load_mnist(split="test")
        if train_all is None or test_all is None:
            log.warning("MNIST files not found (set FLP_DATA_DIR); using synthetic blobs")
        else:
            need = cfg.train_size + cfg.root_size + reserve_size
            if need > len(train_all) or cfg.test_size > len(test_all):
                raise ConfigurationError("requested subset larger than the MNIST files")
            perm = rng_for(seed, "mnist-subset").permutation(len(train_all))
            a, b = cfg.train_size, cfg.train_size + cfg.root_size
            test_idx = rng_for(seed, "mnist-test").permutation(len(test_all))[: cfg.test_size]
            return Splits(
                train_all.subset(np.sort(perm[:a])),
                test_all.subset(np.sort(test_idx)),
                train_all.subset(np.sort(perm[a:b])),
                train_all.subset(np.sort(perm[b:need])) if with_reserve else None,
            )
    return Splits(
        synthetic_blobs(cfg.train_size, rng_for(seed, "data-train")),
        synthetic_blobs(cfg.test_size, rng_for(seed, "data-test")),
        synthetic_blobs(cfg.root_size, rng_for(seed, "data-root")),
        synthetic_blobs(reserve_size, rng_for(seed, "data-reserve")) if with_reserve else None,
    )


def build_attack(cfg: ExperimentConfig, splits: Splits):
    if cfg.attack == "none":
        return None
    cls = attacks.lookup(cfg.attack)
    if cfg.attack == "edgecase":
        pool = make_edge_case(splits.reserve, cfg.poison, rng_for(cfg.seed, "edge-pool"),
                              size=2 * cfg.poison.edge_pool)
        half = len(pool) // 2
        return cls(cfg.poison, edge_train=pool.subset(np.arange(half)),
                   edge_test=pool.subset(np.arange(half, len(pool))), **cfg.attack_params)
    return cls(cfg.poison, **cfg.attack_params)


def build_federation(cfg: ExperimentConfig):
    splits = load_splits(cfg, with_reserve=cfg.attack == "edgecase")
    parts = partition(splits.train.y, cfg.partition, rng_for(cfg.seed, "partition"))
    clients = [ClientState(i, i < cfg.f, splits.train.subset(idx)) for i, idx in enumerate(parts)]
    model = Model(cfg.arch, splits.train.x.shape[1], splits.train.n_classes, cfg.hidden)
    defense = defenses.lookup(cfg.defense)(**cfg.defense_params)
    attack = build_attack(cfg, splits)
    fed = Federation(model, clients, cfg.hyper, cfg.algorithm, defense, attack,
                     seed=cfg.seed, root_data=splits.root)
    return fed, splits, attack


_clean_cache: dict[str, float] = {}


def clean_accuracy(cfg: ExperimentConfig) -> float:
    clean = cfg.clean()
    key = clean.hash()
    if key not in _clean_cache:
        _clean_cache[key] = run_experiment(clean, write=False).acc
    return _clean_cache[key]


def run_experiment(cfg: ExperimentConfig, out_dir=None, *, write: bool = True,
                   write_summary: bool = True) -> RunResult:
    """Train for ``cfg.hyper.rounds`` rounds, evaluating every ``cfg.eval_every``.

    With ``write`` the per-evaluation records go to ``rounds.jsonl`` and the
    per-round aggregation times to ``timing.jsonl``; the summary row is
    appended to ``summary.csv`` unless a row with the same config hash exists.
    A non-finite global model stops the run with a diagnostic record and
    raises :class:`NumericError`.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    fed, splits, attack = build_federation(cfg)
    asr_pair = attack.asr_inputs(splits.test) if attack is not None else None
    chash = cfg.hash()
    rounds = fed.hyper.rounds

    records: list[MetricsRecord] = []
    times: list[float] = []
    notes: list[dict] = []
    lines: list[str] = []
    failure = None
    for r in range(1, rounds + 1):
        try:
            res = fed.run_round()
        except NumericError as exc:
            failure = {"round": r, "error": f"non-finite values: {exc}"}
            break
        times.append(res.agg_seconds)
        if res.notes:
            notes.append({"round": r, **res.notes})
        if not np.all(np.isfinite(fed.params)):
            failure = {"round": r, "error": "non-finite global model"}
            break
        if r % cfg.eval_every == 0 or r == rounds:
            acc, asr = evaluate(
                fed.model, fed.params, splits.test,
                asr_x=None if asr_pair is None else asr_pair[0],
                target=None if asr_pair is None else asr_pair[1],
                predict=fed.predict_fn(r),
            )
            rec = MetricsRecord(r, acc, asr, res.survivors)
            records.append(rec)
            lines.append(rec.to_json())

    if write:
        out.mkdir(parents=True, exist_ok=True)
        if failure is not None:
            lines.append(json.dumps({**failure, "config_hash": chash}, sort_keys=True))
        (out / "rounds.jsonl").write_text("".join(line + "\n" for line in lines))
        with open(out / "timing.jsonl", "w") as fh:
            for i, t in enumerate(times, 1):
                fh.write(json.dumps({"round": i, "agg_seconds": t}) + "\n")
    if failure is not None:
        raise NumericError(f"run {chash[:12]} aborted at round {failure['round']}: {failure['error']}")

    window = records[-cfg.eval_window:]
    acc = float(np.mean([rec.acc for rec in window]))
    asr = None if asr_pair is None else float(np.mean([rec.asr for rec in window]))
    result = RunResult(chash, records, acc, asr, agg_time=statistics.median(times) if times else 0.0,
                       out_dir=out if write else None, notes=notes)
    if asr is not None and cfg.targeted:
        try:
            base = clean_accuracy(cfg)
            result.tai, result.tdr = tai(acc, base, asr), tdr(acc, base, asr)
        except UndefinedMetricError as exc:
            log.warning("%s", exc)
    if write and write_summary:
        append_summary(out / "summary.csv", result.summary_row(cfg))
    return result


def append_summary(path: Path, row: dict) -> bool:
    """Append ``row`` unless its config hash is already present. Returns True when written."""
    path = Path(path)
    if path.exists():
        with open(path, newline="") as fh:
            if any(r.get("config_hash") == row["config_hash"] for r in csv.DictReader(fh)):
                return False
    new = not path.exists() or path.stat().st_size == 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        if new:
            w.writeheader()
        w.writerow(row)
    return True


def read_rounds(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
