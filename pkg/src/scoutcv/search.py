"""Architecture sweep: enumerate head/training configs, run cross-validated
experiments (optionally in parallel, resumably), and rank the results."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from scoutcv.errors import ScoutError, SearchSpaceError
from scoutcv.evaluate import (
    EvaluationReport,
    SelectionJustification,
    SelectionPolicy,
    cross_validate,
    derive_seed,
    report_from_dict,
    report_to_dict,
    select_best,
)
from scoutcv.head import HeadConfig, HiddenLayer, OptimizerSpec, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_GRID_CAP = 10_000

# Default grid spanning the ranges that worked for the narrow and the wide
# head families; uniform width and dropout across a config's hidden layers.
DEFAULT_SPACE_TEXT = """\
layers = 1, 2, 3
widths = 50, 100, 300, 500
dropout = 0, 0.2, 0.5
lr = 1e-3, 1e-4
optimizer = adam
epochs = 50
batch = 32
base_seed = 0
"""


@dataclass(frozen=True)
class SearchSpace:
    hidden_layer_counts: tuple[int, ...]
    widths: tuple[int, ...]
    dropout_rates: tuple[float, ...]
    learning_rates: tuple[float, ...]
    optimizers: tuple[str, ...]
    epochs: tuple[int, ...]
    batch_sizes: tuple[int, ...]
    base_seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "hidden_layer_counts",
            "widths",
            "dropout_rates",
            "learning_rates",
            "optimizers",
            "epochs",
            "batch_sizes",
        ):
            if not getattr(self, name):
                raise SearchSpaceError(f"search space field {name} is empty")
        if any(lr <= 0 for lr in self.learning_rates):
            raise SearchSpaceError("learning rates must be positive")

    def size(self) -> int:
        return (
            len(self.hidden_layer_counts)
            * len(self.widths)
            * len(self.dropout_rates)
            * len(self.learning_rates)
            * len(self.optimizers)
            * len(self.epochs)
            * len(self.batch_sizes)
        )


_SPACE_KEYS = {
    "layers": "hidden_layer_counts",
    "widths": "widths",
    "dropout": "dropout_rates",
    "lr": "learning_rates",
    "optimizer": "optimizers",
    "epochs": "epochs",
    "batch": "batch_sizes",
    "base_seed": "base_seed",
}


def parse_space(text: str) -> SearchSpace:
    """Parse the declarative ``key = v1, v2`` space format.

    Lines starting with ``#`` are comments; unknown keys are rejected with
    the list of accepted ones.
    """
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SearchSpaceError(f"line {lineno}: expected 'key = values', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in _SPACE_KEYS:
            raise SearchSpaceError(
                f"line {lineno}: unknown key {key!r}; accepted keys: "
                f"{', '.join(sorted(_SPACE_KEYS))}"
            )
        tokens = [t.strip() for t in rhs.split(",") if t.strip()]
        if not tokens:
            raise SearchSpaceError(f"line {lineno}: no values for {key!r}")
        field = _SPACE_KEYS[key]
        if field == "base_seed":
            values[field] = int(tokens[0])
        elif field == "optimizers":
            for t in tokens:
                if t not in ("adam", "sgd"):
                    raise SearchSpaceError(f"line {lineno}: unknown optimizer {t!r}")
            values[field] = tuple(dict.fromkeys(tokens))
        elif field in ("dropout_rates", "learning_rates"):
            values[field] = tuple(sorted({float(t) for t in tokens}))
        else:
            values[field] = tuple(sorted({int(t) for t in tokens}))
    missing = [k for k, f in _SPACE_KEYS.items() if f not in values and f != "base_seed"]
    if missing:
        raise SearchSpaceError(f"space file missing keys: {', '.join(sorted(missing))}")
    return SearchSpace(**values)  # type: ignore[arg-type]


def load_space(path: str | Path) -> SearchSpace:
    return parse_space(Path(path).read_text(encoding="utf-8"))


def _optimizer_spec(name: str) -> OptimizerSpec:
    if name == "adam":
        return OptimizerSpec(kind="adam")
    return OptimizerSpec(kind="sgd_momentum", momentum=0.9)


def enumerate_configs(
    space: SearchSpace, input_dim: int, cap: int = DEFAULT_GRID_CAP
) -> list[tuple[HeadConfig, TrainConfig]]:
    """Full Cartesian product of the space, in field order
    (layers, width, dropout, lr, optimizer, epochs, batch) with each
    field's values ascending. Per-config seeds derive from
    (base_seed, ordinal)."""
    size = space.size()
    if size > cap:
        raise SearchSpaceError(f"search space holds {size} configs, exceeding the cap of {cap}")
    configs: list[tuple[HeadConfig, TrainConfig]] = []
    ordinal = 0
    for layers in space.hidden_layer_counts:
        for width in space.widths:
            for dropout in space.dropout_rates:
                for lr in space.learning_rates:
                    for opt in space.optimizers:
                        for epochs in space.epochs:
                            for batch in space.batch_sizes:
                                head_cfg = HeadConfig(
                                    input_dim=input_dim,
                                    hidden_layers=tuple(
                                        HiddenLayer(width=width, dropout_rate=dropout)
                                        for _ in range(layers)
                                    ),
                                    init_seed=derive_seed(space.base_seed, ordinal, 0),
                                )
                                train_cfg = TrainConfig(
                                    epochs=epochs,
                                    batch_size=batch,
                                    learning_rate=lr,
                                    optimizer=_optimizer_spec(opt),
                                    shuffle_seed=derive_seed(space.base_seed, ordinal, 1),
                                    dropout_seed=derive_seed(space.base_seed, ordinal, 2),
                                )
                                configs.append((head_cfg, train_cfg))
                                ordinal += 1
    return configs


# ---------------------------------------------------------------------------
# config serialization and identity


def head_cfg_to_dict(cfg: HeadConfig) -> dict:
    return {
        "input_dim": cfg.input_dim,
        "hidden_layers": [
            {"width": l.width, "activation": l.activation, "dropout_rate": l.dropout_rate}
            for l in cfg.hidden_layers
        ],
        "output_classes": cfg.output_classes,
        "init_seed": cfg.init_seed,
    }


def head_cfg_from_dict(d: dict) -> HeadConfig:
    return HeadConfig(
        input_dim=d["input_dim"],
        hidden_layers=tuple(
            HiddenLayer(
                width=l["width"],
                activation=l.get("activation", "relu"),
                dropout_rate=l.get("dropout_rate", 0.0),
            )
            for l in d["hidden_layers"]
        ),
        output_classes=d.get("output_classes", 5),
        init_seed=d.get("init_seed", 0),
    )


def train_cfg_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "optimizer": {
            "kind": cfg.optimizer.kind,
            "momentum": cfg.optimizer.momentum,
            "beta1": cfg.optimizer.beta1,
            "beta2": cfg.optimizer.beta2,
            "epsilon": cfg.optimizer.epsilon,
        },
        "loss": cfg.loss,
        "shuffle_seed": cfg.shuffle_seed,
        "dropout_seed": cfg.dropout_seed,
    }


def train_cfg_from_dict(d: dict) -> TrainConfig:
    opt = d.get("optimizer", {})
    return TrainConfig(
        epochs=d["epochs"],
        batch_size=d["batch_size"],
        learning_rate=d["learning_rate"],
        optimizer=OptimizerSpec(
            kind=opt.get("kind", "adam"),
            momentum=opt.get("momentum", 0.9),
            beta1=opt.get("beta1", 0.9),
            beta2=opt.get("beta2", 0.999),
            epsilon=opt.get("epsilon", 1e-8),
        ),
        loss=d.get("loss", "categorical_cross_entropy"),
        shuffle_seed=d.get("shuffle_seed", 0),
        dropout_seed=d.get("dropout_seed", 0),
    )


def config_id(head_cfg: HeadConfig, train_cfg: TrainConfig) -> str:
    """Stable 12-hex-digit identity of a (head, train) config pair."""
    canonical = json.dumps(
        {"head": head_cfg_to_dict(head_cfg), "train": train_cfg_to_dict(train_cfg)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass
class ExperimentRecord:
    config_id: str
    head_cfg: HeadConfig
    train_cfg: TrainConfig
    report: EvaluationReport | None
    error: str | None
    wall_time: float

    @property
    def ok(self) -> bool:
        return self.report is not None


def record_to_dict(rec: ExperimentRecord) -> dict:
    return {
        "config_id": rec.config_id,
        "head": head_cfg_to_dict(rec.head_cfg),
        "train": train_cfg_to_dict(rec.train_cfg),
        "status": "ok" if rec.ok else "failed",
        "error": rec.error,
        "report": report_to_dict(rec.report) if rec.report else None,
        "wall_time": rec.wall_time,
    }


def record_from_dict(d: dict) -> ExperimentRecord:
    return ExperimentRecord(
        config_id=d["config_id"],
        head_cfg=head_cfg_from_dict(d["head"]),
        train_cfg=train_cfg_from_dict(d["train"]),
        report=report_from_dict(d["report"]) if d.get("report") else None,
        error=d.get("error"),
        wall_time=d.get("wall_time", 0.0),
    )


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def _execute_config(
    cid: str,
    head_cfg: HeadConfig,
    train_cfg: TrainConfig,
    features: np.ndarray,
    labels: np.ndarray,
    k: int,
    fold_seed: int,
    stratified: bool,
) -> dict:
    start = time.perf_counter()
    try:
        report = cross_validate(
            head_cfg,
            train_cfg,
            features,
            labels,
            k=k,
            fold_seed=fold_seed,
            stratified=stratified,
            config_id=cid,
        )
        rec = ExperimentRecord(cid, head_cfg, train_cfg, report, None, time.perf_counter() - start)
    except ScoutError as exc:
        rec = ExperimentRecord(cid, head_cfg, train_cfg, None, str(exc), time.perf_counter() - start)
    return record_to_dict(rec)


def run_experiments(
    configs: Sequence[tuple[HeadConfig, TrainConfig]],
    features: np.ndarray,
    labels: np.ndarray,
    k: int,
    out_dir: str | Path,
    parallelism: int = 1,
    fold_seed: int = 0,
    stratified: bool = True,
    on_record: Callable[[ExperimentRecord], None] | None = None,
) -> list[ExperimentRecord]:
    """Run one cross-validated experiment per config.

    Results land as one JSON file per config id under ``out_dir``, written
    atomically, so an interrupted sweep resumes by skipping ids whose file
    already exists. All randomness is derived from per-config seeds, which
    makes the reports independent of ``parallelism`` and of resume order.
    A failing config is recorded, not fatal. ``on_record`` fires in the
    parent after each record is persisted.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise ScoutError(f"{len(features)} feature rows but {len(labels)} labels")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    for head_cfg, _ in configs:
        if head_cfg.input_dim != features.shape[1]:
            raise ScoutError(
                f"config expects input_dim {head_cfg.input_dim}, features have {features.shape[1]}"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "sweep_index.jsonl"

    ids = [config_id(h, t) for h, t in configs]
    records: dict[str, ExperimentRecord] = {}
    pending: list[tuple[str, HeadConfig, TrainConfig]] = []
    for cid, (head_cfg, train_cfg) in zip(ids, configs):
        path = out_dir / f"{cid}.json"
        if path.exists():
            records[cid] = record_from_dict(json.loads(path.read_text(encoding="utf-8")))
            logger.info("resuming: %s already done", cid)
        else:
            pending.append((cid, head_cfg, train_cfg))

    def persist(result: dict) -> None:
        rec = record_from_dict(result)
        _write_json_atomic(out_dir / f"{rec.config_id}.json", result)
        # the index is an operational log; only the parent ever appends
        with index_path.open("a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "config_id": rec.config_id,
                        "status": "ok" if rec.ok else "failed",
                        "wall_time": rec.wall_time,
                    }
                )
                + "\n"
            )
        records[rec.config_id] = rec
        if on_record is not None:
            on_record(rec)

    if parallelism == 1 or len(pending) <= 1:
        for cid, head_cfg, train_cfg in pending:
            persist(
                _execute_config(cid, head_cfg, train_cfg, features, labels, k, fold_seed, stratified)
            )
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {
                pool.submit(
                    _execute_config, cid, h, t, features, labels, k, fold_seed, stratified
                ): cid
                for cid, h, t in pending
            }
            for fut in as_completed(futures):
                persist(fut.result())
    return [records[cid] for cid in ids]


# ---------------------------------------------------------------------------
# ranking


def rank(
    records: Sequence[ExperimentRecord], policy: SelectionPolicy = SelectionPolicy()
) -> tuple[list[ExperimentRecord], int, SelectionJustification]:
    """Total, deterministic ordering plus the selected winner.

    Sort key: eligibility, then minimum focus-class prediction quality,
    then accuracy, then config id. The winner always agrees with
    ``select_best`` on the successful records.
    """
    if not records:
        raise ValueError("rank needs at least one record")

    def sort_key(rec: ExperimentRecord):
        if rec.report is None:
            return (2, 0.0, 0.0, rec.config_id)
        stats = [rec.report.class_stats(c) for c in policy.focus_classes]
        eligible = all(
            s.predictions >= policy.min_predictions and s.cpq_percent is not None for s in stats
        )
        min_cpq = rec.report.min_focus_cpq(policy.focus_classes)
        return (
            0 if eligible else 1,
            -(min_cpq if min_cpq is not None else -np.inf),
            -rec.report.accuracy_percent,
            rec.config_id,
        )

    ordered = sorted(records, key=sort_key)
    successful = [(rec.config_id, rec.report) for rec in records if rec.report is not None]
    if not successful:
        raise ScoutError("every experiment in the sweep failed; nothing to rank")
    best_pos, justification = select_best(successful, policy)
    winner_id = successful[best_pos][0]
    winner_index = next(i for i, rec in enumerate(records) if rec.config_id == winner_id)
    return ordered, winner_index, justification


def write_ranking_csv(
    records: Sequence[ExperimentRecord],
    path: str | Path,
    policy: SelectionPolicy = SelectionPolicy(),
) -> None:
    """Write the deterministic ranking table.

    Timing lives in the per-config records and the sweep index, not here,
    so reruns of an identical sweep produce byte-identical files.
    """
    ordered, _, _ = rank(records, policy)
    lines = ["config_id,min_focus_cpq,accuracy_percent,eligible"]
    for rec in ordered:
        if rec.report is None:
            lines.append(f"{rec.config_id},,,failed")
            continue
        stats = [rec.report.class_stats(c) for c in policy.focus_classes]
        eligible = all(
            s.predictions >= policy.min_predictions and s.cpq_percent is not None for s in stats
        )
        min_cpq = rec.report.min_focus_cpq(policy.focus_classes)
        cpq_text = "" if min_cpq is None else f"{min_cpq:.4f}"
        lines.append(
            f"{rec.config_id},{cpq_text},{rec.report.accuracy_percent:.4f},"
            f"{'true' if eligible else 'false'}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
