"""Command-line surface for the talent classification pipeline.

Exit codes are a stable contract: 0 success, 1 validation or usage error,
2 internal or numeric failure. Every run writes a ``run.json`` audit file
capturing the resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from scoutcv import __version__, dataset
from scoutcv.dataset import DEFAULT_BALANCE_TARGETS, QualityClass
from scoutcv.errors import ScoutError, TrainingDiverged
from scoutcv.evaluate import (
    SelectionPolicy,
    cross_validate,
    derive_seed,
    render_report,
    report_from_dict,
    report_to_dict,
)
from scoutcv.features import cache as feature_cache
from scoutcv.features.extractors import extract_manifest, make_extractor
from scoutcv.head import (
    HeadConfig,
    OptimizerSpec,
    TrainConfig,
    init_head,
    load_model,
    predict,
    save_model,
    train,
)
from scoutcv import search as search_mod

logger = logging.getLogger("scoutcv")


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"{what} must be a comma-separated integer list, got {text!r}") from None


def _parse_targets(text: str) -> tuple[int, ...]:
    values = _parse_int_list(text, "--targets")
    if len(values) != 5:
        raise ValueError(f"--targets needs exactly 5 values, got {len(values)}")
    return tuple(values)


class RunAudit:
    """Collects the resolved configuration and writes run.json at the end."""

    def __init__(self, command: str, out_dir: Path | None) -> None:
        self.command = command
        self.out_dir = out_dir
        self.resolved: dict = {}
        self.outputs: dict[str, str] = {}

    def write(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "command": self.command,
            "argv": sys.argv[1:],
            "resolved": self.resolved,
            "outputs": self.outputs,
            "version": __version__,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        path = self.out_dir / "run.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _year_bounds(args) -> tuple[int, int] | None:
    if getattr(args, "no_year_bounds", False):
        return None
    return (args.year_min, args.year_max)


def _head_train_cfg(args, input_dim: int, seed: int) -> tuple[HeadConfig, TrainConfig]:
    widths = _parse_int_list(args.widths, "--widths") if args.widths else []
    head_cfg = HeadConfig.uniform(
        input_dim=input_dim,
        widths=widths,
        dropout=args.dropout,
        init_seed=derive_seed(seed, 0),
    )
    opt = (
        OptimizerSpec(kind="adam")
        if args.optimizer == "adam"
        else OptimizerSpec(kind="sgd_momentum", momentum=args.momentum)
    )
    train_cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        optimizer=opt,
        shuffle_seed=derive_seed(seed, 1),
        dropout_seed=derive_seed(seed, 2),
    )
    return head_cfg, train_cfg


def _load_features_for(
    manifest: dataset.DatasetManifest,
    cache_path: Path,
    expected_descriptor=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Join cached vectors to manifest records, in manifest order.

    When the caller names the extractor it wants (cache plus extractor
    flags), a cache built by any other extractor is refused as stale.
    """
    descriptor, vectors = feature_cache.read_cache(cache_path)
    if expected_descriptor is not None:
        feature_cache.check_descriptor(descriptor, expected_descriptor, cache_path)
    by_id = dict(vectors)
    missing = [rec.id for rec in manifest.records if rec.id not in by_id]
    if missing:
        shown = ", ".join(missing[:5])
        raise ScoutError(
            f"cache {cache_path} is missing {len(missing)} manifest record(s): {shown}"
            + ("..." if len(missing) > 5 else "")
        )
    extra = len(by_id) - (len(manifest) - len(missing))
    if extra > 0:
        logger.warning("cache holds %d vectors not in the manifest; ignoring them", extra)
    feats = np.stack([by_id[rec.id] for rec in manifest.records]).astype(np.float64)
    return feats, manifest.labels()


def _extract_features(args, manifest, seed: int) -> tuple[np.ndarray, np.ndarray, object]:
    extractor = make_extractor(
        stub=args.stub,
        backbone=args.backbone,
        dim=args.dim,
        sigma=args.sigma,
        separation=args.separation,
        seed=derive_seed(seed, 4),
        preprocess=args.preprocess,
    )
    pairs = extract_manifest(
        manifest,
        extractor,
        images_root=Path(args.images_root) if args.images_root else None,
    )
    feats = np.stack([vec for _, vec in pairs]).astype(np.float64)
    return feats, manifest.labels(), extractor


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
    if len(manifest) == 0:
        print("no records", file=sys.stderr)
        return 1
    hist = dataset.class_histogram(manifest)
    print(f"manifest {args.manifest}: {len(manifest)} records, all valid")
    print(dataset.histogram_table(hist))
    return 0


def cmd_balance(args) -> int:
    manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
    targets = _parse_targets(args.targets)
    balanced = dataset.balance_truncate(manifest, targets, seed=derive_seed(args.seed, 5))
    out = Path(args.out)
    audit = RunAudit("balance", out.parent)
    dataset.save_manifest(balanced, out)
    audit.resolved = {"manifest": str(args.manifest), "targets": list(targets), "seed": args.seed}
    audit.outputs["balanced_manifest"] = str(out)
    audit.write()
    print("before:")
    print(dataset.histogram_table(dataset.class_histogram(manifest)))
    print("after:")
    print(dataset.histogram_table(dataset.class_histogram(balanced)))
    return 0


def cmd_extract(args) -> int:
    manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
    out = Path(args.out)
    audit = RunAudit("extract", out.parent)
    feats, _, extractor = _extract_features(args, manifest, args.seed)
    pairs = [(rec.id, feats[i].astype(np.float32)) for i, rec in enumerate(manifest.records)]
    feature_cache.write_cache(out, pairs, extractor.descriptor)
    audit.resolved = {
        "manifest": str(args.manifest),
        "extractor": extractor.descriptor.identity,
        "dim": extractor.descriptor.dim,
        "seed": args.seed,
    }
    audit.outputs["feature_cache"] = str(out)
    audit.write()
    print(f"wrote {len(pairs)} vectors (dim {extractor.descriptor.dim}) to {out}")
    return 0


def cmd_train(args) -> int:
    manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
    out_dir = Path(args.out)
    audit = RunAudit("train", out_dir)
    feats, labels = _load_features_for(manifest, Path(args.features))
    head_cfg, train_cfg = _head_train_cfg(args, feats.shape[1], args.seed)
    model, history = train(init_head(head_cfg), feats, labels, train_cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = Path(args.save_model) if args.save_model else out_dir / "model.bin"
    save_model(model, model_path)
    history_path = out_dir / "history.json"
    history_path.write_text(
        json.dumps(
            {"epoch_loss": history.epoch_loss, "epoch_accuracy": history.epoch_accuracy},
            indent=2,
        ),
        encoding="utf-8",
    )
    audit.resolved = {
        "manifest": str(args.manifest),
        "features": str(args.features),
        "head": search_mod.head_cfg_to_dict(head_cfg),
        "train": search_mod.train_cfg_to_dict(train_cfg),
        "seed": args.seed,
    }
    audit.outputs.update({"model": str(model_path), "history": str(history_path)})
    audit.write()
    print(
        f"trained on {len(feats)} records; final epoch loss "
        f"{history.epoch_loss[-1]:.4f}, accuracy {history.epoch_accuracy[-1] * 100:.2f}%"
    )
    return 0


def cmd_cv(args) -> int:
    manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
    out_dir = Path(args.out)
    audit = RunAudit("cv", out_dir)
    resolved: dict = {"manifest": str(args.manifest), "seed": args.seed, "k": args.k}
    if args.balance:
        targets = _parse_targets(args.targets)
        manifest = dataset.balance_truncate(manifest, targets, seed=derive_seed(args.seed, 5))
        resolved["balance_targets"] = list(targets)
    if args.features:
        expected = None
        if args.stub or args.backbone:
            expected = make_extractor(
                stub=args.stub,
                backbone=args.backbone,
                dim=args.dim,
                sigma=args.sigma,
                separation=args.separation,
                seed=derive_seed(args.seed, 4),
                preprocess=args.preprocess,
            ).descriptor
        feats, labels = _load_features_for(manifest, Path(args.features), expected)
        resolved["features"] = str(args.features)
    else:
        feats, labels, extractor = _extract_features(args, manifest, args.seed)
        resolved["extractor"] = extractor.descriptor.identity
        if args.cache_out:
            pairs = [(rec.id, feats[i].astype(np.float32)) for i, rec in enumerate(manifest.records)]
            feature_cache.write_cache(args.cache_out, pairs, extractor.descriptor)
            audit.outputs["feature_cache"] = str(args.cache_out)
    head_cfg, train_cfg = _head_train_cfg(args, feats.shape[1], args.seed)
    cid = search_mod.config_id(head_cfg, train_cfg)
    report = cross_validate(
        head_cfg,
        train_cfg,
        feats,
        labels,
        k=args.k,
        fold_seed=derive_seed(args.seed, 3),
        stratified=not args.no_stratify,
        config_id=cid,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True), encoding="utf-8"
    )
    confusion_path = out_dir / "confusion.txt"
    confusion_path.write_text(render_report(report) + "\n", encoding="utf-8")
    audit.outputs.update({"report": str(report_path), "confusion": str(confusion_path)})
    if args.save_model:
        model, _ = train(init_head(head_cfg), feats, labels, train_cfg)
        save_model(model, args.save_model)
        audit.outputs["model"] = str(args.save_model)
    resolved["head"] = search_mod.head_cfg_to_dict(head_cfg)
    resolved["train"] = search_mod.train_cfg_to_dict(train_cfg)
    resolved["stratified"] = not args.no_stratify
    audit.resolved = resolved
    audit.write()
    print(render_report(report))
    return 0


def cmd_search(args) -> int:
    manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
    out_dir = Path(args.out)
    audit = RunAudit("search", out_dir)
    feats, labels = _load_features_for(manifest, Path(args.features))
    space = search_mod.load_space(args.space)
    configs = search_mod.enumerate_configs(space, input_dim=feats.shape[1])
    print(f"search space: {len(configs)} configs")
    records = search_mod.run_experiments(
        configs,
        feats,
        labels,
        k=args.k,
        out_dir=out_dir,
        parallelism=args.parallel,
        fold_seed=derive_seed(args.seed, 3),
    )
    policy = _policy_from(args)
    ranking_path = out_dir / "ranking.csv"
    search_mod.write_ranking_csv(records, ranking_path, policy)
    _, winner_index, justification = search_mod.rank(records, policy)
    best_path = out_dir / "best.json"
    best_path.write_text(
        json.dumps(
            {
                "config_id": records[winner_index].config_id,
                "fallback": justification.fallback,
                "reason": justification.reason,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    audit.resolved = {
        "space": str(args.space),
        "features": str(args.features),
        "manifest": str(args.manifest),
        "k": args.k,
        "parallel": args.parallel,
        "seed": args.seed,
        "configs": len(configs),
    }
    audit.outputs.update({"ranking": str(ranking_path), "best": str(best_path)})
    audit.write()
    failed = sum(1 for r in records if not r.ok)
    print(f"completed {len(records)} experiments ({failed} failed)")
    print(f"best config: {records[winner_index].config_id} ({justification.reason})")
    return 0


def _policy_from(args) -> SelectionPolicy:
    focus = tuple(QualityClass(c) for c in _parse_int_list(args.focus, "--focus"))
    return SelectionPolicy(focus_classes=focus, min_predictions=args.min_predictions)


def cmd_rank(args) -> int:
    records_dir = Path(args.records)
    files = sorted(records_dir.glob("*.json"))
    records = []
    for f in files:
        if f.name in ("best.json", "run.json"):
            continue
        data = json.loads(f.read_text(encoding="utf-8"))
        if "config_id" in data and "head" in data:
            records.append(search_mod.record_from_dict(data))
    if not records:
        print(f"no experiment records found under {records_dir}", file=sys.stderr)
        return 1
    policy = _policy_from(args)
    out = Path(args.out)
    audit = RunAudit("rank", out.parent)
    search_mod.write_ranking_csv(records, out, policy)
    ordered, winner_index, justification = search_mod.rank(records, policy)
    audit.resolved = {
        "records": str(records_dir),
        "focus": args.focus,
        "min_predictions": args.min_predictions,
    }
    audit.outputs["ranking"] = str(out)
    audit.write()
    print(f"ranked {len(records)} records -> {out}")
    print(f"best config: {records[winner_index].config_id} ({justification.reason})")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    out = Path(args.out)
    audit = RunAudit("predict", out.parent)
    if args.features:
        descriptor, vectors = feature_cache.read_cache(args.features)
        if descriptor.dim != model.config.input_dim:
            raise ScoutError(
                f"cache dim {descriptor.dim} does not match model input_dim "
                f"{model.config.input_dim}"
            )
        pairs = vectors
        source = str(args.features)
    else:
        manifest = dataset.load_manifest(args.manifest, _year_bounds(args))
        extractor = make_extractor(
            stub=args.stub,
            backbone=args.backbone,
            dim=args.dim,
            sigma=args.sigma,
            separation=args.separation,
            seed=derive_seed(args.seed, 4),
            preprocess=args.preprocess,
        )
        if extractor.descriptor.dim != model.config.input_dim:
            raise ScoutError(
                f"extractor dim {extractor.descriptor.dim} does not match model input_dim "
                f"{model.config.input_dim}"
            )
        pairs = extract_manifest(
            manifest,
            extractor,
            images_root=Path(args.images_root) if args.images_root else None,
            skip_unreadable=True,
        )
        source = str(args.manifest)
    rows = []
    for rid, vec in pairs:
        classes, probs = predict(model, np.asarray(vec, dtype=np.float64)[None, :])
        rows.append((rid, int(classes[0]), probs[0]))
    # most promising first: class descending, then confidence in the top class
    rows.sort(key=lambda r: (-r[1], -r[2][QualityClass.EXCELLENT.value], r[0]))
    lines = ["id,predicted_code,predicted_class," + ",".join(f"p{c}" for c in range(5))]
    for rid, code, probs in rows:
        prob_text = ",".join(f"{p:.6f}" for p in probs)
        lines.append(f"{rid},{code},{QualityClass(code).display_name},{prob_text}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    audit.resolved = {"model": str(args.model), "inputs": source, "seed": args.seed}
    audit.outputs["predictions"] = str(out)
    audit.write()
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


def cmd_report(args) -> int:
    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    report = report_from_dict(data)
    print(render_report(report))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_year_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--year-min", type=int, default=1990, help="lowest accepted draft year")
    p.add_argument("--year-max", type=int, default=2019, help="highest accepted draft year")
    p.add_argument("--no-year-bounds", action="store_true", help="disable draft-year validation")


def _add_extractor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stub", choices=["hash", "centroid"], help="synthetic feature source")
    p.add_argument("--backbone", help="interchange backbone model file")
    p.add_argument("--dim", type=int, default=64, help="stub feature dimension")
    p.add_argument("--sigma", type=float, default=1.0, help="centroid stub noise scale")
    p.add_argument("--separation", type=float, default=6.0, help="centroid stub class separation")
    p.add_argument("--preprocess", default=None, help="preprocessing preset for backbones")
    p.add_argument("--images-root", default=None, help="directory image_ref paths resolve against")


def _add_head_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--widths", default="64", help="hidden layer widths, e.g. 300,300,300")
    p.add_argument("--dropout", type=float, default=0.0, help="dropout rate on hidden layers")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--momentum", type=float, default=0.9, help="momentum for --optimizer sgd")


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--focus", default="3,4", help="focus class codes for selection")
    p.add_argument(
        "--min-predictions",
        type=int,
        default=20,
        help="fewest predictions a focus class needs before its quality counts",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoutcv",
        description="talent classification pipeline: manifests, features, heads, evaluation",
    )
    parser.add_argument("--verbose", "-v", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a manifest and print its class histogram")
    p.add_argument("manifest")
    _add_year_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("balance", help="truncate over-represented classes to target counts")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="balanced manifest path")
    p.add_argument("--targets", default=",".join(map(str, DEFAULT_BALANCE_TARGETS)))
    p.add_argument("--seed", type=int, default=0)
    _add_year_flags(p)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("extract", help="extract feature vectors into a binary cache")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="feature cache path")
    p.add_argument("--seed", type=int, default=0)
    _add_extractor_flags(p)
    _add_year_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a head on every record in a feature cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--save-model", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_head_train_flags(p)
    _add_year_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="cross-validated pipeline: balance, extract, evaluate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", default=None, help="precomputed feature cache")
    p.add_argument("--cache-out", default=None, help="persist extracted features here")
    p.add_argument("--balance", action="store_true", help="apply class truncation first")
    p.add_argument("--targets", default=",".join(map(str, DEFAULT_BALANCE_TARGETS)))
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--save-model", default=None, help="also train on all data and save")
    p.add_argument("--seed", type=int, default=0)
    _add_extractor_flags(p)
    _add_head_train_flags(p)
    _add_year_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("search", help="run a hyperparameter sweep from a space file")
    p.add_argument("--space", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", required=True, help="sweep directory")
    p.add_argument("--seed", type=int, default=0)
    _add_policy_flags(p)
    _add_year_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("rank", help="rank the records of an existing sweep directory")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="ranking csv path")
    _add_policy_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("predict", help="rank prospects with a trained model")
    p.add_argument("--model", "--load-model", dest="model", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", required=True, help="prediction table path")
    p.add_argument("--seed", type=int, default=0)
    _add_extractor_flags(p)
    _add_year_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render a report JSON as a labeled text grid")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "predict" and not args.features and not args.manifest:
        print("predict needs --features or --manifest", file=sys.stderr)
        return 1
    if args.command == "cv" and not args.features and not args.stub and not args.backbone:
        print("cv needs --features, --stub, or --backbone", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ScoutError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort contract boundary
        logger.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
