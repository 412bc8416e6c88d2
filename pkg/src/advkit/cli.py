"""Command-line pipeline driver.

One JSON config document describes a whole experiment; each subcommand
reads the section it needs and writes its outputs under ``output_dir``.
Everything is deterministic under a fixed config, all files are written
atomically, and failures exit with a machine-parsable category:

* exit 2, ``error:config:`` — bad config, bad names, refusing to overwrite
* exit 3, ``error:data:`` — missing/corrupt files on disk
* exit 4, ``error:invariant:`` — an attack budget or audit check failed
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .attacks import AttackConfig, AttackGoal, GatingPolicy, fgsm, igsm, iterative_ensemble_attack
from .datasets import Dataset, collection_id, load_datasets, save_datasets, synthetic_dataset
from .errors import ConfigError, DataError, InvariantViolation
from .evaluation import (
    EvalSpec,
    assign_goals,
    eligible_indices,
    eval_report_csv,
    iteration_sweep,
    matrix_results_doc,
    report_json,
    run_eval,
    subsample_indices,
    sweep_report_csv,
    sweep_results_doc,
)
from .ioutil import atomic_write_text, canonical_json
from .models import (
    DEFAULT_DATASET_SEED,
    DEFAULT_HYPER,
    ZOO_ENTRIES,
    accuracy,
    load_model,
    model_content_hash,
    save_model,
    train_zoo,
)

MANIFEST_NAME = "manifest.json"
DEFAULT_GRID = (1, 2, 5, 10, 20, 40, 80)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def _schema() -> dict:
    text = resources.files("advkit").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_config(path: str | Path) -> dict:
    """Parse and strictly validate a run configuration."""
    try:
        raw = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {first.message}")
    return doc


def _section(config: dict, name: str) -> dict:
    if name not in config:
        raise ConfigError(f"config has no {name!r} section")
    return config[name]


def _gating_from(doc: dict | None) -> GatingPolicy:
    if doc is None:
        return GatingPolicy.always_on()
    kind = doc["kind"]
    if kind == "always_on":
        return GatingPolicy.always_on()
    if kind == "loss_threshold":
        return GatingPolicy.loss_threshold(doc.get("tau", 0.01))
    if "iters_per_model" not in doc:
        raise ConfigError("preassigned gating requires iters_per_model")
    return GatingPolicy.preassigned(tuple(doc["iters_per_model"]))


def _out_path(config: dict, relative: str) -> Path:
    return Path(config["output_dir"]) / relative


def _refuse_existing(paths: list[Path], force: bool) -> None:
    if force:
        return
    existing = [str(p) for p in paths if p.exists()]
    if existing:
        raise ConfigError(
            f"refusing to overwrite existing outputs (pass --force): {existing}"
        )


def _dataset_seed(config: dict) -> int:
    section = config.get("dataset", {})
    if "seed" in section:
        return section["seed"]
    return config.get("global_seed", DEFAULT_DATASET_SEED)


def _load_split(config: dict, split: str) -> Dataset:
    stem = _out_path(config, _section(config, "dataset")["stem"])
    splits = load_datasets(stem)
    if split not in splits:
        raise DataError(f"dataset at {stem} has no {split!r} split")
    return splits[split]


def _load_zoo(config: dict, names: list[str]) -> dict:
    zoo_dir = _out_path(config, config.get("zoo", {}).get("dir", "models"))
    return {name: load_model(zoo_dir / f"{name}.json") for name in names}


def _entries_for(config: dict):
    wanted = config.get("zoo", {}).get("entries")
    if wanted is None:
        return ZOO_ENTRIES
    by_name = {e.name: e for e in ZOO_ENTRIES}
    unknown = [n for n in wanted if n not in by_name]
    if unknown:
        raise ConfigError(
            f"unknown zoo entries {unknown}; known: {sorted(by_name)}"
        )
    return tuple(by_name[n] for n in wanted)


def _eval_spec(section: dict, *, sources, victims) -> EvalSpec:
    config = AttackConfig(
        epsilon=section.get("epsilon", 0.1),
        alpha=section.get("alpha", 0.01),
        iterations=section.get("iterations", 20),
    )
    return EvalSpec(
        config=config,
        sources=tuple(tuple(s) for s in sources),
        victims=tuple(victims),
        attack=section.get("kind", "igsm"),
        goal_mode=section.get("goal", "targeted"),
        target_rule=section.get("target_rule", "random"),
        target_class=section.get("target_class"),
        target_seed=section.get("target_seed", 42),
        n_images=section.get("n_images", 100),
        image_seed=section.get("image_seed", 0),
        gating=_gating_from(section.get("gating")),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(config: dict, force: bool) -> int:
    section = _section(config, "dataset")
    stem = _out_path(config, section["stem"])
    targets = [
        stem.parent / f"{stem.name}.json",
        stem.parent / f"{stem.name}.images.bin",
        stem.parent / f"{stem.name}.labels.bin",
    ]
    _refuse_existing(targets, force)
    train_ds, test_ds = synthetic_dataset(
        _dataset_seed(config),
        num_classes=section.get("num_classes", 10),
        n_train=section.get("n_train", 2000),
        n_test=section.get("n_test", 500),
    )
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_datasets(stem, {"train": train_ds, "test": test_ds})
    print(f"dataset_id {train_ds.dataset_id}")
    print(f"wrote {stem}.json ({len(train_ds)} train / {len(test_ds)} test)")
    return 0


def cmd_train(config: dict, force: bool) -> int:
    train_ds = _load_split(config, "train")
    test_ds = _load_split(config, "test")
    entries = _entries_for(config)
    zoo_dir = _out_path(config, config.get("zoo", {}).get("dir", "models"))
    targets = [zoo_dir / f"{e.name}.json" for e in entries] + [zoo_dir / MANIFEST_NAME]
    _refuse_existing(targets, force)

    zoo = train_zoo(train_ds, DEFAULT_HYPER, entries)
    zoo_dir.mkdir(parents=True, exist_ok=True)
    manifest_models = {}
    for entry in entries:
        model = zoo[entry.name]
        path = zoo_dir / f"{entry.name}.json"
        save_model(model, path)
        manifest_models[entry.name] = {
            "path": path.name,
            "hash": model_content_hash(model),
            "test_accuracy": accuracy(model, test_ds),
            "architecture": entry.architecture,
            "training_kind": entry.training_kind,
            "train_epsilon": entry.train_epsilon,
            "seed": entry.seed,
            "lr": entry.lr,
            "epochs": DEFAULT_HYPER.epochs,
            "batch_size": DEFAULT_HYPER.batch_size,
        }
    manifest = {
        "created_with": 1,
        "dataset_id": train_ds.dataset_id,
        "models": manifest_models,
    }
    atomic_write_text(zoo_dir / MANIFEST_NAME, canonical_json(manifest) + "\n")
    for name, info in manifest_models.items():
        print(f"trained {name} acc={info['test_accuracy']} hash={info['hash'][:12]}")
    print(f"wrote {zoo_dir / MANIFEST_NAME}")
    return 0


def cmd_attack(config: dict, force: bool) -> int:
    section = _section(config, "attack")
    test_ds = _load_split(config, "test")
    spec = _eval_spec(section, sources=[section["source"]], victims=section["source"])
    zoo = _load_zoo(config, list(dict.fromkeys(section["source"])))
    models = [zoo[name] for name in section["source"]]

    stem = _out_path(config, section["out_stem"])
    targets = [
        stem.parent / f"{stem.name}.json",
        stem.parent / f"{stem.name}.images.bin",
        stem.parent / f"{stem.name}.labels.bin",
        stem.parent / f"{stem.name}.trace.json",
    ]
    _refuse_existing(targets, force)

    exclude = None
    if spec.goal_mode == "targeted" and spec.target_rule == "fixed":
        exclude = int(spec.target_class)
    pool = eligible_indices(models, test_ds, exclude_class=exclude)
    indices = subsample_indices(pool, spec.n_images, spec.image_seed)
    goals = assign_goals(spec, test_ds, indices, models)

    adv_images = np.empty((len(indices),) + test_ds.image_shape)
    per_image = []
    max_linf = 0.0
    max_l2 = 0.0
    for row, (i, goal) in enumerate(zip(indices, goals)):
        x = test_ds.images[i]
        if spec.attack == "fgsm":
            x_adv = fgsm(models[0], x, goal, spec.config.epsilon)
        elif spec.attack == "igsm":
            x_adv = igsm(models[0], x, goal, spec.config).x_adv
        else:
            x_adv = iterative_ensemble_attack(
                models, x, goal, spec.config, spec.gating
            ).x_adv
        delta = x_adv - x
        linf = float(np.max(np.abs(delta)))
        l2 = float(np.sqrt(np.sum(delta * delta)))
        if linf > spec.config.epsilon + 1e-12:
            raise InvariantViolation(
                f"attack broke the l-inf budget on image {i}: {linf}"
            )
        max_linf = max(max_linf, linf)
        max_l2 = max(max_l2, l2)
        adv_images[row] = x_adv
        hits = {}
        for name in dict.fromkeys(section["source"]):
            pred = zoo[name].predict(x_adv)
            hits[name] = bool(
                pred == goal.class_index
                if goal.is_targeted
                else pred != goal.class_index
            )
        per_image.append(
            {
                "index": int(i),
                "true_class": int(test_ds.labels[i]),
                "goal": spec.goal_mode,
                "class_index": goal.class_index,
                "linf": linf,
                "l2": l2,
                "success": hits,
            }
        )

    labels = np.array([int(test_ds.labels[i]) for i in indices])
    archive_id = collection_id(
        test_ds.num_classes, test_ds.image_shape, {"adv": (adv_images, labels)}
    )
    archive = Dataset(
        adv_images, labels, "adv", test_ds.num_classes, archive_id
    )
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_datasets(stem, {"adv": archive})
    trace_doc = {
        "created_with": 1,
        "attack": spec.to_doc(),
        "source_dataset_id": test_ds.dataset_id,
        "archive_id": archive_id,
        "audit": {"max_linf": max_linf, "max_l2": max_l2, "domain_violations": 0},
        "per_image": per_image,
    }
    atomic_write_text(
        stem.parent / f"{stem.name}.trace.json", canonical_json(trace_doc) + "\n"
    )
    n_hit = sum(all(p["success"].values()) for p in per_image)
    print(f"attacked {len(indices)} images; all-source success {n_hit}/{len(indices)}")
    print(f"audit max_linf={max_linf} domain_violations=0")
    print(f"wrote {stem}.json")
    return 0


def cmd_eval(config: dict, force: bool) -> int:
    section = _section(config, "eval")
    test_ds = _load_split(config, "test")
    spec = _eval_spec(
        section, sources=section["sources"], victims=section["victims"]
    )
    names = sorted(
        {n for members in section["sources"] for n in members}
        | set(section["victims"])
    )
    zoo = _load_zoo(config, names)

    stem = _out_path(config, section["report_stem"])
    csv_path = stem.parent / f"{stem.name}.csv"
    json_path = stem.parent / f"{stem.name}.json"
    _refuse_existing([csv_path, json_path], force)

    matrix = run_eval(zoo, test_ds, spec)
    stem.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(csv_path, eval_report_csv(matrix))
    atomic_write_text(json_path, report_json(spec, zoo, matrix_results_doc(matrix)))
    for cell in matrix.cells:
        tag = "white-box" if cell.white_box else "transfer"
        print(
            f"{cell.source} -> {cell.victim} [{tag}] "
            f"{cell.n_success}/{cell.n_images} rate={cell.rate}"
        )
    print(f"wrote {csv_path}")
    return 0


def cmd_sweep(config: dict, force: bool) -> int:
    section = _section(config, "sweep")
    test_ds = _load_split(config, "test")
    grid = tuple(section.get("grid", DEFAULT_GRID))
    spec = _eval_spec(
        {**section, "kind": "ensemble", "iterations": max(grid)},
        sources=[section["members"]],
        victims=section["members"],
    )
    zoo = _load_zoo(config, list(dict.fromkeys(section["members"])))

    stem = _out_path(config, section["report_stem"])
    csv_path = stem.parent / f"{stem.name}.csv"
    json_path = stem.parent / f"{stem.name}.json"
    _refuse_existing([csv_path, json_path], force)

    sweep = iteration_sweep(zoo, test_ds, spec, grid)
    stem.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(csv_path, sweep_report_csv(sweep))
    atomic_write_text(json_path, report_json(spec, zoo, sweep_results_doc(sweep)))
    for member in sweep.members:
        cross = sweep.threshold_iterations(member)
        label = cross if cross is not None else "never"
        print(f"{member}: reaches 90% at N={label}")
    print(f"wrote {csv_path}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advkit",
        description="Train small classifiers, attack them, measure transfer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a run config JSON")
        p.add_argument("--output-dir", help="override the config's output_dir")
        p.add_argument("--seed", type=int, help="override the config's global_seed")
        p.add_argument(
            "--force", action="store_true", help="overwrite existing outputs"
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.output_dir is not None:
            config["output_dir"] = args.output_dir
        if args.seed is not None:
            config["global_seed"] = args.seed
        return COMMANDS[args.command](config, force=args.force)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return 3
    except InvariantViolation as exc:
        print(f"error:invariant: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
