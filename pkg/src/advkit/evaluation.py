"""Success-rate measurement over a model zoo.

Takes the attacks from :mod:`advkit.attacks` and turns them into
numbers: white-box and transfer success matrices, iterations-vs-success
sweep curves, and deterministic CSV/JSON renderings of both.  Every
adversarial image is re-audited against the l-inf/domain budget at
scoring time; a violation here is a bug in the attack, not a data
point, so it raises.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .attacks import (
    LINF_SLACK,
    PIXEL_DOMAIN,
    AttackConfig,
    AttackGoal,
    GatingPolicy,
    fgsm,
    igsm,
    iterative_ensemble_attack,
)
from .datasets import Dataset
from .errors import ConfigError, DataError, InvariantViolation
from .ioutil import canonical_json
from .layers import softmax
from .models import TrainedModel, model_content_hash

REPORT_FORMAT_VERSION = 1

EVAL_CSV_HEADER = "source,victim,goal,epsilon,alpha,iterations,n_images,n_success,rate"
SWEEP_CSV_HEADER = "model,iterations,n_images,n_success,rate"

# Rate at which a sweep curve counts as having "reached" success.
SUCCESS_THRESHOLD = 0.9

ATTACK_KINDS = ("fgsm", "igsm", "ensemble")
GOAL_MODES = ("targeted", "untargeted")
TARGET_RULES = ("random", "fixed", "least_likely")


# ---------------------------------------------------------------------------
# Evaluation protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalSpec:
    """Everything needed to reproduce one evaluation run.

    ``sources`` is a tuple of attack configurations, each a tuple of
    zoo model names — a singleton is a single-model attack, anything
    longer is an ensemble.  The same adversarial images are scored
    against every name in ``victims``.
    """

    config: AttackConfig
    sources: tuple[tuple[str, ...], ...]
    victims: tuple[str, ...]
    attack: str = "igsm"
    goal_mode: str = "targeted"
    target_rule: str = "random"
    target_class: int | None = None
    target_seed: int = 42
    n_images: int = 100
    image_seed: int = 0
    gating: GatingPolicy = field(default_factory=GatingPolicy.always_on)

    def __post_init__(self):
        if self.attack not in ATTACK_KINDS:
            raise ConfigError(
                f"unknown attack kind {self.attack!r}; expected one of {ATTACK_KINDS}"
            )
        if self.goal_mode not in GOAL_MODES:
            raise ConfigError(
                f"unknown goal mode {self.goal_mode!r}; expected one of {GOAL_MODES}"
            )
        if self.target_rule not in TARGET_RULES:
            raise ConfigError(
                f"unknown target rule {self.target_rule!r}; expected one of {TARGET_RULES}"
            )
        if not self.sources:
            raise ConfigError("at least one source configuration is required")
        if not self.victims:
            raise ConfigError("at least one victim is required")
        for members in self.sources:
            if not members:
                raise ConfigError("source configurations must name at least one model")
            if self.attack in ("fgsm", "igsm") and len(members) != 1:
                raise ConfigError(
                    f"{self.attack} attacks a single model; "
                    f"got source {source_label(members)!r}"
                )
        if self.goal_mode == "targeted" and self.target_rule == "fixed":
            if self.target_class is None:
                raise ConfigError("target_rule 'fixed' requires target_class")
        if self.n_images < 1:
            raise ConfigError(f"n_images must be >= 1, got {self.n_images}")

    def to_doc(self) -> dict:
        """JSON-ready description, embedded in reports as provenance."""
        return {
            "attack": self.attack,
            "epsilon": self.config.epsilon,
            "alpha": self.config.alpha,
            "iterations": self.config.iterations,
            "sources": [list(members) for members in self.sources],
            "victims": list(self.victims),
            "goal_mode": self.goal_mode,
            "target_rule": self.target_rule,
            "target_class": self.target_class,
            "target_seed": self.target_seed,
            "n_images": self.n_images,
            "image_seed": self.image_seed,
            "gating": {
                "kind": self.gating.kind,
                "tau": self.gating.tau,
                "iters_per_model": list(self.gating.iters_per_model),
            },
        }


def source_label(members: Sequence[str]) -> str:
    return "+".join(members)


@dataclass(frozen=True)
class CellResult:
    """One (source, victim) cell: paired per-image outcomes plus totals."""

    source: str
    victim: str
    goal: str
    epsilon: float
    alpha: float
    iterations: int
    white_box: bool
    outcomes: tuple[bool, ...]

    @property
    def n_images(self) -> int:
        return len(self.outcomes)

    @property
    def n_success(self) -> int:
        return sum(self.outcomes)

    @property
    def rate(self) -> float:
        return self.n_success / self.n_images


@dataclass(frozen=True)
class TransferMatrix:
    """Rows = source attack configurations, columns = victim models."""

    sources: tuple[str, ...]
    victims: tuple[str, ...]
    cells: tuple[CellResult, ...]
    image_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.cells) != len(self.sources) * len(self.victims):
            raise InvariantViolation(
                f"expected {len(self.sources) * len(self.victims)} cells, "
                f"got {len(self.cells)}"
            )

    def cell(self, source: str, victim: str) -> CellResult:
        for c in self.cells:
            if c.source == source and c.victim == victim:
                return c
        raise KeyError(f"no cell for source={source!r} victim={victim!r}")


@dataclass(frozen=True)
class SweepResult:
    """Per-member white-box success counts along an iteration grid."""

    members: tuple[str, ...]
    grid: tuple[int, ...]
    counts: tuple[tuple[int, ...], ...]
    n_images: int
    epsilon: float
    alpha: float

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise InvariantViolation(f"grid must be strictly increasing: {self.grid}")
        if len(self.counts) != len(self.members):
            raise InvariantViolation("one count row per member required")

    def rate(self, member: str, iterations: int) -> float:
        row = self.counts[self.members.index(member)]
        return row[self.grid.index(iterations)] / self.n_images

    def threshold_iterations(
        self, member: str, level: float = SUCCESS_THRESHOLD
    ) -> int | None:
        """Smallest grid budget whose success rate reaches ``level``."""
        row = self.counts[self.members.index(member)]
        for n, hits in zip(self.grid, row):
            if hits / self.n_images >= level:
                return n
        return None


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def success(model, x_adv, goal: AttackGoal) -> bool:
    """Targeted: predicted the target.  Untargeted: left the true class."""
    pred = model.predict(x_adv)
    if goal.is_targeted:
        return pred == goal.class_index
    return pred != goal.class_index


def _audit(x_adv, x_clean, epsilon: float) -> None:
    linf = float(np.max(np.abs(x_adv - x_clean))) if x_adv.size else 0.0
    if linf > epsilon + LINF_SLACK:
        raise InvariantViolation(
            f"scored image breaks the l-inf budget: {linf} > {epsilon}"
        )
    lo, hi = PIXEL_DOMAIN
    if float(np.min(x_adv)) < lo or float(np.max(x_adv)) > hi:
        raise InvariantViolation("scored image leaves the pixel domain")


def eligible_indices(
    models: Sequence[TrainedModel],
    dataset: Dataset,
    *,
    exclude_class: int | None = None,
) -> list[int]:
    """Images every model classifies correctly on the clean input."""
    keep = []
    for i in range(len(dataset)):
        if exclude_class is not None and int(dataset.labels[i]) == exclude_class:
            continue
        x, y = dataset.images[i], int(dataset.labels[i])
        if all(m.predict(x) == y for m in models):
            keep.append(i)
    return keep


def subsample_indices(indices: list[int], n_images: int, seed: int) -> tuple[int, ...]:
    if not indices:
        raise DataError("no images survive the correctly-classified-by-all filter")
    if len(indices) <= n_images:
        return tuple(indices)
    rng = np.random.default_rng(seed)
    picked = rng.permutation(len(indices))[:n_images]
    return tuple(sorted(indices[j] for j in picked))


def assign_goals(
    spec: EvalSpec,
    dataset: Dataset,
    indices: Sequence[int],
    source_models: Sequence[TrainedModel],
) -> list[AttackGoal]:
    """Per-image goals; random targets depend only on (seed, position)."""
    goals = []
    if spec.goal_mode == "untargeted":
        return [AttackGoal.untargeted(int(dataset.labels[i])) for i in indices]
    rng = np.random.default_rng(spec.target_seed)
    for i in indices:
        y = int(dataset.labels[i])
        if spec.target_rule == "fixed":
            t = int(spec.target_class)
        elif spec.target_rule == "random":
            t = int(rng.integers(0, dataset.num_classes - 1))
            t += t >= y
        else:  # least_likely under the source's mean clean prediction
            probs = np.mean(
                [softmax(m.forward_logits(dataset.images[i])) for m in source_models],
                axis=0,
            )
            order = np.argsort(probs, kind="stable")
            t = int(order[0]) if int(order[0]) != y else int(order[1])
        goals.append(AttackGoal.targeted(t))
    return goals


def _craft(spec: EvalSpec, models: Sequence[TrainedModel], x, goal: AttackGoal):
    if spec.attack == "fgsm":
        return fgsm(models[0], x, goal, spec.config.epsilon)
    if spec.attack == "igsm":
        return igsm(models[0], x, goal, spec.config).x_adv
    return iterative_ensemble_attack(models, x, goal, spec.config, spec.gating).x_adv


def run_eval(
    zoo: Mapping[str, TrainedModel], dataset: Dataset, spec: EvalSpec
) -> TransferMatrix:
    """Attack each image subset once per source, score against every victim.

    The image subset is shared across all sources and victims: images
    must be classified correctly by every model involved, then a seeded
    subsample of ``spec.n_images`` is fixed.  Outcomes are paired — cell
    ``outcomes[j]`` for every cell refers to the same clean image.
    """
    involved: list[str] = []
    for members in spec.sources:
        involved.extend(members)
    involved.extend(spec.victims)
    missing = [name for name in involved if name not in zoo]
    if missing:
        raise ConfigError(f"unknown zoo model names: {sorted(set(missing))}")
    involved_models = [zoo[name] for name in dict.fromkeys(involved)]

    exclude = None
    if spec.goal_mode == "targeted" and spec.target_rule == "fixed":
        exclude = int(spec.target_class)
    pool = eligible_indices(involved_models, dataset, exclude_class=exclude)
    indices = subsample_indices(pool, spec.n_images, spec.image_seed)

    cells = []
    for members in spec.sources:
        source_models = [zoo[name] for name in members]
        goals = assign_goals(spec, dataset, indices, source_models)
        crafted = []
        for i, goal in zip(indices, goals):
            x = dataset.images[i]
            x_adv = _craft(spec, source_models, x, goal)
            _audit(x_adv, x, spec.config.epsilon)
            crafted.append((x_adv, goal))
        for victim_name in spec.victims:
            victim = zoo[victim_name]
            outcomes = tuple(success(victim, x_adv, goal) for x_adv, goal in crafted)
            cells.append(
                CellResult(
                    source=source_label(members),
                    victim=victim_name,
                    goal=spec.goal_mode,
                    epsilon=spec.config.epsilon,
                    alpha=spec.config.alpha,
                    iterations=spec.config.iterations,
                    white_box=victim_name in members,
                    outcomes=outcomes,
                )
            )
    return TransferMatrix(
        sources=tuple(source_label(m) for m in spec.sources),
        victims=tuple(spec.victims),
        cells=tuple(cells),
        image_indices=indices,
    )


def iteration_sweep(
    zoo: Mapping[str, TrainedModel],
    dataset: Dataset,
    spec: EvalSpec,
    grid: Sequence[int],
) -> SweepResult:
    """White-box success of each ensemble member along an iteration grid.

    Runs one ensemble attack per image at the largest budget and scores
    the recorded per-step predictions at every grid point — valid
    because the iterate sequence is deterministic, so the first n steps
    of the long run are exactly the n-step run.
    """
    grid = tuple(int(n) for n in grid)
    if not grid or any(n < 1 for n in grid):
        raise ConfigError(f"iteration grid must be positive: {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"iteration grid must be strictly increasing: {grid}")
    if spec.attack != "ensemble":
        raise ConfigError("iteration sweeps use the ensemble attack")
    if len(spec.sources) != 1:
        raise ConfigError("iteration sweeps take exactly one source configuration")
    members = spec.sources[0]
    missing = [name for name in members if name not in zoo]
    if missing:
        raise ConfigError(f"unknown zoo model names: {sorted(set(missing))}")
    models = [zoo[name] for name in members]

    pool = eligible_indices(models, dataset)
    indices = subsample_indices(pool, spec.n_images, spec.image_seed)
    goals = assign_goals(spec, dataset, indices, models)

    config = replace(spec.config, iterations=max(grid))
    hits = np.zeros((len(members), len(grid)), dtype=int)
    for i, goal in zip(indices, goals):
        x = dataset.images[i]
        trace = iterative_ensemble_attack(models, x, goal, config, spec.gating)
        _audit(trace.x_adv, x, config.epsilon)
        for col, n in enumerate(grid):
            record = trace.steps[n - 1]
            for row in range(len(members)):
                pred = record.preds[row]
                ok = (
                    pred == goal.class_index
                    if goal.is_targeted
                    else pred != goal.class_index
                )
                hits[row, col] += ok
    return SweepResult(
        members=tuple(members),
        grid=grid,
        counts=tuple(tuple(int(h) for h in row) for row in hits),
        n_images=len(indices),
        epsilon=config.epsilon,
        alpha=config.alpha,
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def eval_report_csv(matrix: TransferMatrix) -> str:
    lines = [EVAL_CSV_HEADER]
    for c in matrix.cells:
        lines.append(
            f"{c.source},{c.victim},{c.goal},{_fmt(c.epsilon)},{_fmt(c.alpha)},"
            f"{c.iterations},{c.n_images},{c.n_success},{_fmt(c.rate)}"
        )
    return "\n".join(lines) + "\n"


def sweep_report_csv(sweep: SweepResult) -> str:
    lines = [SWEEP_CSV_HEADER]
    for row, member in enumerate(sweep.members):
        for col, n in enumerate(sweep.grid):
            hits = sweep.counts[row][col]
            lines.append(
                f"{member},{n},{sweep.n_images},{hits},{_fmt(hits / sweep.n_images)}"
            )
    return "\n".join(lines) + "\n"


def matrix_results_doc(matrix: TransferMatrix) -> list[dict]:
    return [
        {
            "source": c.source,
            "victim": c.victim,
            "goal": c.goal,
            "epsilon": c.epsilon,
            "alpha": c.alpha,
            "iterations": c.iterations,
            "white_box": c.white_box,
            "n_images": c.n_images,
            "n_success": c.n_success,
            "rate": c.rate,
            "outcomes": [bool(b) for b in c.outcomes],
        }
        for c in matrix.cells
    ]


def sweep_results_doc(sweep: SweepResult) -> list[dict]:
    out = []
    for row, member in enumerate(sweep.members):
        curve = [
            {"iterations": n, "n_success": sweep.counts[row][col]}
            for col, n in enumerate(sweep.grid)
        ]
        out.append(
            {
                "model": member,
                "n_images": sweep.n_images,
                "curve": curve,
                "threshold_iterations": sweep.threshold_iterations(member),
            }
        )
    return out


def report_json(
    spec: EvalSpec, zoo: Mapping[str, TrainedModel], results: list[dict]
) -> str:
    """Canonical JSON document: protocol, zoo hashes, and results."""
    doc = {
        "created_with": REPORT_FORMAT_VERSION,
        "spec": spec.to_doc(),
        "zoo_hashes": {name: model_content_hash(m) for name, m in zoo.items()},
        "results": results,
    }
    return canonical_json(doc) + "\n"
