"""Nested cross-validation: outer learning folds, inner matching folds.

The outer loop splits the dataset into disjoint folds (3 by default),
learns the feature transform on ONE fold, and evaluates on the union of
the remaining folds: separability coefficients over the evaluation
templates, then an inner loop (10 by default) that takes each inner fold
as probes against the other inner folds as gallery, accumulating
probe-to-identity distance records for the rank and threshold metrics.

Leakage is structural: the transform and the matching context are
functions of the learning fold only, and probes are stripped of their
labels before matching; true labels come back only for scoring. (The
context_source="gallery" option deliberately relaxes the context half of
that rule, re-estimating the metric from each inner iteration's gallery.)

Reports are deterministic: fold tasks are pure and internally sequential,
results are assembled in fold order, and captured warnings are
deduplicated and sorted, so the report bytes do not depend on how many
worker threads ran the folds.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import FlatSample, LabeledDataset, flatten
from .errors import ContractError, MarginforgeError, ValidationError
from .learners import identity_transform, learn_mmc, learn_pcalda
from .metrics_classification import (
    CurveSeries,
    DistanceRecord,
    _rates,
    cmc_curve,
    far_frr_curves,
    rcl_pcn_curve,
    roc_curve,
)
from .metrics_separability import SeparabilityReport, compute_separability
from .scatter import compute_scatter
from .template_space import build_matching_context, extract_template

PROTOCOL_METHODS = ("mmc", "pca_lda", "identity")
PAIR_POLICIES = ("all", "class_best")
CONTEXT_SOURCES = ("learning", "gallery")

# Common grid for pointwise curve averaging across folds.
GRID_POINTS = 1001


@dataclass(frozen=True)
class FoldPlan:
    """Index sets for the nested loops.

    outer_folds partition all sample indices. inner_folds[f] partitions
    the evaluation set of outer fold f (everything outside fold f).
    """

    outer_folds: tuple
    inner_folds: tuple
    seed: int
    stratified: bool = True

    @property
    def n_outer(self) -> int:
        return len(self.outer_folds)

    @property
    def n_inner(self) -> int:
        return len(self.inner_folds[0]) if self.inner_folds else 0

    def evaluation_indices(self, fold: int) -> tuple:
        return tuple(sorted(i for part in self.inner_folds[fold] for i in part))


def _deal(indices: Sequence[int], n_folds: int, offset: int) -> list:
    folds = [[] for _ in range(n_folds)]
    for k, idx in enumerate(indices):
        folds[(k + offset) % n_folds].append(idx)
    return folds


def plan_folds(
    dataset: LabeledDataset, outer: int = 3, inner: int = 10, seed: int = 0
) -> FoldPlan:
    """Stratified nested fold assignment, deterministic under seed.

    Each class is shuffled once and dealt round-robin to the outer folds
    (with a per-class offset so remainders spread evenly); the evaluation
    set of every outer fold is dealt the same way to the inner folds.
    Every class must have at least `outer` samples.
    """
    if outer < 2:
        raise ValidationError("need at least 2 outer folds")
    if inner < 2:
        raise ValidationError("need at least 2 inner folds")
    for label, members in dataset.class_index.items():
        if len(members) < outer:
            raise ValidationError(
                f"class {label!r} has {len(members)} samples; "
                f"need at least {outer} for {outer} outer folds"
            )

    rng = np.random.default_rng(seed)
    outer_folds = [[] for _ in range(outer)]
    for ci, label in enumerate(dataset.labels):
        members = np.array(dataset.class_index[label])
        shuffled = members[rng.permutation(len(members))]
        for k, part in enumerate(_deal(list(shuffled), outer, ci % outer)):
            outer_folds[k].extend(part)

    inner_folds = []
    for f in range(outer):
        in_fold = set(outer_folds[f])
        fold_parts = [[] for _ in range(inner)]
        for ci, label in enumerate(dataset.labels):
            members = np.array(
                [i for i in dataset.class_index[label] if i not in in_fold]
            )
            shuffled = members[rng.permutation(len(members))]
            for k, part in enumerate(_deal(list(shuffled), inner, ci % inner)):
                fold_parts[k].extend(part)
        inner_folds.append(tuple(tuple(sorted(p)) for p in fold_parts))

    return FoldPlan(
        outer_folds=tuple(tuple(sorted(f)) for f in outer_folds),
        inner_folds=tuple(inner_folds),
        seed=seed,
        stratified=True,
    )


@dataclass(frozen=True)
class ProtocolConfig:
    """Knobs of run_protocol that belong in the report's config echo.

    workers is deliberately not echoed: it cannot change any number in
    the report, and echoing it would break byte-identity across worker
    counts.
    """

    pair_policy: str = "all"
    context_source: str = "learning"
    pca_dim: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.pair_policy not in PAIR_POLICIES:
            raise ValidationError(f"unknown pair policy {self.pair_policy!r}")
        if self.context_source not in CONTEXT_SOURCES:
            raise ValidationError(
                f"unknown context source {self.context_source!r}"
            )
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


@dataclass(frozen=True)
class EvaluationReport:
    """Everything one protocol run produces."""

    separability: tuple
    curves: dict
    headline: dict
    config: dict
    warnings: tuple

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "headline": self.headline,
            "separability": [s.to_json_dict() for s in self.separability],
            "curves": {k: c.to_json_dict() for k, c in self.curves.items()},
            "warnings": list(self.warnings),
        }


@dataclass
class _FoldResult:
    separability: SeparabilityReport
    scalars: dict
    cmc_y: np.ndarray
    far_grid: np.ndarray
    frr_grid: np.ndarray
    tar_grid: np.ndarray
    precision_grid: np.ndarray


def _probe_distances(
    probe_vector: np.ndarray,
    gallery_vectors: np.ndarray,
    inverse: np.ndarray,
) -> np.ndarray:
    gaps = gallery_vectors - probe_vector
    d2 = np.einsum("ni,ij,nj->n", gaps, inverse, gaps)
    return np.sqrt(np.clip(d2, 0.0, None))


def _quantile_resample(
    records: Sequence[DistanceRecord], rows: Sequence[tuple], grid: np.ndarray
):
    # Parameterize the sweep by the empirical quantile of each threshold
    # among all observed distances; folds then share the [0, 1] axis.
    # The +inf sentinel duplicates the largest threshold's rates and is
    # dropped; -inf lands at quantile 0 by itself.
    distances = np.sort([r.distance for r in records])
    taus = np.array([row[0] for row in rows])
    keep = taus < np.inf
    qs = np.searchsorted(distances, taus[keep], side="right") / len(distances)
    fars = np.array([row[1] for row in rows])[keep]
    frrs = np.array([row[2] for row in rows])[keep]
    return np.interp(grid, qs, fars), np.interp(grid, qs, frrs)


def _run_fold(
    fold: int,
    flats: Sequence[FlatSample],
    true_labels: Sequence[str],
    method: str,
    plan: FoldPlan,
    config: ProtocolConfig,
    grid: np.ndarray,
) -> _FoldResult:
    learn_idx = plan.outer_folds[fold]
    learning = [flats[i] for i in learn_idx]
    if method == "identity":
        transform = identity_transform(flats[0].dimension)
    else:
        stats = compute_scatter(learning)
        if method == "mmc":
            transform = learn_mmc(stats, learning)
        else:
            transform = learn_pcalda(stats, learning, config.pca_dim)

    learning_templates = [extract_template(transform, f) for f in learning]
    fold_context = build_matching_context(transform, learning_templates)

    eval_idx = plan.evaluation_indices(fold)
    template_of = {i: extract_template(transform, flats[i]) for i in eval_idx}
    separability = compute_separability(
        [template_of[i] for i in eval_idx], fold_context
    )

    records = []
    for probe_part in plan.inner_folds[fold]:
        if not probe_part:
            continue
        probe_set = set(probe_part)
        gallery_idx = [i for i in eval_idx if i not in probe_set]
        if not gallery_idx:
            continue
        gallery_vectors = np.stack([template_of[i].vector for i in gallery_idx])
        gallery_labels = [template_of[i].label for i in gallery_idx]

        if config.context_source == "gallery":
            context = build_matching_context(
                transform, [template_of[i] for i in gallery_idx]
            )
        else:
            context = fold_context

        for i in probe_part:
            # The probe's label plays no part in matching; only the
            # distances below reach the scorer, plus the true label for
            # the genuine flag.
            d = _probe_distances(
                template_of[i].vector,
                gallery_vectors,
                context.sigma_t_feature_inv,
            )
            truth = true_labels[i]
            probe_id = template_of[i].sample_id
            if config.pair_policy == "all":
                for g, lab in enumerate(gallery_labels):
                    records.append(
                        DistanceRecord(
                            probe_id=probe_id,
                            gallery_label=lab,
                            distance=float(d[g]),
                            genuine=lab == truth,
                        )
                    )
            else:
                best: dict[str, float] = {}
                for g, lab in enumerate(gallery_labels):
                    if lab not in best or d[g] < best[lab]:
                        best[lab] = float(d[g])
                for lab in sorted(best):
                    records.append(
                        DistanceRecord(
                            probe_id=probe_id,
                            gallery_label=lab,
                            distance=best[lab],
                            genuine=lab == truth,
                        )
                    )

    cmc, ccr = cmc_curve(records)
    _, eer = far_frr_curves(records)
    roc, auc = roc_curve(records)
    rcl_pcn, map_value = rcl_pcn_curve(records)

    rows = _rates(records)
    far_grid, frr_grid = _quantile_resample(records, rows, grid)
    tar_grid = np.interp(grid, roc.x, roc.y)
    precision_grid = np.interp(grid, rcl_pcn.x, rcl_pcn.y)

    return _FoldResult(
        separability=separability,
        scalars={"ccr": ccr, "eer": eer, "auc": auc, "map": map_value},
        cmc_y=cmc.y,
        far_grid=far_grid,
        frr_grid=frr_grid,
        tar_grid=tar_grid,
        precision_grid=precision_grid,
    )


def run_protocol(
    dataset: LabeledDataset,
    method: str,
    plan: FoldPlan,
    config: Optional[ProtocolConfig] = None,
) -> EvaluationReport:
    """Run the full nested evaluation and aggregate over outer folds.

    Headline scalars are unweighted means of the per-fold values; curves
    are pointwise means after resampling every fold onto a common grid
    (integer ranks for cmc, a 1001-point [0, 1] grid for the others).
    """
    config = config or ProtocolConfig()
    method = method.replace("-", "_")
    if method not in PROTOCOL_METHODS:
        raise ValidationError(f"unknown method {method!r}")

    frame_count = dataset.samples[0].frame_count
    for s in dataset.samples:
        if s.frame_count != frame_count:
            raise ContractError(
                f"sample {s.sample_id!r} has {s.frame_count} frames, others "
                f"have {frame_count}: resample to a common length first"
            )
    covered = sorted(i for fold in plan.outer_folds for i in fold)
    if covered != list(range(dataset.num_samples)):
        raise ContractError("fold plan does not partition this dataset")

    flats = [flatten(s, frame_count) for s in dataset.samples]
    true_labels = [s.label for s in dataset.samples]
    grid = np.linspace(0.0, 1.0, GRID_POINTS)

    def fold_task(f: int) -> _FoldResult:
        try:
            return _run_fold(f, flats, true_labels, method, plan, config, grid)
        except MarginforgeError as exc:
            raise type(exc)(f"outer fold {f}: {exc}") from exc

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(fold_task, range(plan.n_outer)))
        else:
            results = [fold_task(f) for f in range(plan.n_outer)]
    captured = tuple(
        sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    )

    headline = {}
    for key in ("ccr", "eer", "auc", "map"):
        headline[key] = float(np.mean([r.scalars[key] for r in results]))
    for key in ("dbi", "di", "sc", "fdr"):
        headline[key] = float(
            np.mean([getattr(r.separability, key) for r in results])
        )

    max_ranks = max(len(r.cmc_y) for r in results)
    cmc_stack = np.stack(
        [
            np.concatenate([r.cmc_y, np.full(max_ranks - len(r.cmc_y), r.cmc_y[-1])])
            for r in results
        ]
    )
    cmc_mean = cmc_stack.mean(axis=0)
    curves = {
        "cmc": CurveSeries(
            kind="cmc",
            points=tuple(
                (float(k + 1), float(cmc_mean[k])) for k in range(max_ranks)
            ),
        ),
        "far_frr": CurveSeries(
            kind="far_frr",
            points=tuple(
                zip(
                    np.mean([r.far_grid for r in results], axis=0),
                    np.mean([r.frr_grid for r in results], axis=0),
                )
            ),
        ),
        "roc": CurveSeries(
            kind="roc",
            points=tuple(zip(grid, np.mean([r.tar_grid for r in results], axis=0))),
        ),
        "rcl_pcn": CurveSeries(
            kind="rcl_pcn",
            points=tuple(
                zip(grid, np.mean([r.precision_grid for r in results], axis=0))
            ),
        ),
    }

    config_echo = {
        "method": method,
        "outer_folds": plan.n_outer,
        "inner_folds": plan.n_inner,
        "seed": plan.seed,
        "stratified": plan.stratified,
        "pair_policy": config.pair_policy,
        "context_source": config.context_source,
        "pca_dim": config.pca_dim,
    }
    return EvaluationReport(
        separability=tuple(r.separability for r in results),
        curves=curves,
        headline=headline,
        config=config_echo,
        warnings=captured,
    )


def curve_csv_text(series: CurveSeries) -> str:
    """Plot-ready CSV rows for one curve: kind,x,y with a header line."""
    lines = ["kind,x,y"]
    for x, y in series.points:
        lines.append(f"{series.kind},{x!r},{y!r}")
    return "\n".join(lines) + "\n"
