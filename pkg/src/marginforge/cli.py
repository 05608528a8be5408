"""Command-line front end.

Subcommands wire the pipeline end to end: gen makes a synthetic dataset,
preprocess normalizes poses, learn fits a feature transform, enroll
builds a gallery, evaluate runs the nested cross-validation, and compare
tabulates headline scalars across report files.

Every command reads an optional JSON config file whose keys mirror the
long flag names (underscored); explicit flags win over the file. Outputs
are written atomically. Errors exit with a class-specific code and a
single machine-parsable stderr line. MARGINFORGE_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional

from ._jsonio import atomic_write_text, load_json, write_json
from .dataset import (
    LabeledDataset,
    SyntheticSpec,
    flatten,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import (
    AlignmentError,
    ContractError,
    DegenerateDataError,
    MarginforgeError,
    ParseError,
    SchemaError,
    StaleGalleryError,
    ValidationError,
)
from .learners import learn_mmc, learn_pcalda, load_transform, save_transform
from .scatter import compute_scatter
from .preprocess import (
    align_walk_direction,
    average_length,
    center_on_root,
    filter_gait_cycles,
    resample_time,
)
from .protocol import (
    ProtocolConfig,
    curve_csv_text,
    plan_folds,
    run_protocol,
)
from .template_space import build_gallery, save_gallery

log = logging.getLogger("marginforge")

EXIT_CODES = (
    (ValidationError, 2),
    (ContractError, 2),
    (ParseError, 3),
    (SchemaError, 4),
    (AlignmentError, 5),
    (DegenerateDataError, 6),
    (StaleGalleryError, 7),
    (MarginforgeError, 1),
    (OSError, 8),
)


def _exit_code(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _guess_format(path: str, explicit: Optional[str]) -> str:
    if explicit and explicit != "auto":
        return explicit
    return "csv" if str(path).endswith(".csv") else "jsonl"


class _Options:
    """Flag values merged over a JSON config file; flags override."""

    def __init__(self, args: argparse.Namespace):
        self._args = vars(args)
        self._config = {}
        config_path = self._args.get("config")
        if config_path:
            obj = load_json(config_path, what="config")
            if not isinstance(obj, dict):
                raise ValidationError("config file must hold a JSON object")
            self._config = obj

    def get(self, key: str, default=None):
        value = self._args.get(key)
        if value is not None:
            return value
        if key in self._config:
            return self._config[key]
        return default

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise ValidationError(f"missing required option --{key.replace('_', '-')}")
        return value


def _load(opts: _Options) -> LabeledDataset:
    path = opts.require("input")
    return load_dataset(path, format=_guess_format(path, opts.get("format")))


def _flatten_all(dataset: LabeledDataset):
    frame_count = dataset.samples[0].frame_count
    for s in dataset.samples:
        if s.frame_count != frame_count:
            raise ContractError(
                f"sample {s.sample_id!r} has {s.frame_count} frames, others have "
                f"{frame_count}: run preprocess with --target-frames first"
            )
    return [flatten(s, frame_count) for s in dataset.samples]


def cmd_gen(opts: _Options) -> int:
    spec = SyntheticSpec(
        classes=int(opts.require("classes")),
        samples_per_class=int(opts.require("per_class")),
        joints=int(opts.get("joints", 5)),
        frames=int(opts.get("frames", 10)),
        class_spread=float(opts.get("class_spread", 5.0)),
        noise=float(opts.get("noise", 0.5)),
        seed=int(opts.get("seed", 0)),
    )
    dataset = generate_synthetic(spec)
    output = opts.require("output")
    save_dataset(dataset, output, format=_guess_format(output, opts.get("format")))
    log.info("wrote %d samples to %s", dataset.num_samples, output)
    return 0


def cmd_preprocess(opts: _Options) -> int:
    dataset = _load(opts)
    samples = list(dataset.samples)

    root_joint = opts.get("root_joint")
    if root_joint is not None:
        root_joint = int(root_joint)
        up_axis = str(opts.get("up_axis", "y"))
        # Align first: centering pins the root at the origin, which erases
        # the displacement the alignment needs.
        samples = [align_walk_direction(s, root_joint, up_axis) for s in samples]
        samples = [center_on_root(s, root_joint) for s in samples]

    target = opts.get("target_frames")
    if target is not None:
        target = int(target)
        if target == 0:  # 0 asks for the dataset's average length
            target = average_length(samples)
        samples = [resample_time(s, target) for s in samples]

    threshold = opts.get("dtw_threshold")
    if threshold is not None:
        threshold = float(threshold)
        kept = []
        by_label: dict[str, list] = {}
        for s in samples:
            by_label.setdefault(s.label, []).append(s)
        for label in sorted(by_label):
            group = by_label[label]
            # First cycle of each identity serves as the exemplar.
            kept.extend(filter_gait_cycles(group, group[0], threshold))
        order = {s.sample_id: k for k, s in enumerate(samples)}
        samples = sorted(kept, key=lambda s: order[s.sample_id])

    result = LabeledDataset.from_samples(samples)
    output = opts.require("output")
    save_dataset(result, output, format=_guess_format(output, opts.get("format")))
    log.info("wrote %d samples to %s", result.num_samples, output)
    return 0


def cmd_learn(opts: _Options) -> int:
    dataset = _load(opts)
    flats = _flatten_all(dataset)
    method = str(opts.get("method", "mmc")).replace("-", "_")
    if method in ("mmc", "pca_lda"):
        stats = compute_scatter(flats)
    if method == "mmc":
        transform = learn_mmc(stats, flats)
    elif method == "pca_lda":
        pca_dim = opts.get("pca_dim")
        transform = learn_pcalda(
            stats, flats, None if pca_dim is None else int(pca_dim)
        )
    else:
        raise ValidationError(f"learn supports mmc or pca-lda, got {method!r}")
    output = opts.require("output")
    save_transform(transform, output)
    log.info(
        "learned %s transform %d -> %d, wrote %s",
        method,
        transform.input_dim,
        transform.feature_dim,
        output,
    )
    return 0


def cmd_enroll(opts: _Options) -> int:
    dataset = _load(opts)
    flats = _flatten_all(dataset)
    transform = load_transform(opts.require("transform"))
    gallery = build_gallery(flats, transform)
    output = opts.require("output")
    save_gallery(gallery, output)
    log.info("enrolled %d templates, wrote %s", len(gallery.templates), output)
    return 0


def cmd_evaluate(opts: _Options) -> int:
    dataset = _load(opts)
    plan = plan_folds(
        dataset,
        outer=int(opts.get("outer_folds", 3)),
        inner=int(opts.get("inner_folds", 10)),
        seed=int(opts.get("seed", 0)),
    )
    pca_dim = opts.get("pca_dim")
    config = ProtocolConfig(
        pair_policy=str(opts.get("pair_policy", "all")).replace("-", "_"),
        context_source=str(opts.get("context_source", "learning")),
        pca_dim=None if pca_dim is None else int(pca_dim),
        workers=int(opts.get("workers", 1)),
    )
    report = run_protocol(dataset, str(opts.get("method", "mmc")), plan, config)

    output = opts.require("output")
    write_json(output, report.to_json_dict())
    stem = output[: -len(".json")] if str(output).endswith(".json") else str(output)
    for kind, series in report.curves.items():
        atomic_write_text(f"{stem}.{kind}.csv", curve_csv_text(series))
    log.info("wrote report %s and %d curve files", output, len(report.curves))
    return 0


def cmd_compare(opts: _Options) -> int:
    paths = opts.require("inputs")
    keys = ("dbi", "di", "sc", "fdr", "ccr", "eer", "auc", "map")
    rows = []
    for path in paths:
        report = load_json(path, what="report")
        try:
            method = report["config"]["method"]
            headline = report["headline"]
            rows.append((method, [float(headline[k]) for k in keys]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"report {path}: missing field {exc}")

    name_width = max(len("method"), max(len(r[0]) for r in rows))
    header = "method".ljust(name_width) + "".join(k.rjust(10) for k in keys)
    lines = [header, "-" * len(header)]
    for method, values in rows:
        lines.append(
            method.ljust(name_width) + "".join(f"{v:10.4f}" for v in values)
        )
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    output = opts.get("output")
    if output:
        atomic_write_text(output, table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marginforge",
        description="Gait feature learning, template matching, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with default option values")
        p.add_argument("--format", choices=["auto", "jsonl", "csv"], default=None)

    p = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int, dest="per_class")
    p.add_argument("--joints", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--class-spread", type=float, dest="class_spread")
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")

    p = sub.add_parser("preprocess", help="center, align, resample, filter")
    common(p)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--root-joint", type=int, dest="root_joint")
    p.add_argument("--up-axis", choices=["x", "y", "z"], dest="up_axis")
    p.add_argument(
        "--target-frames",
        type=int,
        dest="target_frames",
        help="common cycle length; 0 means the dataset's average length",
    )
    p.add_argument("--dtw-threshold", type=float, dest="dtw_threshold")

    p = sub.add_parser("learn", help="fit a feature transform")
    common(p)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--method", choices=["mmc", "pca-lda"])
    p.add_argument("--pca-dim", type=int, dest="pca_dim")

    p = sub.add_parser("enroll", help="build a gallery from a dataset")
    common(p)
    p.add_argument("--input")
    p.add_argument("--transform")
    p.add_argument("--output")

    p = sub.add_parser("evaluate", help="run the nested cross-validation")
    common(p)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--method", choices=["mmc", "pca-lda", "identity"])
    p.add_argument("--seed", type=int)
    p.add_argument("--outer-folds", type=int, dest="outer_folds")
    p.add_argument("--inner-folds", type=int, dest="inner_folds")
    p.add_argument(
        "--pair-policy", choices=["all", "class-best"], dest="pair_policy"
    )
    p.add_argument(
        "--context-source", choices=["learning", "gallery"], dest="context_source"
    )
    p.add_argument("--pca-dim", type=int, dest="pca_dim")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("compare", help="tabulate headline scalars of reports")
    common(p)
    p.add_argument("inputs", nargs="+", help="report JSON files")
    p.add_argument("--output")

    return parser


COMMANDS = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "learn": cmd_learn,
    "enroll": cmd_enroll,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    level = os.environ.get("MARGINFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _Options(args)
        return COMMANDS[args.command](opts)
    except (MarginforgeError, OSError) as exc:
        print(f"marginforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
