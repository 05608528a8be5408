"""Labeled gait samples: data model, file ingestion, synthetic generation.

A gait sample is one gait cycle stored as a (T, J, 3) array of 3D joint
coordinates in meters. Flattening a time-normalized sample yields the
D = 3*J*T measurement vector consumed by the learners, laid out
frame-major, joint-minor, coordinate-innermost:
[x11 y11 z11 ... xJ1 yJ1 zJ1 ... xJT yJT zJT].
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ._jsonio import atomic_write_text
from .errors import ContractError, ParseError, SchemaError, ValidationError

DATASET_FORMATS = ("jsonl", "csv")
CSV_HEADER = ["sample_id", "label", "frame", "joint", "x", "y", "z"]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaitSample:
    """One gait cycle: frames of shape (T, J, 3), optional identity label."""

    frames: np.ndarray
    label: Optional[str]
    sample_id: str

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise SchemaError(
                f"sample {self.sample_id!r}: frames must have shape (T, J, 3), "
                f"got {frames.shape}"
            )
        if frames.shape[0] < 2:
            raise SchemaError(f"sample {self.sample_id!r}: needs at least 2 frames")
        if frames.shape[1] < 1:
            raise SchemaError(f"sample {self.sample_id!r}: needs at least 1 joint")
        if not np.all(np.isfinite(frames)):
            raise SchemaError(f"sample {self.sample_id!r}: non-finite coordinate")
        object.__setattr__(self, "frames", _freeze(frames))

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames: np.ndarray) -> "GaitSample":
        """Copy of this sample with new coordinates, keeping id and label."""
        return GaitSample(frames=frames, label=self.label, sample_id=self.sample_id)


@dataclass(frozen=True)
class FlatSample:
    """A flattened measurement vector of dimension D = 3*J*T with its label."""

    vector: np.ndarray
    label: str
    sample_id: str

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1:
            raise SchemaError(f"sample {self.sample_id!r}: vector must be 1-D")
        if not np.all(np.isfinite(vector)):
            raise SchemaError(f"sample {self.sample_id!r}: non-finite entry")
        object.__setattr__(self, "vector", _freeze(vector))

    @property
    def dimension(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class LabeledDataset:
    """A collection of labeled gait samples partitioned into identity classes.

    class_index maps each label to the indices of its samples, in sorted
    label order; every sample index appears under exactly one label.
    """

    samples: tuple
    joint_count: int
    class_index: Mapping[str, tuple]

    @classmethod
    def from_samples(cls, samples: Iterable[GaitSample]) -> "LabeledDataset":
        samples = tuple(samples)
        if not samples:
            raise SchemaError("no samples")
        joint_count = samples[0].joint_count
        index: dict[str, list[int]] = {}
        for i, s in enumerate(samples):
            if s.label is None:
                raise SchemaError(f"sample {s.sample_id!r} is unlabeled")
            if s.joint_count != joint_count:
                raise SchemaError(
                    f"inconsistent joint counts: sample {s.sample_id!r} has "
                    f"{s.joint_count} joints, expected {joint_count}"
                )
            index.setdefault(s.label, []).append(i)
        class_index = {label: tuple(index[label]) for label in sorted(index)}
        return cls(samples=samples, joint_count=joint_count, class_index=class_index)

    @property
    def labels(self) -> tuple:
        return tuple(self.class_index)

    @property
    def num_classes(self) -> int:
        return len(self.class_index)

    @property
    def num_samples(self) -> int:
        return len(self.samples)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset.from_samples(self.samples[i] for i in indices)


def flatten(sample: GaitSample, frame_count: int) -> FlatSample:
    """Flatten a time-normalized sample into its D = 3*J*T vector.

    frame_count is the dataset-wide normalized length T; a sample with any
    other length is a contract violation rather than silently resampled.
    """
    if sample.frame_count != frame_count:
        raise ContractError(
            f"sample {sample.sample_id!r} has {sample.frame_count} frames, "
            f"expected {frame_count}"
        )
    if sample.label is None:
        raise ContractError(f"sample {sample.sample_id!r} is unlabeled")
    return FlatSample(
        vector=sample.frames.reshape(-1),
        label=sample.label,
        sample_id=sample.sample_id,
    )


def unflatten(flat: FlatSample, joint_count: int, frame_count: int) -> GaitSample:
    """Inverse of flatten: rebuild the (T, J, 3) frames from a flat vector."""
    expected = 3 * joint_count * frame_count
    if flat.dimension != expected:
        raise ContractError(
            f"vector of dimension {flat.dimension} does not match "
            f"3*{joint_count}*{frame_count} = {expected}"
        )
    frames = flat.vector.reshape(frame_count, joint_count, 3)
    return GaitSample(frames=frames, label=flat.label, sample_id=flat.sample_id)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian synthetic-dataset generator."""

    classes: int
    samples_per_class: int
    joints: int
    frames: int
    class_spread: float  # scale of the per-class mean trajectories
    noise: float  # scale of the per-sample perturbations
    seed: int = 0

    def validate(self):
        if self.classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.samples_per_class < 2:
            raise ValidationError("need at least 2 samples per class")
        if self.joints < 1:
            raise ValidationError("need at least 1 joint")
        if self.frames < 2:
            raise ValidationError("need at least 2 frames")
        if not self.class_spread > 0:
            raise ValidationError("class_spread must be > 0")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Generate a labeled dataset of noisy copies of per-class mean trajectories.

    Each class mean trajectory is drawn from an isotropic Gaussian with scale
    spec.class_spread; each sample adds isotropic Gaussian noise with scale
    spec.noise. Pure function of spec: the same spec yields the same dataset.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = (spec.frames, spec.joints, 3)
    samples = []
    for c in range(spec.classes):
        label = f"id{c:03d}"
        mean = rng.normal(0.0, spec.class_spread, size=shape)
        for k in range(spec.samples_per_class):
            frames = mean + rng.normal(0.0, spec.noise, size=shape)
            samples.append(
                GaitSample(frames=frames, label=label, sample_id=f"{label}s{k:03d}")
            )
    return LabeledDataset.from_samples(samples)


def load_dataset(path, format: str = "jsonl") -> LabeledDataset:
    """Load a dataset file in the jsonl or csv on-disk format."""
    if format == "jsonl":
        samples = _load_jsonl(path)
    elif format == "csv":
        samples = _load_csv(path)
    else:
        raise ValidationError(f"unknown dataset format {format!r}")
    return LabeledDataset.from_samples(samples)


def save_dataset(dataset: LabeledDataset, path, format: str = "jsonl"):
    """Write a dataset file atomically; coordinates round-trip exactly."""
    if format == "jsonl":
        lines = []
        for s in dataset.samples:
            record = {
                "sample_id": s.sample_id,
                "label": s.label,
                "frames": s.frames.tolist(),
            }
            lines.append(json.dumps(record))
        text = "\n".join(lines) + "\n"
    elif format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(CSV_HEADER)
        for s in dataset.samples:
            for t in range(s.frame_count):
                for j in range(s.joint_count):
                    x, y, z = (float(v) for v in s.frames[t, j])
                    writer.writerow(
                        [s.sample_id, s.label, t, j, repr(x), repr(y), repr(z)]
                    )
        text = buffer.getvalue()
    else:
        raise ValidationError(f"unknown dataset format {format!r}")
    atomic_write_text(path, text)


def _load_jsonl(path) -> list:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                sample_id = record["sample_id"]
                label = record["label"]
                frames = record["frames"]
            except (TypeError, KeyError) as exc:
                raise ParseError(f"line {lineno}: missing field {exc}") from exc
            try:
                frames = np.asarray(frames, dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: ragged frames array") from exc
            samples.append(GaitSample(frames=frames, label=label, sample_id=sample_id))
    return samples


def _load_csv(path) -> list:
    # rows: sample_id,label,frame,joint,x,y,z sorted by (sample_id, frame, joint)
    order = []
    cells: dict[str, dict] = {}
    labels: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("no samples") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ParseError(f"line {lineno}: expected 7 columns, got {len(row)}")
            sample_id, label = row[0], row[1]
            try:
                t, j = int(row[2]), int(row[3])
                xyz = (float(row[4]), float(row[5]), float(row[6]))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if sample_id not in cells:
                order.append(sample_id)
                cells[sample_id] = {}
                labels[sample_id] = label
            elif labels[sample_id] != label:
                raise SchemaError(f"sample {sample_id!r} has conflicting labels")
            if (t, j) in cells[sample_id]:
                raise SchemaError(f"sample {sample_id!r}: duplicate cell ({t}, {j})")
            cells[sample_id][(t, j)] = xyz

    samples = []
    for sample_id in order:
        grid = cells[sample_id]
        n_frames = max(t for t, _ in grid) + 1
        n_joints = max(j for _, j in grid) + 1
        if len(grid) != n_frames * n_joints:
            raise SchemaError(
                f"sample {sample_id!r}: incomplete frame/joint grid "
                f"({len(grid)} of {n_frames * n_joints} cells)"
            )
        frames = np.empty((n_frames, n_joints, 3))
        for (t, j), xyz in grid.items():
            frames[t, j] = xyz
        samples.append(
            GaitSample(frames=frames, label=labels[sample_id], sample_id=sample_id)
        )
    return samples
