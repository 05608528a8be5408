"""Rank and threshold metrics over probe-to-gallery distances.

Everything here is computed from DistanceRecords, each one probe-template
against one gallery identity with a flag saying whether the pair is
genuine (same identity) or impostor. Curves are exact, not sampled: the
threshold sweep visits every distinct observed distance plus -inf/+inf
sentinels, and acceptance is distance <= threshold (inclusive), so each
curve equals an exhaustive enumeration of all meaningful thresholds.

Curve kinds and their points:
    cmc      (rank k, fraction of probes whose true class is in the top k)
    far_frr  (false accept rate, false reject rate) along the sweep
    roc      (false accept rate, true accept rate), deduplicated x
    rcl_pcn  (recall, precision) with the recall-0 precision extrapolated
             from the smallest-threshold point
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, ValidationError
from .template_space import GaitTemplate, MatchingContext, mahalanobis

CURVE_KINDS = ("cmc", "far_frr", "roc", "rcl_pcn")


@dataclass(frozen=True)
class DistanceRecord:
    """One probe-against-gallery-identity distance."""

    probe_id: str
    gallery_label: str
    distance: float
    genuine: bool

    def __post_init__(self):
        if not (math.isfinite(self.distance) and self.distance >= 0):
            raise ContractError(
                f"probe {self.probe_id!r} vs {self.gallery_label!r}: "
                f"distance must be finite and >= 0, got {self.distance!r}"
            )


@dataclass(frozen=True)
class CurveSeries:
    """A polyline of (x, y) points of a declared kind."""

    kind: str
    points: tuple

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise ValidationError(f"unknown curve kind {self.kind!r}")
        points = tuple((float(x), float(y)) for x, y in self.points)
        if not points:
            raise ContractError("curve needs at least one point")
        if self.kind in ("cmc", "roc"):
            xs = [p[0] for p in points]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ContractError(f"{self.kind} x values must strictly increase")
        object.__setattr__(self, "points", points)

    @property
    def x(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def y(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x": [p[0] for p in self.points],
            "y": [p[1] for p in self.points],
        }


def classify_wta(
    probe: GaitTemplate,
    gallery: Sequence[GaitTemplate],
    context: MatchingContext,
) -> str:
    """Label of the nearest gallery template, winner takes all.

    Exact distance ties go to the lexicographically smallest gallery
    sample_id, which makes the result independent of gallery order.
    """
    gallery = list(gallery)
    if not gallery:
        raise ContractError("empty gallery")
    best = min(
        gallery, key=lambda t: (mahalanobis(context, probe, t), t.sample_id)
    )
    return best.label


def _sweep(records: Sequence[DistanceRecord]) -> np.ndarray:
    # Thresholds where any rate can change: the distinct distances, with a
    # -inf state (nothing accepted) in front and +inf (everything) behind.
    distances = np.unique([r.distance for r in records])
    return np.concatenate(([-np.inf], distances, [np.inf]))


def _require_populations(records, need_impostor: bool = True):
    n_gen = sum(1 for r in records if r.genuine)
    n_imp = len(records) - n_gen
    if n_gen == 0:
        raise ContractError("no genuine records")
    if need_impostor and n_imp == 0:
        raise ContractError("no impostor records")
    return n_gen, n_imp


def cmc_curve(records: Sequence[DistanceRecord]):
    """Cumulative match characteristic over gallery-identity ranks.

    For each probe, identities are ranked by their best (minimum) distance;
    the probe scores rank r = 1 + number of identities strictly closer
    than its own. Point k is the fraction of probes with rank <= k, for
    k = 1 .. number of gallery identities. Returns (series, ccr) with
    ccr the rank-1 value. A probe whose identity never appears in its
    gallery records counts as never matched and triggers a warning.
    """
    records = list(records)
    if not records:
        raise ContractError("no distance records")
    all_labels = sorted({r.gallery_label for r in records})
    n_ranks = len(all_labels)

    by_probe: dict[str, dict[str, float]] = {}
    genuine_label: dict[str, str] = {}
    for r in records:
        best = by_probe.setdefault(r.probe_id, {})
        if r.gallery_label not in best or r.distance < best[r.gallery_label]:
            best[r.gallery_label] = r.distance
        if r.genuine:
            genuine_label[r.probe_id] = r.gallery_label

    matched_at = np.zeros(n_ranks)
    n_probes = len(by_probe)
    for probe_id in by_probe:
        if probe_id not in genuine_label:
            warnings.warn(
                f"probe {probe_id!r}: its identity is not in the gallery; "
                "counted as never matched",
                RuntimeWarning,
            )
            continue
        best = by_probe[probe_id]
        own = best[genuine_label[probe_id]]
        rank = 1 + sum(1 for d in best.values() if d < own)
        matched_at[rank - 1] += 1

    cumulative = np.cumsum(matched_at) / n_probes
    series = CurveSeries(
        kind="cmc",
        points=tuple((float(k + 1), float(cumulative[k])) for k in range(n_ranks)),
    )
    return series, float(cumulative[0])


def _rates(records: Sequence[DistanceRecord]):
    # (threshold, FAR, FRR) along the sweep under accept iff d <= threshold.
    genuine = np.sort([r.distance for r in records if r.genuine])
    impostor = np.sort([r.distance for r in records if not r.genuine])
    sweep = _sweep(records)
    acc_gen = np.searchsorted(genuine, sweep, side="right")
    acc_imp = np.searchsorted(impostor, sweep, side="right")
    far = acc_imp / len(impostor) if len(impostor) else np.zeros(len(sweep))
    frr = (len(genuine) - acc_gen) / len(genuine)
    return list(zip(sweep.tolist(), far.tolist(), frr.tolist()))


def far_frr_curves(records: Sequence[DistanceRecord]):
    """False accept against false reject along the threshold sweep.

    Returns (series, eer). The series points are (FAR, FRR) in threshold
    order, running from (0, 1) to (1, 0). The equal error rate is read at
    the sign change of FAR - FRR, linearly interpolated between the
    adjacent sweep points when the difference never hits zero exactly.
    """
    records = list(records)
    _require_populations(records)
    rows = _rates(records)
    series = CurveSeries(
        kind="far_frr", points=tuple((far, frr) for _, far, frr in rows)
    )

    eer = None
    for i in range(len(rows)):
        _, far, frr = rows[i]
        g = far - frr
        if g == 0.0:
            eer = far
            break
        if g > 0.0:
            _, far0, frr0 = rows[i - 1]
            g0 = far0 - frr0
            lam = -g0 / (g - g0)
            eer = far0 + lam * (far - far0)
            break
    # g runs from -1 to +1 along the sweep, so a crossing always exists.
    assert eer is not None
    return series, float(eer)


def roc_curve(records: Sequence[DistanceRecord]):
    """Receiver operating characteristic and its trapezoidal area.

    Points are (FAR, TAR = 1 - FRR). Sweep points sharing a FAR value
    collapse to the best (largest) TAR so x strictly increases; the sweep
    sentinels guarantee the curve spans FAR = 0 to (1, 1).
    """
    records = list(records)
    _require_populations(records)
    rows = _rates(records)
    by_far: dict[float, float] = {}
    for _, far, frr in rows:
        tar = 1.0 - frr
        if far not in by_far or tar > by_far[far]:
            by_far[far] = tar
    points = tuple(sorted(by_far.items()))
    series = CurveSeries(kind="roc", points=points)
    auc = float(np.trapezoid(series.y, series.x))
    return series, auc


def rcl_pcn_curve(records: Sequence[DistanceRecord]):
    """Recall against precision over the threshold sweep, with MAP.

    Genuine records are the relevant set. Sweep points with nothing
    accepted have undefined precision and are skipped; the curve instead
    starts at recall 0 with the precision of the smallest-threshold
    point. Among sweep points sharing a recall value the earliest (best
    precision) is kept. MAP is the trapezoidal area under precision over
    recall. Impostor-free record sets are legal here: precision is then
    identically 1.
    """
    records = list(records)
    _require_populations(records, need_impostor=False)
    genuine = np.sort([r.distance for r in records if r.genuine])
    impostor = np.sort([r.distance for r in records if not r.genuine])
    n_gen = len(genuine)

    sweep = _sweep(records)
    acc_gen = np.searchsorted(genuine, sweep, side="right")
    acc_imp = np.searchsorted(impostor, sweep, side="right")
    accepted = acc_gen + acc_imp
    raw = [
        (acc_gen[i] / n_gen, acc_gen[i] / accepted[i])
        for i in range(len(sweep))
        if accepted[i] > 0
    ]

    by_recall: dict[float, float] = {}
    for recall, precision in raw:
        if recall not in by_recall:  # first in threshold order wins
            by_recall[recall] = precision
    points = sorted(by_recall.items())
    if points[0][0] > 0.0:
        points.insert(0, (0.0, raw[0][1]))
    series = CurveSeries(kind="rcl_pcn", points=tuple(points))
    map_value = float(np.trapezoid(series.y, series.x))
    return series, map_value
