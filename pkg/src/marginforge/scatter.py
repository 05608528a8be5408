"""Scatter statistics of a labeled vector population.

Conventions, for classes c with N_c members, class means mu_c, and global
mean mu over all N vectors:

    between class  Sb = sum_c (mu_c - mu)(mu_c - mu)^T
    within class   Sw = sum_c (1/N_c) sum_n (x_n - mu_c)(x_n - mu_c)^T
    total          St = sum_c (1/N_c) sum_n (x_n - mu)(x_n - mu)^T

The between-class sum is over classes, not samples, so class sizes do not
weight it; the within and total sums normalize per class. Under these
conventions St = Sb + Sw holds identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import FlatSample
from .errors import ContractError


@dataclass(frozen=True)
class ScatterStatistics:
    """Scatter matrices plus the means they were computed from.

    Class-indexed arrays (class_means, class_sizes) follow sorted label
    order, recorded in labels.
    """

    sigma_b: np.ndarray
    sigma_w: np.ndarray
    sigma_t: np.ndarray
    overall_mean: np.ndarray
    class_means: np.ndarray
    class_sizes: np.ndarray
    labels: tuple

    @property
    def dimension(self) -> int:
        return self.overall_mean.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.labels)


def _kahan_add(total: np.ndarray, comp: np.ndarray, term: np.ndarray):
    # Compensated accumulation keeps the class-sum order-exact enough that
    # a run is reproducible bit for bit across repeats.
    y = term - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


def compute_scatter(flats: Sequence[FlatSample]) -> ScatterStatistics:
    """Compute scatter statistics from labeled flat vectors.

    Accumulation over classes runs in sorted label order with compensated
    summation, so the result is deterministic for a fixed input set.
    """
    flats = list(flats)
    if not flats:
        raise ContractError("no samples")
    dim = flats[0].dimension
    by_label: dict[str, list[np.ndarray]] = {}
    for f in flats:
        if f.dimension != dim:
            raise ContractError(
                f"sample {f.sample_id!r} has dimension {f.dimension}, expected {dim}"
            )
        by_label.setdefault(f.label, []).append(f.vector)

    labels = tuple(sorted(by_label))
    if len(labels) < 2:
        raise ContractError("need at least 2 classes")
    stacks = [np.stack(by_label[lab]) for lab in labels]
    class_sizes = np.array([s.shape[0] for s in stacks], dtype=np.int64)
    class_means = np.stack([s.mean(axis=0) for s in stacks])
    overall_mean = np.concatenate(stacks).mean(axis=0)

    sigma_b = np.zeros((dim, dim))
    sigma_w = np.zeros((dim, dim))
    sigma_t = np.zeros((dim, dim))
    comp_b = np.zeros((dim, dim))
    comp_w = np.zeros((dim, dim))
    comp_t = np.zeros((dim, dim))
    for k, stack in enumerate(stacks):
        n_c = class_sizes[k]
        gap = class_means[k] - overall_mean
        _kahan_add(sigma_b, comp_b, np.outer(gap, gap))
        dev_w = stack - class_means[k]
        _kahan_add(sigma_w, comp_w, dev_w.T @ dev_w / n_c)
        dev_t = stack - overall_mean
        _kahan_add(sigma_t, comp_t, dev_t.T @ dev_t / n_c)

    for a in (sigma_b, sigma_w, sigma_t, overall_mean, class_means, class_sizes):
        a.flags.writeable = False
    return ScatterStatistics(
        sigma_b=sigma_b,
        sigma_w=sigma_w,
        sigma_t=sigma_t,
        overall_mean=overall_mean,
        class_means=class_means,
        class_sizes=class_sizes,
        labels=labels,
    )
