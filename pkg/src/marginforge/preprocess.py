"""Pose normalization and gait-cycle selection.

Raw capture sequences vary in position, heading, duration, and quality.
The pipeline here brings them into a common frame: center on a root joint,
rotate the walk direction onto a canonical axis, resample every cycle to a
shared length, and drop outlier cycles by dynamic-time-warping distance to
an exemplar.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import GaitSample
from .errors import AlignmentError, ContractError, ValidationError

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

# Below this net horizontal displacement of the root joint the heading is
# numerically undefined and alignment refuses to guess.
MIN_DISPLACEMENT = 1e-12


def _check_root(sample: GaitSample, root_joint: int):
    if not 0 <= root_joint < sample.joint_count:
        raise ContractError(
            f"root joint {root_joint} out of range for {sample.joint_count} joints"
        )


def center_on_root(sample: GaitSample, root_joint: int) -> GaitSample:
    """Translate each frame so the root joint sits at the origin."""
    _check_root(sample, root_joint)
    frames = sample.frames - sample.frames[:, root_joint : root_joint + 1, :]
    return sample.with_frames(frames)


def align_walk_direction(
    sample: GaitSample, root_joint: int, up_axis: str = "y"
) -> GaitSample:
    """Rotate about the up axis so the walk heading lies along the front axis.

    The heading is the net horizontal displacement of the root joint between
    the first and last frame. With up_axis "y" the front axis is z, so a
    subject walking toward +x comes out walking toward +z. A sample whose
    root joint shows no net horizontal displacement has no defined heading
    and raises AlignmentError.
    """
    _check_root(sample, root_joint)
    if up_axis not in AXIS_INDEX:
        raise ValidationError(f"unknown up axis {up_axis!r}")
    up = AXIS_INDEX[up_axis]
    front = (up + 1) % 3
    side = (up + 2) % 3

    d = sample.frames[-1, root_joint] - sample.frames[0, root_joint]
    norm = float(np.hypot(d[side], d[front]))
    if norm < MIN_DISPLACEMENT:
        raise AlignmentError(
            f"sample {sample.sample_id!r}: zero net horizontal displacement, "
            "walk direction undefined"
        )
    cos_a = d[front] / norm
    sin_a = d[side] / norm

    frames = sample.frames.copy()
    s_old = sample.frames[:, :, side]
    f_old = sample.frames[:, :, front]
    frames[:, :, side] = s_old * cos_a - f_old * sin_a
    frames[:, :, front] = s_old * sin_a + f_old * cos_a
    return sample.with_frames(frames)


def resample_time(sample: GaitSample, target_frames: int) -> GaitSample:
    """Linearly resample the cycle to target_frames frames.

    Each of the 3*J coordinate signals is interpolated independently over a
    normalized time axis; endpoints are preserved exactly. A sample already
    at the target length is returned unchanged.
    """
    if target_frames < 2:
        raise ContractError("target_frames must be >= 2")
    t_raw = sample.frame_count
    if t_raw == target_frames:
        return sample
    old_t = np.linspace(0.0, 1.0, t_raw)
    new_t = np.linspace(0.0, 1.0, target_frames)
    flat = sample.frames.reshape(t_raw, -1)
    out = np.empty((target_frames, flat.shape[1]))
    for k in range(flat.shape[1]):
        out[:, k] = np.interp(new_t, old_t, flat[:, k])
    return sample.with_frames(out.reshape(target_frames, sample.joint_count, 3))


def average_length(samples: Sequence[GaitSample]) -> int:
    """Round-half-up mean frame count over samples, floored at 2."""
    if not samples:
        raise ContractError("average_length of an empty collection")
    mean = sum(s.frame_count for s in samples) / len(samples)
    return max(2, int(np.floor(mean + 0.5)))


def dtw_distance(a: GaitSample, b: GaitSample) -> float:
    """Dynamic-time-warping distance between two cycles.

    Classic dynamic program with Euclidean local cost between whole poses
    (frames flattened to 3*J vectors), step set {(1,0), (0,1), (1,1)}, and
    full endpoint alignment. The returned value is the unnormalized
    accumulated cost.
    """
    if a.joint_count != b.joint_count:
        raise ContractError(
            f"joint counts differ: {a.joint_count} vs {b.joint_count}"
        )
    pa = a.frames.reshape(a.frame_count, -1)
    pb = b.frames.reshape(b.frame_count, -1)
    cost = cdist(pa, pb)
    n, m = cost.shape

    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(
                acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1]
            )
    return float(acc[n, m])


def filter_gait_cycles(
    candidates: Sequence[GaitSample], exemplar: GaitSample, threshold: float
) -> tuple:
    """Keep candidates whose DTW distance to the exemplar is <= threshold.

    Order is preserved; the boundary is inclusive, so a candidate exactly at
    the threshold survives.
    """
    if not threshold >= 0:
        raise ContractError("threshold must be >= 0")
    return tuple(
        c for c in candidates if dtw_distance(c, exemplar) <= threshold
    )
