"""Shared builders for the test suite. No fixtures with state, just
constructors that keep the test bodies close to the numbers they assert."""

from __future__ import annotations

import numpy as np

from marginforge import (
    FeatureTransform,
    FlatSample,
    GaitSample,
    GaitTemplate,
    MatchingContext,
    build_matching_context,
    compute_scatter,
    extract_template,
    learn_mmc,
    mahalanobis,
)


def flats_1d(groups: dict) -> list:
    """1-D FlatSamples from {label: [value, ...]}."""
    out = []
    for label in sorted(groups):
        for k, v in enumerate(groups[label]):
            out.append(
                FlatSample(
                    vector=np.array([float(v)]),
                    label=label,
                    sample_id=f"{label}{k}",
                )
            )
    return out


def flats_nd(groups: dict) -> list:
    """FlatSamples from {label: [vector, ...]}."""
    out = []
    for label in sorted(groups):
        for k, v in enumerate(groups[label]):
            out.append(
                FlatSample(
                    vector=np.asarray(v, dtype=np.float64),
                    label=label,
                    sample_id=f"{label}{k}",
                )
            )
    return out


def templates_1d(groups: dict) -> list:
    """1-D GaitTemplates from {label: [value, ...]}."""
    out = []
    for label in sorted(groups):
        for k, v in enumerate(groups[label]):
            out.append(
                GaitTemplate(
                    vector=np.array([float(v)]),
                    label=label,
                    sample_id=f"{label}{k}",
                )
            )
    return out


def templates_nd(groups: dict) -> list:
    out = []
    for label in sorted(groups):
        for k, v in enumerate(groups[label]):
            out.append(
                GaitTemplate(
                    vector=np.asarray(v, dtype=np.float64),
                    label=label,
                    sample_id=f"{label}{k}",
                )
            )
    return out


def identity_ctx(dim: int) -> MatchingContext:
    return MatchingContext(sigma_t_feature_inv=np.eye(dim), source="exact")


def random_spd_ctx(rng: np.random.Generator, dim: int) -> MatchingContext:
    a = rng.normal(size=(dim, dim))
    m = a @ a.T + 0.1 * np.eye(dim)
    m = (m + m.T) / 2.0
    return MatchingContext(sigma_t_feature_inv=m, source="exact")


def random_flats(
    rng: np.random.Generator,
    classes: int,
    dim: int,
    members_low: int = 3,
    members_high: int = 20,
    spread: float = 3.0,
    noise: float = 1.0,
) -> list:
    """A Gaussian class population: the standard battery instance."""
    out = []
    for c in range(classes):
        label = f"c{c:02d}"
        mean = rng.normal(0.0, spread, size=dim)
        for k in range(int(rng.integers(members_low, members_high + 1))):
            out.append(
                FlatSample(
                    vector=mean + rng.normal(0.0, noise, size=dim),
                    label=label,
                    sample_id=f"{label}s{k:03d}",
                )
            )
    return out


def walking_sample(
    heading: np.ndarray,
    frames: int = 4,
    joints: int = 3,
    label: str = "w",
    sample_id: str = "w0",
    rng: np.random.Generator = None,
) -> GaitSample:
    """A sample whose root joint (index 0) drifts along `heading`.

    Non-root joints sit at fixed offsets from the root, optionally
    jittered, so the geometry is rigid enough to reason about.
    """
    heading = np.asarray(heading, dtype=np.float64)
    offsets = np.array(
        [[0.0, 0.0, 0.0], [0.3, 0.9, 0.1], [-0.2, 0.5, -0.4]][:joints]
    )
    if rng is not None:
        offsets = offsets + rng.normal(0.0, 0.05, size=offsets.shape)
    data = np.empty((frames, joints, 3))
    for t in range(frames):
        root = heading * (t / (frames - 1))
        data[t] = root + offsets
    return GaitSample(frames=data, label=label, sample_id=sample_id)


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angles between the column spans of a and b, in radians."""
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def metric_axiom_violation(rng: np.random.Generator) -> float:
    """Worst metric-axiom violation for one random matcher instance.

    Draws a random positive-definite context and three templates, then
    measures nonnegativity, symmetry, identity, and the triangle
    inequality. A correct matcher returns at most rounding noise.
    """
    dim = int(rng.integers(1, 6))
    ctx = random_spd_ctx(rng, dim)
    a, b, c = (
        GaitTemplate(
            vector=rng.normal(0.0, 3.0, size=dim), label="x", sample_id=f"t{i}"
        )
        for i in range(3)
    )
    dab = mahalanobis(ctx, a, b)
    dba = mahalanobis(ctx, b, a)
    dac = mahalanobis(ctx, a, c)
    dcb = mahalanobis(ctx, c, b)
    return max(
        -min(dab, dac, dcb),
        abs(dab - dba),
        mahalanobis(ctx, a, a),
        dab - (dac + dcb),
    )


def recombination_violation(rng: np.random.Generator) -> float:
    """Distance drift when feature columns are invertibly recombined.

    The context is re-estimated from the recombined templates, so the
    Mahalanobis form must cancel the mixing exactly; returns the worst
    relative pairwise-distance change.
    """
    classes = int(rng.integers(2, 5))
    dim = int(rng.integers(3, 8))
    flats = random_flats(rng, classes=classes, dim=dim, members_low=4, members_high=8)
    stats = compute_scatter(flats)
    base = learn_mmc(stats, flats)
    k = base.feature_dim
    while True:
        mix = rng.normal(size=(k, k))
        if abs(np.linalg.det(mix)) > 1e-3:
            break
    mixed = FeatureTransform(method=base.method, phi=base.phi @ mix, delta=base.delta)
    t1 = [extract_template(base, f) for f in flats]
    t2 = [extract_template(mixed, f) for f in flats]
    c1 = build_matching_context(base, t1)
    c2 = build_matching_context(mixed, t2)
    worst = 0.0
    probes = min(6, len(flats))
    for i in range(probes):
        for j in range(i + 1, probes):
            d1 = mahalanobis(c1, t1[i], t1[j])
            d2 = mahalanobis(c2, t2[i], t2[j])
            worst = max(worst, abs(d1 - d2) / max(d1, d2, 1e-9))
    return worst


def mmc_euclidean_violation(rng: np.random.Generator) -> float:
    """Gap between matcher output and plain Euclidean distance after the
    margin learner, whose transforms whiten total scatter. Returns the
    worst relative difference over a handful of template pairs."""
    classes = int(rng.integers(2, 5))
    dim = int(rng.integers(3, 8))
    flats = random_flats(rng, classes=classes, dim=dim, members_low=4, members_high=8)
    stats = compute_scatter(flats)
    t = learn_mmc(stats, flats)
    temps = [extract_template(t, f) for f in flats]
    ctx = build_matching_context(t, temps)
    worst = 0.0
    probes = min(8, len(temps))
    for i in range(probes):
        for j in range(i + 1, probes):
            d = mahalanobis(ctx, temps[i], temps[j])
            e = float(np.linalg.norm(temps[i].vector - temps[j].vector))
            worst = max(worst, abs(d - e) / max(e, 1e-9))
    return worst
