"""Angle geometry of weight vectors and sign-region probabilities.

The sign of a dot product with a shared input vector depends only on
which side of each weight vector's perpendicular hyperplane the input
falls. For two weight vectors at angle theta, a uniformly random input
direction lands in the mixed-sign regions with probability theta/360
each and in the same-sign regions with probability 1/2 - theta/360 each.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

REGIONS = ("++", "--", "+-", "-+")


def cosine_angle(a, b) -> float:
    """Angle between two vectors in degrees, in [0, 180]."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ShapeError("cosine_angle requires equal-length vectors")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValueError("angle undefined for zero-norm vector")
    cos = np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0)
    return math.degrees(math.acos(cos))


def sign_region_probability(theta_deg: float, region: str) -> float:
    """Probability that a uniform random direction produces the given sign pair.

    Mixed-sign regions ('+-', '-+') have probability theta/360; same-sign
    regions ('++', '--') have 1/2 - theta/360. The four regions sum to 1.
    """
    if not 0.0 <= theta_deg <= 180.0:
        raise ValueError(f"theta must be in [0, 180], got {theta_deg}")
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}")
    if region in ("+-", "-+"):
        return theta_deg / 360.0
    return 0.5 - theta_deg / 360.0


_MC_BLOCK = 1 << 16


def monte_carlo_sign_probability(theta_deg: float, dim: int, n_samples: int, seed: int) -> dict:
    """Empirical sign-region frequencies from uniform directions in dim-space.

    Two unit vectors are placed at angle theta; directions are drawn as
    normalized gaussians (uniform on the hypersphere) and the sign pair of
    their dot products is tallied. sign(0) counts as +. Deterministic per
    seed; full dim-dimensional sampling keeps this an independent check of
    the closed-form region probabilities.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not 0.0 <= theta_deg <= 180.0:
        raise ValueError(f"theta must be in [0, 180], got {theta_deg}")
    rng = np.random.default_rng(seed)
    theta = math.radians(theta_deg)
    a = np.zeros(dim)
    a[0] = 1.0
    b = np.zeros(dim)
    b[0] = math.cos(theta)
    b[1] = math.sin(theta)

    counts = {r: 0 for r in REGIONS}
    remaining = n_samples
    while remaining > 0:
        block = min(remaining, _MC_BLOCK)
        c = rng.standard_normal((block, dim))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        pa = c @ a >= 0.0
        pb = c @ b >= 0.0
        counts["++"] += int(np.count_nonzero(pa & pb))
        counts["--"] += int(np.count_nonzero(~pa & ~pb))
        counts["+-"] += int(np.count_nonzero(pa & ~pb))
        counts["-+"] += int(np.count_nonzero(~pa & pb))
        remaining -= block
    return {r: counts[r] / n_samples for r in REGIONS}


def pairwise_angles(weights) -> np.ndarray:
    """(N, N) matrix of angles in degrees between weight rows.

    Rows with zero norm get NaN against every peer (callers treat them as
    unclusterable). The diagonal is 0 for valid rows.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError("pairwise_angles expects a (n, k) matrix")
    norms = np.linalg.norm(w, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = w / norms[:, None]
        cos = np.clip(unit @ unit.T, -1.0, 1.0)
    ang = np.degrees(np.arccos(cos))
    bad = norms == 0.0
    ang[bad, :] = np.nan
    ang[:, bad] = np.nan
    return ang
