"""Map-comparison distances and posterior-quality metrics."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .genome import BlockRow, ContactMap


def _paired_blocks(a, b) -> list[tuple[np.ndarray, np.ndarray]]:
    if isinstance(a, ContactMap) and isinstance(b, ContactMap):
        assert set(a.blocks) == set(b.blocks)
        return [(a.blocks[k], b.blocks[k]) for k in sorted(a.blocks)]
    if isinstance(a, BlockRow) and isinstance(b, BlockRow):
        assert a.chrom == b.chrom and set(a.blocks) == set(b.blocks)
        return [(a.blocks[j], b.blocks[j]) for j in a.partners()]
    raise TypeError(f"cannot pair blocks of {type(a).__name__} and {type(b).__name__}")


def _pearson_flat(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of two flattened arrays; 0 when either is constant."""
    x = x.ravel().astype(np.float64)
    y = y.ravel().astype(np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        return 0.0
    return float((xc @ yc) / denom)


def block_pearson(a, b) -> float:
    """Mean over trans blocks of the flattened-block Pearson correlation.

    Constant (zero-variance) blocks contribute 0 rather than NaN, so maps with
    empty blocks still compare.
    """
    pairs = _paired_blocks(a, b)
    assert all(x.shape == y.shape for x, y in pairs)
    return float(np.mean([_pearson_flat(x, y) for x, y in pairs]))


def pearson_distance(a, b) -> float:
    """1 - block_pearson, the ABC discrepancy for map-valued data."""
    return 1.0 - block_pearson(a, b)


def _row_strips(a) -> list[np.ndarray]:
    if isinstance(a, ContactMap):
        return [np.hstack([a.block(i, j) for j in range(a.n_chrom) if j != i])
                for i in range(a.n_chrom)]
    if isinstance(a, BlockRow):
        return [np.hstack([a.blocks[j] for j in a.partners()])]
    return [np.asarray(a, dtype=np.float64)]


def row_pearson(a, b) -> float:
    """Mean of per-matrix-row Pearson correlations over trans columns.

    Rows whose values are constant in either input are excluded from the mean;
    returns NaN when no row is usable.
    """
    strips_a, strips_b = _row_strips(a), _row_strips(b)
    vals = []
    for sa, sb in zip(strips_a, strips_b):
        assert sa.shape == sb.shape
        for ra, rb in zip(sa, sb):
            if np.ptp(ra) == 0 or np.ptp(rb) == 0:
                continue
            vals.append(_pearson_flat(ra, rb))
    return float(np.mean(vals)) if vals else float("nan")


def _as_samples(samples, weights):
    s = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if weights is None:
        w = np.full(s.shape[0], 1.0 / s.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        assert w.shape == (s.shape[0],) and np.all(w >= 0)
        total = w.sum()
        assert total > 0
        w = w / total
    return s, w


def euclidean_mean(samples, theta_ref, weights=None) -> float:
    """Weighted mean Euclidean distance of posterior samples to theta_ref."""
    s, w = _as_samples(samples, weights)
    ref = np.asarray(theta_ref, dtype=np.float64)
    return float(w @ np.sqrt(((s - ref) ** 2).sum(axis=1)))


def per_dim_abs_error(samples, theta_ref, weights=None) -> np.ndarray:
    """Absolute error of the weighted posterior mean, per dimension."""
    s, w = _as_samples(samples, weights)
    ref = np.asarray(theta_ref, dtype=np.float64)
    return np.abs(w @ s - ref)


def w2_to_ref(samples, theta_ref, weights=None) -> float:
    """2-Wasserstein distance between the weighted empirical measure and the
    Dirac at theta_ref: the root-mean-square distance to theta_ref."""
    s, w = _as_samples(samples, weights)
    ref = np.asarray(theta_ref, dtype=np.float64)
    return float(np.sqrt(w @ ((s - ref) ** 2).sum(axis=1)))


def median_heuristic_bandwidth(samples) -> float:
    """Median pairwise Euclidean distance among the samples; 1.0 when the
    median degenerates to 0 (all samples identical)."""
    s = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if s.shape[0] < 2:
        return 1.0
    d = cdist(s, s)
    med = float(np.median(d[np.triu_indices(s.shape[0], k=1)]))
    return med if med > 0 else 1.0


def mmd_to_ref(samples, theta_ref, weights=None, bandwidth: float | None = None) -> float:
    """MMD between the weighted samples and the Dirac at theta_ref, with the
    Gaussian kernel exp(-||x-y||^2 / (2 h^2)) and the median-heuristic h.

    V-statistic form (diagonal kernel terms included), so the value is the
    norm of a kernel-mean difference and is always non-negative.
    """
    s, w = _as_samples(samples, weights)
    ref = np.atleast_2d(np.asarray(theta_ref, dtype=np.float64))
    h = median_heuristic_bandwidth(s) if bandwidth is None else float(bandwidth)
    assert h > 0
    k_ss = np.exp(-cdist(s, s, "sqeuclidean") / (2.0 * h * h))
    k_sr = np.exp(-cdist(s, ref, "sqeuclidean") / (2.0 * h * h))[:, 0]
    mmd2 = float(w @ k_ss @ w - 2.0 * (w @ k_sr) + 1.0)
    return float(np.sqrt(max(mmd2, 0.0)))


def posterior_metrics(samples, theta_ref, weights=None) -> dict:
    """The standard metric bundle for one posterior population."""
    s, w = _as_samples(samples, weights)
    return {
        "n_samples": int(s.shape[0]),
        "euclidean_mean": euclidean_mean(s, theta_ref, w),
        "w2": w2_to_ref(s, theta_ref, w),
        "mmd": mmd_to_ref(s, theta_ref, w),
        "per_dim_abs_error": [float(e) for e in per_dim_abs_error(s, theta_ref, w)],
    }
