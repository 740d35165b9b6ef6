"""Synthetic trans-contact simulator: one Gaussian inter-centromere peak per
block plus additive Gaussian noise, parameterized per map."""

from __future__ import annotations

import dataclasses

import numpy as np

from .genome import BlockRow, ContactMap, GenomeSpec

SIGMA2_RANGE = (0.1, 10.0)   # peak width, in bins^2
ALPHA_RANGE = (1, 1000)      # integer peak intensity, inclusive
DEFAULT_NOISE_FRAC = 0.10


@dataclasses.dataclass(frozen=True)
class SimParams:
    """Per-map nuisance parameters of the contact model."""

    sigma2: float
    alpha: float
    noise_frac: float = DEFAULT_NOISE_FRAC

    def __post_init__(self):
        assert self.sigma2 > 0 and self.alpha > 0 and self.noise_frac >= 0


def sample_sim_params(rng: np.random.Generator, noise_frac: float = DEFAULT_NOISE_FRAC) -> SimParams:
    """Draw sigma2 ~ U(0.1, 10) and integer alpha ~ U{1..1000}; one draw per map."""
    sigma2 = rng.uniform(*SIGMA2_RANGE)
    alpha = float(rng.integers(ALPHA_RANGE[0], ALPHA_RANGE[1] + 1))
    return SimParams(sigma2=sigma2, alpha=alpha, noise_frac=noise_frac)


def _axis_profile(spec: GenomeSpec, i: int, theta_i, sigma2) -> np.ndarray:
    """exp(-(c_k - theta)^2 / (2 sigma2 r^2)) over bin centers c_k of chromosome i.

    theta_i and sigma2 may be scalars or length-N vectors (profiles stack on rows).
    sigma2 is in bins^2, positions in bp; the bp-space sd is sqrt(sigma2) * r.
    """
    r = float(spec.resolution_bp)
    centers = (np.arange(spec.bins(i)) + 0.5) * r
    mu = np.atleast_1d(np.asarray(theta_i, dtype=np.float64))[:, None]
    s2 = np.atleast_1d(np.asarray(sigma2, dtype=np.float64))[:, None] * r * r
    return np.exp(-((centers - mu) ** 2) / (2.0 * s2))


def _peak_coef(params: SimParams) -> float:
    return params.alpha / (2.0 * np.pi * params.sigma2)


def _add_noise(block: np.ndarray, noise_frac: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise with mean = sd = (noise_frac / 2) * max(block),
    clamped to keep counts non-negative."""
    level = 0.5 * noise_frac * float(block.max())
    noisy = block + (rng.standard_normal(block.shape) * level + level)
    return np.maximum(noisy, 0.0)


def simulate_block(
    spec: GenomeSpec,
    i: int,
    j: int,
    theta_i: float,
    theta_j: float,
    params: SimParams,
    rng: np.random.Generator | None = None,
    noise: bool = True,
) -> np.ndarray:
    """One trans block: an isotropic Gaussian peak centered at the centromere pair.

    The density is evaluated at bin centers, so the peak maximum always lands on
    the bin containing (or nearest to) the true position. Consumes exactly one
    rng draw (the noise matrix) when noise is on, none otherwise.
    """
    assert i != j
    lows, highs = spec.prior_bounds()
    assert lows[i] <= theta_i <= highs[i] and lows[j] <= theta_j <= highs[j]
    u = _axis_profile(spec, i, theta_i, params.sigma2)[0]
    v = _axis_profile(spec, j, theta_j, params.sigma2)[0]
    block = np.outer(u, v) * _peak_coef(params)
    if noise:
        assert rng is not None
        block = _add_noise(block, params.noise_frac, rng)
    return block


def simulate_map(
    spec: GenomeSpec,
    theta,
    rng: np.random.Generator,
    params: SimParams | None = None,
    noise: bool = True,
) -> ContactMap:
    """Full trans-contact map for centromere vector theta.

    Draw order (fixed for reproducibility): sigma2, alpha (unless params given),
    then one noise matrix per block in ascending (i, j) order.
    """
    theta = np.asarray(theta, dtype=np.float64)
    assert theta.shape == (spec.n_chrom,)
    if params is None:
        params = sample_sim_params(rng)
    profiles = [_axis_profile(spec, i, theta[i], params.sigma2)[0] for i in range(spec.n_chrom)]
    coef = _peak_coef(params)
    blocks = {}
    for i in range(spec.n_chrom):
        for j in range(i + 1, spec.n_chrom):
            block = np.outer(profiles[i], profiles[j]) * coef
            if noise:
                block = _add_noise(block, params.noise_frac, rng)
            blocks[(i, j)] = block
    return ContactMap(n_chrom=spec.n_chrom, blocks=blocks)


def simulate_block_row(
    spec: GenomeSpec,
    i: int,
    theta_i: float,
    rng: np.random.Generator,
    params: SimParams | None = None,
    noise: bool = True,
) -> BlockRow:
    """Chromosome i's row of trans blocks with partner centromeres drawn fresh
    from the prior (they are nuisance in per-chromosome inference).

    Draw order: partner positions (one uniform draw), sigma2, alpha (unless
    params given), then one noise matrix per partner in ascending order.
    """
    lows, highs = spec.prior_bounds()
    assert lows[i] <= theta_i <= highs[i]
    partners = [j for j in range(spec.n_chrom) if j != i]
    theta_partners = rng.uniform(lows[partners], highs[partners])
    if params is None:
        params = sample_sim_params(rng)
    coef = _peak_coef(params)
    u = _axis_profile(spec, i, theta_i, params.sigma2)[0]
    blocks = {}
    for j, theta_j in zip(partners, theta_partners):
        v = _axis_profile(spec, j, theta_j, params.sigma2)[0]
        block = np.outer(u, v) * coef
        if noise:
            block = _add_noise(block, params.noise_frac, rng)
        blocks[j] = block
    return BlockRow(chrom=i, n_chrom=spec.n_chrom, blocks=blocks)


# --- batched engine paths -------------------------------------------------
#
# These vectorize the Gaussian-peak arithmetic across simulations while
# consuming per-simulation child rng streams in exactly the order of the
# single-simulation ops above, so results are bitwise identical to a loop
# (and independent of batching / future parallel execution).


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return rng.spawn(n)


def simulate_map_batch(
    spec: GenomeSpec,
    thetas: np.ndarray,
    rngs: list[np.random.Generator],
    noise: bool = True,
    noise_frac: float = DEFAULT_NOISE_FRAC,
) -> list[ContactMap]:
    """simulate_map over a batch; rngs holds one child generator per row of thetas."""
    thetas = np.asarray(thetas, dtype=np.float64)
    n = thetas.shape[0]
    assert thetas.shape == (n, spec.n_chrom) and len(rngs) == n
    params = [sample_sim_params(r, noise_frac) for r in rngs]
    sigma2 = np.array([p.sigma2 for p in params])
    coefs = np.array([_peak_coef(p) for p in params])
    profiles = [_axis_profile(spec, i, thetas[:, i], sigma2) for i in range(spec.n_chrom)]
    per_map: list[dict] = [dict() for _ in range(n)]
    for i in range(spec.n_chrom):
        for j in range(i + 1, spec.n_chrom):
            peaks = np.einsum("na,nb->nab", profiles[i], profiles[j]) * coefs[:, None, None]
            for m in range(n):
                block = peaks[m]
                if noise:
                    block = _add_noise(block, params[m].noise_frac, rngs[m])
                per_map[m][(i, j)] = block
    return [ContactMap(n_chrom=spec.n_chrom, blocks=b) for b in per_map]


def simulate_block_row_batch(
    spec: GenomeSpec,
    i: int,
    thetas_i: np.ndarray,
    rngs: list[np.random.Generator],
    noise: bool = True,
    noise_frac: float = DEFAULT_NOISE_FRAC,
) -> list[BlockRow]:
    """simulate_block_row over a batch; one child generator per simulation."""
    thetas_i = np.asarray(thetas_i, dtype=np.float64)
    n = thetas_i.shape[0]
    assert thetas_i.shape == (n,) and len(rngs) == n
    lows, highs = spec.prior_bounds()
    partners = [j for j in range(spec.n_chrom) if j != i]
    theta_partners = np.stack([r.uniform(lows[partners], highs[partners]) for r in rngs])
    params = [sample_sim_params(r, noise_frac) for r in rngs]
    sigma2 = np.array([p.sigma2 for p in params])
    coefs = np.array([_peak_coef(p) for p in params])
    u = _axis_profile(spec, i, thetas_i, sigma2)
    per_row: list[dict] = [dict() for _ in range(n)]
    for col, j in enumerate(partners):
        v = _axis_profile(spec, j, theta_partners[:, col], sigma2)
        peaks = np.einsum("na,nb->nab", u, v) * coefs[:, None, None]
        for m in range(n):
            block = peaks[m]
            if noise:
                block = _add_noise(block, params[m].noise_frac, rngs[m])
            per_row[m][j] = block
    return [BlockRow(chrom=i, n_chrom=spec.n_chrom, blocks=b) for b in per_row]
