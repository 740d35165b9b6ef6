"""Sequential ABC engine: top-quantile selection, Gaussian perturbation with
whole-vector out-of-bound reversion, and kernel-corrected importance weights.
One engine serves both the Pearson-distance and learned-summary backends."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .genome import GenomeSpec
from .metrics import pearson_distance

DEFAULT_ROUNDS = 11
DEFAULT_N_PER_ROUND = 1000
DEFAULT_ACCEPT_FRAC = 0.05
_SIM_CHUNK = 256


@dataclasses.dataclass(frozen=True)
class BoxPrior:
    """Uniform prior over an axis-aligned box (the centromere support)."""

    lows: np.ndarray
    highs: np.ndarray

    def __post_init__(self):
        assert self.lows.shape == self.highs.shape and (self.lows < self.highs).all()

    @property
    def dim(self) -> int:
        return self.lows.size

    @classmethod
    def from_spec(cls, spec: GenomeSpec, chrom: int | None = None) -> "BoxPrior":
        lows, highs = spec.prior_bounds()
        if chrom is not None:
            lows, highs = lows[chrom:chrom + 1], highs[chrom:chrom + 1]
        return cls(lows=lows, highs=highs)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lows, self.highs, size=(n, self.dim))

    def contains(self, theta: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        return ((t >= self.lows) & (t <= self.highs)).all(axis=1)

    def logpdf(self, theta: np.ndarray) -> np.ndarray:
        log_vol = float(np.log(self.highs - self.lows).sum())
        inside = self.contains(theta)
        return np.where(inside, -log_vol, -np.inf)


@dataclasses.dataclass
class ParticlePopulation:
    """One ABC round's output: M particles with normalized weights."""

    particles: np.ndarray  # (M, D)
    weights: np.ndarray  # (M,), sums to 1
    t: int
    distances: np.ndarray | None = None  # accepted distances, same order
    epsilon: float | None = None  # the acceptance quantile this round

    def __post_init__(self):
        assert self.particles.ndim == 2
        assert self.weights.shape == (self.particles.shape[0],)
        assert abs(self.weights.sum() - 1.0) < 1e-9
        assert (self.weights > 0).all()

    @property
    def m(self) -> int:
        return self.particles.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


class PearsonDistance:
    """1 - mean trans-block Pearson correlation against a reference map."""

    tag = "pearson"

    def __init__(self, ref):
        self.ref = ref

    def __call__(self, sims: list) -> np.ndarray:
        return np.array([pearson_distance(s, self.ref) for s in sims])


class SummaryDistance:
    """Euclidean distance between learned summaries (bp scale) and the
    summary of the reference."""

    tag = "summary-l2"

    def __init__(self, net, ref, chrom: int | None = None):
        self.net = net
        self.chrom = chrom
        self.s_ref = np.atleast_1d(net.summarize(ref) if chrom is None
                                   else net.summarize(ref, chrom=chrom))

    def __call__(self, sims: list) -> np.ndarray:
        s = self.net.summarize(sims) if self.chrom is None \
            else self.net.summarize(sims, chrom=self.chrom)
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 1:  # per-chromosome nets summarize rows to scalars
            s = s[:, None]
        return np.sqrt(((s - self.s_ref[None, :]) ** 2).sum(axis=1))


def n_accepted(n: int, accept_frac: float = DEFAULT_ACCEPT_FRAC) -> int:
    if n * accept_frac < 1.0:
        raise ValueError(f"n={n} too small to fill one particle at acceptance {accept_frac}")
    return int(np.ceil(accept_frac * n))


def _simulate_distances(thetas, simulate_batch, distance, rng):
    """Chunked simulate-and-score; child streams are spawned up front so the
    result is independent of the chunk size."""
    n = thetas.shape[0]
    rngs = rng.spawn(n)
    d = np.empty(n, dtype=np.float64)
    for start in range(0, n, _SIM_CHUNK):
        stop = min(start + _SIM_CHUNK, n)
        sims = simulate_batch(thetas[start:stop], rngs[start:stop])
        d[start:stop] = distance(sims)
    return d


def _select(thetas, d, m):
    """Indices of the m smallest distances, ties broken by draw order."""
    order = np.argsort(d, kind="stable")[:m]
    return thetas[order], d[order], float(d[order].max())


def abc_round0(prior: BoxPrior, simulate_batch, distance, n: int,
               rng: np.random.Generator,
               accept_frac: float = DEFAULT_ACCEPT_FRAC) -> ParticlePopulation:
    """Rejection-ABC round: prior draws scored, best fraction kept, uniform
    weights."""
    m = n_accepted(n, accept_frac)
    thetas = prior.sample(rng, n)
    d = _simulate_distances(thetas, simulate_batch, distance, rng)
    kept, kept_d, eps = _select(thetas, d, m)
    weights = np.full(m, 1.0 / m)
    return ParticlePopulation(particles=kept, weights=weights, t=0,
                              distances=kept_d, epsilon=eps)


def perturb(pop: ParticlePopulation, prior: BoxPrior, sigma: float, n: int,
            rng: np.random.Generator) -> np.ndarray:
    """N proposals: resample M particles by weight, cycle through them, add
    isotropic Gaussian noise; any out-of-bound coordinate reverts the whole
    vector to its unperturbed base."""
    resampled = pop.particles[rng.choice(pop.m, size=pop.m, p=pop.weights)]
    bases = resampled[np.arange(n) % pop.m]
    if sigma == 0:
        return bases.copy()
    proposals = bases + rng.normal(0.0, sigma, size=bases.shape)
    bad = ~prior.contains(proposals)
    proposals[bad] = bases[bad]
    return proposals


def compute_weights(accepted: np.ndarray, prev: ParticlePopulation,
                    prior: BoxPrior, sigma: float) -> np.ndarray:
    """w_m = pi(theta_m) / sum_k w_k K(theta_m; theta_k), normalized to sum 1.

    Evaluated in log space; the Gaussian kernel makes the denominator
    strictly positive.
    """
    sq = cdist(accepted, prev.particles, metric="sqeuclidean")
    dim = accepted.shape[1]
    log_k = -0.5 * sq / sigma ** 2 - dim * np.log(sigma * np.sqrt(2.0 * np.pi))
    log_denom = logsumexp(log_k + np.log(prev.weights)[None, :], axis=1)
    assert np.isfinite(log_denom).all(), "degenerate kernel mixture"
    log_w = prior.logpdf(accepted) - log_denom
    log_w -= logsumexp(log_w)
    w = np.exp(log_w)
    return w / w.sum()


def run_smc_abc(prior: BoxPrior, simulate_batch, distance,
                rng: np.random.Generator, n_rounds: int = DEFAULT_ROUNDS,
                n_per_round: int = DEFAULT_N_PER_ROUND,
                accept_frac: float = DEFAULT_ACCEPT_FRAC,
                sigma: float | None = None, callback=None) -> list[ParticlePopulation]:
    """Full sequential loop; sigma defaults to the caller-supplied kernel sd
    (pass the map resolution in bp for genome inference)."""
    assert n_rounds >= 1 and sigma is not None and sigma > 0
    populations = [abc_round0(prior, simulate_batch, distance, n_per_round, rng, accept_frac)]
    if callback:
        callback(populations[-1])
    for t in range(1, n_rounds):
        prev = populations[-1]
        proposals = perturb(prev, prior, sigma, n_per_round, rng)
        d = _simulate_distances(proposals, simulate_batch, distance, rng)
        kept, kept_d, eps = _select(proposals, d, prev.m)
        weights = compute_weights(kept, prev, prior, sigma)
        pop = ParticlePopulation(particles=kept, weights=weights, t=t,
                                 distances=kept_d, epsilon=eps)
        populations.append(pop)
        if callback:
            callback(pop)
    return populations
