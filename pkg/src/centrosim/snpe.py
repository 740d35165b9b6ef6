"""Sequential neural posterior estimation: per-round flow training on a
cumulative dataset, proposals drawn from the latest posterior truncated to
the prior support, and atomic proposal correction from round two on."""

from __future__ import annotations

import dataclasses

import numpy as np

from .flows import BoxLogit, ConditionalFlow, clone_flow, train_flow
from .smc_abc import BoxPrior

DEFAULT_K_ATOMS = 10
_REJECT_CHUNK = 4096
_MIN_ACCEPT_RATE = 1e-3


@dataclasses.dataclass
class PosteriorEstimate:
    """A frozen flow conditioned on the reference context."""

    flow: ConditionalFlow
    context: np.ndarray
    t: int
    accept_rate: float | None = None
    history: dict | None = None

    def log_prob(self, theta) -> np.ndarray:
        """Log density of the (untruncated) flow at external-coordinate theta."""
        return self.flow.log_prob(theta, self.context)

    def sample(self, n: int, rng: np.random.Generator, prior: BoxPrior | None = None):
        """n draws; with a prior given, rejection-truncate to its support."""
        if prior is None:
            return self.flow.sample(n, rng, self.context)
        draws, rate = _sample_truncated(self.flow, self.context, prior, n, rng)
        self.accept_rate = rate
        return draws


def _sample_truncated(flow, context, prior, n, rng):
    out = []
    kept = 0
    drawn = 0
    while kept < n:
        chunk = flow.sample(_REJECT_CHUNK, rng, context)
        drawn += chunk.shape[0]
        good = chunk[prior.contains(chunk)]
        kept += good.shape[0]
        out.append(good)
        if drawn >= 10 * _REJECT_CHUNK and kept / drawn < _MIN_ACCEPT_RATE:
            raise RuntimeError(
                f"posterior escaped the prior support (acceptance {kept / drawn:.2e})")
    rate = kept / drawn
    return np.concatenate(out)[:n], rate


def run_snpe(prior: BoxPrior, simulate_batch, summarize, ref_context,
             rng: np.random.Generator, n_rounds: int = 11, n_per_round: int = 1000,
             correction: str = "atomic", k_atoms: int = DEFAULT_K_ATOMS,
             flow_kwargs: dict | None = None, train_kwargs: dict | None = None,
             callback=None) -> list[PosteriorEstimate]:
    """Full sequential loop.

    simulate_batch(thetas, rngs) -> sims; summarize(sims) -> context matrix
    matching ref_context's scale. Round one trains on prior draws by plain
    maximum likelihood; later rounds add proposal-corrected atoms (unless
    correction="none") and keep training the same flow on all data so far.
    """
    assert correction in ("none", "atomic")
    ref_context = np.asarray(ref_context, dtype=np.float64)
    support = BoxLogit(prior.lows, prior.highs)
    flow = ConditionalFlow(prior.dim, ref_context.size, rng,
                           support=support, **(flow_kwargs or {}))
    tkw = dict(train_kwargs or {})

    all_theta = np.empty((0, prior.dim))
    all_ctx = np.empty((0, ref_context.size))
    all_logprop = np.empty(0)
    estimates: list[PosteriorEstimate] = []

    for t in range(1, n_rounds + 1):
        if t == 1:
            thetas = prior.sample(rng, n_per_round)
            logprop = prior.logpdf(thetas)
        else:
            prev = estimates[-1]
            thetas, rate = _sample_truncated(prev.flow, ref_context, prior,
                                             n_per_round, rng)
            # proposal density of the truncated sampler: flow density divided
            # by the acceptance mass, estimated from the rejection rate
            logprop = prev.log_prob(thetas) - np.log(rate)
        sims = _simulate_chunks(thetas, simulate_batch, rng)
        ctx = np.atleast_2d(np.asarray(summarize(sims), dtype=np.float64))
        if ctx.shape[0] != thetas.shape[0]:
            ctx = ctx.reshape(thetas.shape[0], -1)

        all_theta = np.vstack([all_theta, thetas])
        all_ctx = np.vstack([all_ctx, ctx])
        all_logprop = np.concatenate([all_logprop, logprop])

        round_corr = correction if t >= 2 else "none"
        history = train_flow(flow, all_theta, all_ctx, rng,
                             correction=round_corr, k_atoms=k_atoms,
                             log_proposal=all_logprop, **tkw)
        est = PosteriorEstimate(flow=clone_flow(flow), context=ref_context.copy(),
                                t=t, history=history)
        estimates.append(est)
        if callback:
            callback(est)
    return estimates


def _simulate_chunks(thetas, simulate_batch, rng, chunk: int = 256):
    rngs = rng.spawn(thetas.shape[0])
    sims = []
    for start in range(0, thetas.shape[0], chunk):
        stop = min(start + chunk, thetas.shape[0])
        sims.extend(simulate_batch(thetas[start:stop], rngs[start:stop]))
    return sims
