"""Conditional masked autoregressive flow over centromere coordinates.

Density evaluation is a single masked pass per transform; sampling inverts
the stack dimension by dimension. Parameters are kept in float64 so the
round-trip invertibility contract (1e-6) holds with margin.
"""

from __future__ import annotations

import numpy as np

from .nn import autodiff as ad
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import MaskedDense
from .nn.optim import AdamState, adam_step
from .nn.training import EarlyStopper, batch_indices, check_finite
from .rng import make_rng

DEFAULT_TRANSFORMS = 5
DEFAULT_HIDDEN = 50
DEFAULT_CLAMP = 3.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


# --- support maps -------------------------------------------------------------


class IdentityMap:
    """No-op coordinate map for unbounded parameters (toy models)."""

    kind = "identity"

    def __init__(self, dim: int):
        self.dim = dim

    def to_internal(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return theta.copy(), np.zeros(theta.shape[0])

    def from_internal(self, u):
        return np.asarray(u, dtype=np.float64).copy()

    def spec_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


class BoxLogit:
    """Map a box (lows, highs) to all of R^D: scale to (0, 1), then logit.

    Boundary points map to +-inf; to_internal reports them through a -inf
    log-Jacobian so densities come out as exactly zero.
    """

    kind = "box-logit"

    def __init__(self, lows, highs):
        self.lows = np.asarray(lows, dtype=np.float64)
        self.highs = np.asarray(highs, dtype=np.float64)
        assert (self.highs > self.lows).all()
        self.dim = self.lows.size

    def to_internal(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        x = (theta - self.lows) / (self.highs - self.lows)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.log(x) - np.log1p(-x)
            # d u / d theta = 1 / ((high-low) * x * (1-x))
            logjac = -(np.log(self.highs - self.lows) + np.log(x) + np.log1p(-x)).sum(axis=1)
        bad = (x <= 0.0) | (x >= 1.0) | ~np.isfinite(x)
        if bad.any():
            rows = bad.any(axis=1)
            u[rows] = 0.0
            logjac[rows] = -np.inf
        return u, logjac

    def from_internal(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        x = 1.0 / (1.0 + np.exp(-u))
        return self.lows + x * (self.highs - self.lows)

    def spec_dict(self) -> dict:
        return {"kind": self.kind, "lows": self.lows.tolist(), "highs": self.highs.tolist()}


def support_from_dict(d: dict):
    if d["kind"] == "identity":
        return IdentityMap(d["dim"])
    return BoxLogit(np.asarray(d["lows"]), np.asarray(d["highs"]))


# --- masked conditioner -------------------------------------------------------


def _made_masks(dim: int, context_dim: int, hidden: int):
    """Autoregressive masks: outputs for coordinate d see only coordinates
    < d plus the full context. With dim == 1 the input path is fully severed
    and the conditioner is a function of the context alone."""
    deg_in = np.arange(1, dim + 1)
    if dim > 1:
        deg_h = (np.arange(hidden) % (dim - 1)) + 1
    else:
        deg_h = np.zeros(hidden, dtype=int)
    m_in = (deg_in[:, None] <= deg_h[None, :]).astype(np.float64)
    m_ctx = np.ones((context_dim, hidden))
    m_out = (deg_h[:, None] < deg_in[None, :]).astype(np.float64)
    return np.vstack([m_in, m_ctx]), m_out


class MadeBlock:
    """One affine autoregressive transform: u -> (u - m(u,c)) * exp(-a(u,c)),
    with zero-initialized heads so the initial transform is the identity."""

    def __init__(self, rng, dim: int, context_dim: int, hidden: int,
                 clamp: float = DEFAULT_CLAMP):
        m_joint, m_out = _made_masks(dim, context_dim, hidden)
        self.dim = dim
        self.clamp = clamp
        self.body = MaskedDense(rng, dim + context_dim, hidden, m_joint, dtype=np.float64)
        self.shift = MaskedDense(rng, hidden, dim, m_out, dtype=np.float64, zero_init=True)
        self.log_scale = MaskedDense(rng, hidden, dim, m_out, dtype=np.float64, zero_init=True)
        self.params = self.body.params + self.shift.params + self.log_scale.params

    def forward_graph(self, z: ad.Tensor, c: ad.Tensor):
        h = ad.relu(self.body(ad.concat([z, c], axis=1)))
        m = self.shift(h)
        a = ad.scale(ad.tanh(ad.scale(self.log_scale(h), 1.0 / self.clamp)), self.clamp)
        return m, a

    def forward_numpy(self, z: np.ndarray, c: np.ndarray):
        x = np.concatenate([z, c], axis=1)
        h = x @ (self.body.W.values * self.body.mask.values) + self.body.b.values
        np.maximum(h, 0.0, out=h)
        m = h @ (self.shift.W.values * self.shift.mask.values) + self.shift.b.values
        a = h @ (self.log_scale.W.values * self.log_scale.mask.values) + self.log_scale.b.values
        return m, self.clamp * np.tanh(a / self.clamp)


# --- the flow -----------------------------------------------------------------


class ConditionalFlow:
    """Stack of masked affine transforms with reversing permutations between
    them, base distribution standard normal, conditioned on a context vector."""

    def __init__(self, dim: int, context_dim: int, rng,
                 n_transforms: int = DEFAULT_TRANSFORMS, hidden: int = DEFAULT_HIDDEN,
                 support=None, clamp: float = DEFAULT_CLAMP):
        self.dim = dim
        self.context_dim = context_dim
        self.hidden = hidden
        self.clamp = clamp
        self.support = support if support is not None else IdentityMap(dim)
        self.transforms = [MadeBlock(rng, dim, context_dim, hidden, clamp)
                           for _ in range(n_transforms)]
        self.perms = [np.arange(dim)[::-1].copy() for _ in range(n_transforms - 1)]
        self.params = [p for t in self.transforms for p in t.params]

    # - density -

    def log_prob_internal_graph(self, u: np.ndarray, c: np.ndarray) -> ad.Tensor:
        """Per-sample log q(u | c) as a graph node, for training."""
        n = u.shape[0]
        z = ad.Tensor(np.asarray(u, dtype=np.float64))
        ct = ad.Tensor(np.asarray(c, dtype=np.float64))
        logdet = None
        for k, block in enumerate(self.transforms):
            m, a = block.forward_graph(z, ct)
            z = ad.mul(ad.sub(z, m), ad.exp(ad.neg(a)))
            term = ad.neg(ad.tsum(a, axis=1))
            logdet = term if logdet is None else ad.add(logdet, term)
            if k < len(self.transforms) - 1:
                z = ad.permute_cols(z, self.perms[k])
        base = ad.add_const(ad.scale(ad.tsum(ad.mul(z, z), axis=1), -0.5),
                            np.full(n, -self.dim * _HALF_LOG_2PI))
        return ad.add(base, logdet)

    def log_prob_internal(self, u: np.ndarray, c: np.ndarray) -> np.ndarray:
        z = np.asarray(u, dtype=np.float64).copy()
        c = np.asarray(c, dtype=np.float64)
        logdet = np.zeros(z.shape[0])
        for k, block in enumerate(self.transforms):
            m, a = block.forward_numpy(z, c)
            z = (z - m) * np.exp(-a)
            logdet -= a.sum(axis=1)
            if k < len(self.transforms) - 1:
                z = z[:, self.perms[k]]
        base = -0.5 * (z * z).sum(axis=1) - self.dim * _HALF_LOG_2PI
        return base + logdet

    def _tile_context(self, context, n):
        context = np.asarray(context, dtype=np.float64)
        if context.ndim == 1:
            return np.tile(context, (n, 1))
        assert context.shape[0] == n
        return context

    def log_prob(self, theta, context) -> np.ndarray:
        """Log density in external coordinates; boundary points give -inf."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        u, logjac = self.support.to_internal(theta)
        c = self._tile_context(context, theta.shape[0])
        out = self.log_prob_internal(u, c) + logjac
        return out

    def transform_to_base(self, u: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Internal coordinates -> base-normal coordinates (the fast pass)."""
        z = np.asarray(u, dtype=np.float64).copy()
        for k, block in enumerate(self.transforms):
            m, a = block.forward_numpy(z, c)
            z = (z - m) * np.exp(-a)
            if k < len(self.transforms) - 1:
                z = z[:, self.perms[k]]
        return z

    def invert_from_base(self, z: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Base-normal coordinates -> internal coordinates, sequentially."""
        u = np.asarray(z, dtype=np.float64).copy()
        for k in range(len(self.transforms) - 1, -1, -1):
            if k < len(self.transforms) - 1:
                u = u[:, np.argsort(self.perms[k])]
            target = u.copy()
            for d in range(self.dim):
                m, a = self.transforms[k].forward_numpy(u, c)
                u[:, d] = target[:, d] * np.exp(a[:, d]) + m[:, d]
        return u

    def sample(self, n: int, rng: np.random.Generator, context) -> np.ndarray:
        """n draws in external coordinates."""
        z = rng.standard_normal((n, self.dim))
        c = self._tile_context(context, n)
        u = self.invert_from_base(z, c)
        return self.support.from_internal(u)

    # - persistence -

    def arch_dict(self) -> dict:
        return {
            "dim": self.dim,
            "context_dim": self.context_dim,
            "n_transforms": len(self.transforms),
            "hidden": self.hidden,
            "clamp": self.clamp,
            "support": self.support.spec_dict(),
        }


def clone_flow(flow: ConditionalFlow) -> ConditionalFlow:
    """Exact parameter copy with the same architecture (frozen snapshot)."""
    out = ConditionalFlow(flow.dim, flow.context_dim, make_rng(0),
                          n_transforms=len(flow.transforms), hidden=flow.hidden,
                          support=flow.support, clamp=flow.clamp)
    for p, q in zip(out.params, flow.params):
        p.values = q.values.copy()
    return out


def save_flow(flow: ConditionalFlow, path, extra: dict | None = None) -> None:
    header = {"kind": "flow", "arch": flow.arch_dict()}
    if extra:
        header.update(extra)
    save_checkpoint(path, header, flow.params)


def load_flow(path) -> tuple[ConditionalFlow, dict]:
    header, arrays = load_checkpoint(path)
    assert header.get("kind") == "flow", "not a flow checkpoint"
    arch = header["arch"]
    flow = ConditionalFlow(arch["dim"], arch["context_dim"], make_rng(0),
                           n_transforms=arch["n_transforms"], hidden=arch["hidden"],
                           support=support_from_dict(arch["support"]), clamp=arch["clamp"])
    assert len(arrays) == len(flow.params)
    for p, a in zip(flow.params, arrays):
        p.values = a.astype(np.float64)
    return flow, header


# --- training -----------------------------------------------------------------


def _atom_indices(n: int, k_atoms: int, rng: np.random.Generator) -> np.ndarray:
    """(n, k) index matrix: column 0 is each row itself, the rest are distinct
    other rows of the same batch."""
    k = min(k_atoms, n)
    scores = rng.uniform(size=(n, n))
    np.fill_diagonal(scores, np.inf)
    others = np.argsort(scores, axis=1)[:, :k - 1]
    return np.hstack([np.arange(n)[:, None], others])


def _nll_graph(flow, u, c):
    return ad.neg(ad.tmean(flow.log_prob_internal_graph(u, c)))


def _atomic_loss_graph(flow, u, c, log_extra, idx):
    """Atomic contrastive loss: softmax over each row's atom set of the
    corrected external log densities; column 0 holds the matching pair."""
    n, k = idx.shape
    flat = idx.ravel()
    u_atoms = u[flat]
    c_rep = np.repeat(c, k, axis=0)
    logq = flow.log_prob_internal_graph(u_atoms, c_rep)
    score = ad.add_const(ad.reshape(logq, (n, k)), log_extra[idx])
    matched = ad.tsum(ad.mul(score, _onehot_col0(n, k)), axis=1)
    return ad.neg(ad.tmean(ad.sub(matched, ad.logsumexp(score, axis=1))))


def _onehot_col0(n: int, k: int) -> np.ndarray:
    one = np.zeros((n, k))
    one[:, 0] = 1.0
    return one


def train_flow(flow: ConditionalFlow, thetas: np.ndarray, contexts: np.ndarray,
               rng: np.random.Generator, epochs: int = 200,
               batch_size: int | None = 64, lr: float = 5e-4,
               val_fraction: float = 0.1, patience: int = 20,
               correction: str = "none", k_atoms: int = 10,
               log_proposal: np.ndarray | None = None) -> dict:
    """Maximum-likelihood (correction="none") or atomic contrastive training
    (correction="atomic") of the flow on (theta, context) pairs.

    log_proposal carries per-sample proposal log densities for the atomic
    correction; None means all samples came from the prior.

    Early stopping always watches the plain validation NLL, which stays
    comparable across both objectives.
    """
    assert correction in ("none", "atomic")
    theta2 = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    n = theta2.shape[0]
    u, logjac = flow.support.to_internal(theta2)
    assert np.isfinite(logjac).all(), "training thetas on the support boundary"
    c = flow._tile_context(contexts, n)

    if correction == "atomic":
        # per-atom correction to external density: support Jacobian plus the
        # prior-over-proposal log weight; the uniform prior itself is constant
        # across any atom row and drops out of the softmax
        adjust = np.zeros(n) if log_proposal is None else -np.asarray(log_proposal)
        log_extra = logjac + adjust
    else:
        log_extra = None

    perm = rng.permutation(n)
    n_val = int(np.ceil(val_fraction * n)) if val_fraction > 0 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    state = AdamState(lr=lr)
    stopper = EarlyStopper(flow.params, patience)
    history = {"train_loss": [], "val_nll": []}

    for epoch in range(epochs):
        losses = []
        for bidx in batch_indices(len(train_idx), batch_size, rng):
            sel = train_idx[bidx]
            ad.zero_grads(flow.params)
            if correction == "atomic" and len(sel) >= 2:
                idx = _atom_indices(len(sel), k_atoms, rng)
                loss = _atomic_loss_graph(flow, u[sel], c[sel], log_extra[sel], idx)
            else:
                loss = _nll_graph(flow, u[sel], c[sel])
            ad.backward(loss)
            adam_step(flow.params, state)
            losses.append(check_finite(float(loss.values), f"flow epoch {epoch}"))
        history["train_loss"].append(float(np.mean(losses)))
        if n_val:
            val = -float(np.mean(flow.log_prob_internal(u[val_idx], c[val_idx])
                                 + logjac[val_idx]))
            history["val_nll"].append(check_finite(val, f"flow val epoch {epoch}"))
            if stopper.update(val, epoch):
                break
    if n_val:
        stopper.restore()
        history["best_epoch"] = stopper.best_epoch
    return history
