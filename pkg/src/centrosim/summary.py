"""Learned summary statistics: CNN regression nets approximating E[theta | C],
in joint (whole-map) and shared-trunk per-chromosome flavors."""

from __future__ import annotations

import numpy as np

from .genome import BlockRow, ContactMap, GenomeSpec, spec_from_dict, spec_to_dict
from .nn import autodiff as ad
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import Conv2d, Dense
from .nn.optim import AdamState, adam_step
from .nn.training import EarlyStopper, batch_indices, check_finite
from .rng import make_rng
from .simulator import DEFAULT_NOISE_FRAC, simulate_map_batch

DEFAULT_LR = 5e-4
DEFAULT_EPOCHS = 200
DEFAULT_BATCH = 64
DEFAULT_PATIENCE = 20
DEFAULT_VAL_FRACTION = 0.1
_MIN_CONV_INPUT = 7  # two stride-2 3x3 convs need at least this much extent


def preprocess_block(block: np.ndarray) -> np.ndarray:
    """Divide a block by its own max; all-zero blocks pass through unchanged."""
    m = float(block.max()) if block.size else 0.0
    out = block.astype(np.float32)
    if m > 0:
        out = out / np.float32(m)
    return out


def preprocess_map(spec: GenomeSpec, cmap: ContactMap) -> np.ndarray:
    """Max-normalize every block, then assemble the (B, B, 1) trans matrix."""
    normed = ContactMap(
        n_chrom=cmap.n_chrom,
        blocks={k: preprocess_block(v) for k, v in cmap.blocks.items()},
    )
    full = normed.full_matrix(spec).astype(np.float32)
    return full[:, :, None]


def _pad_size(spec: GenomeSpec) -> int:
    return max(max(spec.bins(i) for i in range(spec.n_chrom)), _MIN_CONV_INPUT)


def preprocess_row(spec: GenomeSpec, row: BlockRow) -> np.ndarray:
    """Max-normalize and zero-pad each partner block to the common square size.

    Partners are always stacked in ascending chromosome order, which is what
    makes per-chromosome summaries exactly invariant to block-supply order.
    """
    size = _pad_size(spec)
    out = np.zeros((spec.n_chrom - 1, size, size, 1), dtype=np.float32)
    for slot, j in enumerate(row.partners()):
        block = preprocess_block(row.blocks[j])
        r, c = block.shape
        out[slot, :r, :c, 0] = block
    return out


class JointSummaryNet:
    """conv 3x3x8 /2 - relu - conv 3x3x16 /2 - relu - flatten - dense 128 -
    relu - dense L, on the max-normalized full trans assembly; outputs are in
    per-chromosome [0, 1] scale."""

    mode = "joint"

    def __init__(self, spec: GenomeSpec, rng: np.random.Generator):
        b = spec.total_bins
        assert b >= _MIN_CONV_INPUT, f"genome too small for the conv trunk ({b} bins)"
        self.spec = spec
        self.conv1 = Conv2d(rng, 3, 3, 1, 8, stride=2)
        self.conv2 = Conv2d(rng, 3, 3, 8, 16, stride=2)
        h, w = self.conv2.out_hw(*self.conv1.out_hw(b, b))
        self.n_flat = h * w * 16
        self.fc1 = Dense(rng, self.n_flat, 128)
        self.fc2 = Dense(rng, 128, spec.n_chrom)
        self.params = (self.conv1.params + self.conv2.params
                       + self.fc1.params + self.fc2.params)

    def forward(self, x: np.ndarray) -> ad.Tensor:
        t = ad.Tensor(x)
        h = ad.relu(self.conv1(t))
        h = ad.relu(self.conv2(h))
        h = ad.reshape(h, (x.shape[0], self.n_flat))
        h = ad.relu(self.fc1(h))
        return self.fc2(h)

    def summarize_scaled(self, maps, chunk: int = 256) -> np.ndarray:
        """Scaled summaries in [0, 1] for a ContactMap or a list of them."""
        single = isinstance(maps, ContactMap)
        items = [maps] if single else list(maps)
        outs = []
        for start in range(0, len(items), chunk):
            x = np.stack([self._as_input(m) for m in items[start:start + chunk]])
            outs.append(self.forward(x).values.astype(np.float64))
        out = np.clip(np.concatenate(outs), 0.0, 1.0)
        return out[0] if single else out

    def _as_input(self, m) -> np.ndarray:
        if isinstance(m, ContactMap):
            return preprocess_map(self.spec, m)
        arr = np.asarray(m, dtype=np.float32)
        assert arr.shape == (self.spec.total_bins, self.spec.total_bins, 1), \
            f"geometry mismatch: expected {(self.spec.total_bins,) * 2 + (1,)}, got {arr.shape}"
        return arr

    def summarize(self, maps) -> np.ndarray:
        """Summaries rescaled to bp and clipped to the prior support."""
        scaled = self.summarize_scaled(maps)
        lows, highs = self.spec.prior_bounds()
        return np.clip(scaled * self.spec.lengths, lows, highs)


class SharedSummaryNet:
    """Shared conv trunk over zero-padded blocks, mean-pooled across the L-1
    partner blocks, with one small dense head per chromosome."""

    mode = "per-chromosome"

    def __init__(self, spec: GenomeSpec, rng: np.random.Generator,
                 trunk_channels: tuple[int, int] = (8, 8), head_hidden: int = 64):
        self.spec = spec
        self.pad = _pad_size(spec)
        c1, c2 = trunk_channels
        self.conv1 = Conv2d(rng, 3, 3, 1, c1, stride=2)
        self.conv2 = Conv2d(rng, 3, 3, c1, c2, stride=2)
        h, w = self.conv2.out_hw(*self.conv1.out_hw(self.pad, self.pad))
        self.n_flat = h * w * c2
        self.heads = [
            (Dense(rng, self.n_flat, head_hidden), Dense(rng, head_hidden, 1))
            for _ in range(spec.n_chrom)
        ]
        self.params = self.conv1.params + self.conv2.params
        for h1, h2 in self.heads:
            self.params += h1.params + h2.params

    def trunk_param_count(self) -> int:
        return sum(p.values.size for p in self.conv1.params + self.conv2.params)

    def param_count(self) -> int:
        return sum(p.values.size for p in self.params)

    def forward_chrom(self, x: np.ndarray, chrom: int) -> ad.Tensor:
        """x is (N, L-1, pad, pad, 1) preprocessed rows for this chromosome."""
        n, nblocks = x.shape[0], x.shape[1]
        assert nblocks == self.spec.n_chrom - 1
        t = ad.reshape(ad.Tensor(x), (n * nblocks, self.pad, self.pad, 1))
        h = ad.relu(self.conv1(t))
        h = ad.relu(self.conv2(h))
        h = ad.reshape(h, (n, nblocks, self.n_flat))
        pooled = ad.tmean(h, axis=1)
        h1, h2 = self.heads[chrom]
        return h2(ad.relu(h1(pooled)))

    def summarize_scaled(self, rows, chrom: int | None = None, chunk: int = 256) -> np.ndarray:
        single = isinstance(rows, BlockRow)
        items = [rows] if single else list(rows)
        if chrom is None:
            assert single, "chrom required for a list of rows"
            chrom = items[0].chrom
        outs = []
        for start in range(0, len(items), chunk):
            batch = items[start:start + chunk]
            assert all(r.chrom == chrom and r.n_chrom == self.spec.n_chrom for r in batch), \
                "geometry mismatch: rows must all belong to the summarized chromosome"
            x = np.stack([preprocess_row(self.spec, r) for r in batch])
            outs.append(self.forward_chrom(x, chrom).values[:, 0].astype(np.float64))
        out = np.clip(np.concatenate(outs), 0.0, 1.0)
        return out[0] if single else out

    def summarize(self, rows, chrom: int | None = None) -> np.ndarray:
        if isinstance(rows, BlockRow) and chrom is None:
            chrom = rows.chrom
        scaled = self.summarize_scaled(rows, chrom=chrom)
        length = self.spec.lengths[chrom]
        return np.clip(scaled * length, 1.0, length - 1.0)


def mse_loss(pred: ad.Tensor, targets: np.ndarray) -> ad.Tensor:
    """(1/N) sum_n ||pred_n - target_n||^2, the summary-regression loss."""
    d = ad.sub(pred, ad.Tensor(targets.astype(pred.values.dtype)))
    return ad.tmean(ad.tsum(ad.mul(d, d), axis=1))


# --- training datasets ------------------------------------------------------


def make_joint_dataset(spec: GenomeSpec, n: int, rng: np.random.Generator,
                       noise: bool = True, chunk: int = 200,
                       noise_frac: float = DEFAULT_NOISE_FRAC):
    """n simulated maps -> (preprocessed inputs (n,B,B,1) f32, thetas (n,L))."""
    thetas = spec.sample_prior(rng, n)
    children = rng.spawn(n)
    b = spec.total_bins
    x = np.empty((n, b, b, 1), dtype=np.float32)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        maps = simulate_map_batch(spec, thetas[start:stop], children[start:stop],
                                  noise=noise, noise_frac=noise_frac)
        for k, m in enumerate(maps):
            x[start + k] = preprocess_map(spec, m)
    return x, thetas


def make_block_store(spec: GenomeSpec, n: int, rng: np.random.Generator,
                     noise: bool = True, chunk: int = 200,
                     noise_frac: float = DEFAULT_NOISE_FRAC):
    """n simulated maps kept as per-block max-normalized float16 dicts.

    Row batches for any chromosome are assembled on demand (float16 keeps the
    16-chromosome training set within memory; inputs are already in [0, 1]).
    """
    thetas = spec.sample_prior(rng, n)
    children = rng.spawn(n)
    store = []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        maps = simulate_map_batch(spec, thetas[start:stop], children[start:stop],
                                  noise=noise, noise_frac=noise_frac)
        for m in maps:
            store.append({k: preprocess_block(v).astype(np.float16) for k, v in m.blocks.items()})
    return store, thetas


def assemble_rows(spec: GenomeSpec, store: list[dict], idxs, chrom: int) -> np.ndarray:
    """Gather (len(idxs), L-1, pad, pad, 1) float32 rows for one chromosome."""
    size = _pad_size(spec)
    partners = [j for j in range(spec.n_chrom) if j != chrom]
    out = np.zeros((len(idxs), spec.n_chrom - 1, size, size, 1), dtype=np.float32)
    for row_k, idx in enumerate(np.asarray(idxs)):
        blocks = store[idx]
        for slot, j in enumerate(partners):
            block = blocks[(chrom, j)] if chrom < j else blocks[(j, chrom)].T
            r, c = block.shape
            out[row_k, slot, :r, :c, 0] = block
    return out


# --- trainers ---------------------------------------------------------------


def _split_train_val(n: int, val_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(np.ceil(val_fraction * n)) if val_fraction > 0 else 0
    return perm[n_val:], perm[:n_val]


def train_joint_summary(net: JointSummaryNet, x: np.ndarray, thetas: np.ndarray,
                        rng: np.random.Generator, epochs: int = DEFAULT_EPOCHS,
                        batch_size: int | None = DEFAULT_BATCH, lr: float = DEFAULT_LR,
                        val_fraction: float = DEFAULT_VAL_FRACTION,
                        patience: int = DEFAULT_PATIENCE) -> dict:
    assert x.shape[0] == thetas.shape[0] >= 1
    targets = (thetas / net.spec.lengths).astype(np.float32)
    train_idx, val_idx = _split_train_val(x.shape[0], val_fraction, rng)
    state = AdamState(lr=lr)
    stopper = EarlyStopper(net.params, patience)
    history = {"train_loss": [], "val_loss": []}
    for epoch in range(epochs):
        epoch_losses = []
        for idxs in batch_indices(len(train_idx), batch_size, rng):
            sel = train_idx[idxs]
            ad.zero_grads(net.params)
            loss = mse_loss(net.forward(x[sel]), targets[sel])
            ad.backward(loss)
            adam_step(net.params, state)
            epoch_losses.append(check_finite(float(loss.values), f"joint epoch {epoch}"))
        history["train_loss"].append(float(np.mean(epoch_losses)))
        if len(val_idx):
            val = float(mse_loss(net.forward(x[val_idx]), targets[val_idx]).values)
            history["val_loss"].append(check_finite(val, f"joint val epoch {epoch}"))
            if stopper.update(val, epoch):
                break
    if len(val_idx):
        stopper.restore()
        history["best_epoch"] = stopper.best_epoch
    return history


def train_shared_summary(net: SharedSummaryNet, store: list[dict], thetas: np.ndarray,
                         rng: np.random.Generator, epochs: int = DEFAULT_EPOCHS,
                         batch_size: int | None = DEFAULT_BATCH, lr: float = DEFAULT_LR,
                         val_fraction: float = DEFAULT_VAL_FRACTION,
                         patience: int = DEFAULT_PATIENCE) -> dict:
    """Round-robin over chromosomes within each minibatch of maps."""
    spec = net.spec
    assert len(store) == thetas.shape[0] >= 1
    targets = (thetas / spec.lengths).astype(np.float32)
    train_idx, val_idx = _split_train_val(len(store), val_fraction, rng)
    state = AdamState(lr=lr)
    stopper = EarlyStopper(net.params, patience)
    history = {"train_loss": [], "val_loss": []}
    for epoch in range(epochs):
        epoch_losses = []
        for idxs in batch_indices(len(train_idx), batch_size, rng):
            sel = train_idx[idxs]
            for chrom in range(spec.n_chrom):
                ad.zero_grads(net.params)
                x = assemble_rows(spec, store, sel, chrom)
                loss = mse_loss(net.forward_chrom(x, chrom), targets[sel, chrom:chrom + 1])
                ad.backward(loss)
                # only the trunk and the current head carry gradients
                adam_step(net.params, state, allow_missing=True)
                epoch_losses.append(check_finite(float(loss.values), f"chrom {chrom} epoch {epoch}"))
        history["train_loss"].append(float(np.mean(epoch_losses)))
        if len(val_idx):
            val = float(np.mean([
                float(mse_loss(net.forward_chrom(assemble_rows(spec, store, val_idx, c), c),
                               targets[val_idx, c:c + 1]).values)
                for c in range(spec.n_chrom)
            ]))
            history["val_loss"].append(check_finite(val, f"shared val epoch {epoch}"))
            if stopper.update(val, epoch):
                break
    if len(val_idx):
        stopper.restore()
        history["best_epoch"] = stopper.best_epoch
    return history


def build_joint_net(spec: GenomeSpec, rng: np.random.Generator) -> JointSummaryNet:
    return JointSummaryNet(spec, rng)


def build_shared_net(spec: GenomeSpec, rng: np.random.Generator, **kw) -> SharedSummaryNet:
    return SharedSummaryNet(spec, rng, **kw)


def train_summary(net, inputs, thetas, rng, **kw) -> dict:
    """Dispatch to the mode-specific trainer; inputs are preprocessed maps
    (joint) or a block store (per-chromosome)."""
    if net.mode == "joint":
        return train_joint_summary(net, inputs, thetas, rng, **kw)
    return train_shared_summary(net, inputs, thetas, rng, **kw)


# --- persistence ------------------------------------------------------------


def save_summary_net(net, path, extra: dict | None = None) -> None:
    header = {
        "kind": "summary",
        "mode": net.mode,
        "genome": spec_to_dict(net.spec),
        "genome_digest": net.spec.digest(),
    }
    if extra:
        header.update(extra)
    save_checkpoint(path, header, net.params)


def load_summary_net(path):
    header, arrays = load_checkpoint(path)
    assert header.get("kind") == "summary", "not a summary checkpoint"
    spec = spec_from_dict(header["genome"])
    net = (JointSummaryNet(spec, make_rng(0)) if header["mode"] == "joint"
           else SharedSummaryNet(spec, make_rng(0)))
    assert len(arrays) == len(net.params), "checkpoint does not match architecture"
    for p, a in zip(net.params, arrays):
        assert tuple(a.shape) == p.values.shape
        p.values = a.astype(np.float32)
    return net, header
