"""Tests for the learned summary nets: loss bookkeeping against naive
recomputation, preprocessing invariances, per-chromosome pooling symmetry,
training behavior, and checkpointing."""

import numpy as np
import pytest

from centrosim import summary as sm
from centrosim.genome import BlockRow, Chromosome, ContactMap, GenomeSpec, builtin_genome
from centrosim.nn.training import EarlyStopper, TrainingError
from centrosim.nn import autodiff as ad
from centrosim.rng import make_rng
from centrosim.simulator import simulate_map, simulate_map_batch

RESOLUTION = 32000


def small_spec(*lengths):
    chroms = tuple(Chromosome(f"chr{k}", l) for k, l in enumerate(lengths))
    return GenomeSpec(resolution_bp=RESOLUTION, chromosomes=chroms)


@pytest.fixture(scope="module")
def spec3():
    return builtin_genome("s_cerevisiae_3")


@pytest.fixture(scope="module")
def tiny3():
    return small_spec(120000, 90000, 150000)


@pytest.fixture(scope="module")
def trained3(spec3):
    """Joint net trained on noiseless 3-chromosome simulations; shared by the
    accuracy tests below to keep the suite runtime sane."""
    x, thetas = sm.make_joint_dataset(spec3, 1400, make_rng(100), noise=False)
    net = sm.JointSummaryNet(spec3, make_rng(5))
    history = sm.train_joint_summary(net, x, thetas, make_rng(6), epochs=60,
                                     batch_size=64, patience=10)
    return net, history


# --- preprocessing ----------------------------------------------------------


def test_preprocess_block_max_normalizes():
    b = np.array([[2.0, 8.0], [4.0, 0.0]])
    p = sm.preprocess_block(b)
    assert p.dtype == np.float32
    assert p.max() == 1.0
    np.testing.assert_allclose(p, b / 8.0)
    # all-zero blocks pass through unchanged
    z = sm.preprocess_block(np.zeros((3, 2)))
    assert np.array_equal(z, np.zeros((3, 2), dtype=np.float32))


def test_preprocess_map_matches_manual_assembly(tiny3, rng):
    m = simulate_map(tiny3, tiny3.sample_prior(rng), rng)
    x = sm.preprocess_map(tiny3, m)
    assert x.shape == (tiny3.total_bins, tiny3.total_bins, 1)
    offs = tiny3.bin_offsets()
    for (i, j), b in m.blocks.items():
        got = x[offs[i]:offs[i] + b.shape[0], offs[j]:offs[j] + b.shape[1], 0]
        np.testing.assert_array_equal(got, sm.preprocess_block(b))
    # cis squares stay zero
    for i in range(tiny3.n_chrom):
        assert not x[offs[i]:offs[i] + tiny3.bins(i), offs[i]:offs[i] + tiny3.bins(i)].any()


def test_joint_dataset_reproducible(tiny3):
    x1, t1 = sm.make_joint_dataset(tiny3, 12, make_rng(9))
    x2, t2 = sm.make_joint_dataset(tiny3, 12, make_rng(9))
    assert np.array_equal(x1, x2) and np.array_equal(t1, t2)


def test_block_store_matches_row_preprocessing(spec3, rng):
    store, thetas = sm.make_block_store(spec3, 5, make_rng(77))
    maps = simulate_map_batch(spec3, thetas, make_rng(77).spawn(5))
    for chrom in range(spec3.n_chrom):
        batch = sm.assemble_rows(spec3, store, np.arange(5), chrom)
        for k, m in enumerate(maps):
            exact = sm.preprocess_row(spec3, m.row(chrom))
            # store holds float16 blocks, values all in [0, 1]
            np.testing.assert_allclose(batch[k], exact, atol=1e-3)


# --- loss bookkeeping -------------------------------------------------------


def test_trainer_loss_matches_two_loop_recompute(tiny3, rng):
    thetas = tiny3.sample_prior(rng, 16)
    maps = simulate_map_batch(tiny3, thetas, rng.spawn(16))
    x = np.stack([sm.preprocess_map(tiny3, m) for m in maps])
    targets = (thetas / tiny3.lengths).astype(np.float32)
    net = sm.JointSummaryNet(tiny3, make_rng(3))
    pred = net.forward(x)
    loss = float(sm.mse_loss(pred, targets).values)
    naive = 0.0
    for n in range(16):
        for d in range(tiny3.n_chrom):
            naive += (float(pred.values[n, d]) - float(targets[n, d])) ** 2
    naive /= 16
    assert abs(loss - naive) <= 1e-6 * max(1.0, abs(naive))


# --- training behavior ------------------------------------------------------


def test_constant_target_regression_converges(tiny3):
    rng = make_rng(42)
    theta_star = tiny3.sample_prior(rng)
    thetas = np.tile(theta_star, (64, 1))
    maps = simulate_map_batch(tiny3, thetas, rng.spawn(64))
    x = np.stack([sm.preprocess_map(tiny3, m) for m in maps])
    net = sm.JointSummaryNet(tiny3, make_rng(5))
    history = sm.train_joint_summary(net, x, thetas, make_rng(6), epochs=200,
                                     batch_size=8, val_fraction=0.0)
    assert history["train_loss"][-1] < 1e-3
    assert history["train_loss"][-1] <= history["train_loss"][0]


def test_pretraining_scale_loss_monotone(spec3):
    # 5e3-map training set; epoch-average loss decreases monotonically over
    # the early epochs checked here
    x, thetas = sm.make_joint_dataset(spec3, 5000, make_rng(200))
    net = sm.JointSummaryNet(spec3, make_rng(5))
    history = sm.train_joint_summary(net, x, thetas, make_rng(6), epochs=25,
                                     batch_size=64)
    losses = np.array(history["train_loss"])
    assert (np.diff(losses) < 0).all()
    assert losses[-1] <= losses[0]


def test_training_bit_reproducible(tiny3):
    x, thetas = sm.make_joint_dataset(tiny3, 48, make_rng(9))

    def run():
        net = sm.JointSummaryNet(tiny3, make_rng(5))
        hist = sm.train_joint_summary(net, x, thetas, make_rng(6), epochs=3,
                                      batch_size=8)
        return net, hist

    n1, h1 = run()
    n2, h2 = run()
    assert all(np.array_equal(a.values, b.values) for a, b in zip(n1.params, n2.params))
    assert h1["train_loss"] == h2["train_loss"]
    assert h1["val_loss"] == h2["val_loss"]


def test_nan_input_aborts_training(tiny3):
    x, thetas = sm.make_joint_dataset(tiny3, 16, make_rng(9))
    x[0, 0, 0, 0] = np.nan
    net = sm.JointSummaryNet(tiny3, make_rng(5))
    with pytest.raises(TrainingError):
        sm.train_joint_summary(net, x, thetas, make_rng(6), epochs=2, batch_size=None,
                               val_fraction=0.0)


def test_early_stopper_restores_best_params(tiny3):
    x, thetas = sm.make_joint_dataset(tiny3, 48, make_rng(9))
    net = sm.JointSummaryNet(tiny3, make_rng(5))
    hist = sm.train_joint_summary(net, x, thetas, make_rng(6), epochs=8, batch_size=8)
    targets = (thetas / tiny3.lengths).astype(np.float32)
    val_idx = make_rng(6).permutation(48)[:5]  # same split the trainer derives
    revalued = float(sm.mse_loss(net.forward(x[val_idx]), targets[val_idx]).values)
    assert revalued == min(hist["val_loss"])
    assert hist["best_epoch"] == int(np.argmin(hist["val_loss"]))


def test_early_stopper_unit():
    p = [ad.Tensor(np.zeros(2, dtype=np.float32))]
    stop = EarlyStopper(p, patience=2)
    assert not stop.update(1.0, 0)
    p[0].values[:] = 7.0
    assert not stop.update(0.5, 1)  # best; snapshot holds the 7s
    p[0].values[:] = 9.0
    assert not stop.update(0.6, 2)
    assert stop.update(0.7, 3)  # second stale epoch triggers
    stop.restore()
    assert np.array_equal(p[0].values, np.full(2, 7.0, dtype=np.float32))
    assert stop.best_epoch == 1


# --- trained-net accuracy ---------------------------------------------------


def test_heldout_error_below_resolution(spec3, trained3):
    net, history = trained3
    assert history["train_loss"][-1] <= history["train_loss"][0]
    xh, th = sm.make_joint_dataset(spec3, 200, make_rng(101), noise=False)
    pred = net.summarize(list(xh))
    assert np.median(np.abs(pred - th)) < RESOLUTION


def test_beats_prior_mean_predictor(spec3, trained3):
    net, _ = trained3
    xf, tf = sm.make_joint_dataset(spec3, 100, make_rng(102), noise=False)
    pred = net.summarize(list(xf))
    baseline = spec3.lengths / 2.0
    assert np.abs(pred - tf).mean() < np.abs(baseline[None, :] - tf).mean()


def test_summarize_deterministic_and_in_support(spec3, trained3):
    net, _ = trained3
    m = simulate_map(spec3, spec3.sample_prior(make_rng(50)), make_rng(51))
    a = net.summarize(m)
    b = net.summarize(m)
    assert np.array_equal(a, b)
    lows, highs = spec3.prior_bounds()
    assert (a >= lows).all() and (a <= highs).all()


def test_scale_invariance_of_summaries(spec3, trained3):
    net, _ = trained3
    m = simulate_map(spec3, spec3.sample_prior(make_rng(50)), make_rng(51))
    s0 = net.summarize_scaled(m)
    # power-of-two scaling is representable exactly, so outputs are identical
    m4 = ContactMap(n_chrom=3, blocks={k: v * 4.0 for k, v in m.blocks.items()})
    assert np.array_equal(s0, net.summarize_scaled(m4))
    # per-block scales, still powers of two
    facs = {(i, j): 2.0 ** (i - j) for (i, j) in m.blocks}
    mb = ContactMap(n_chrom=3, blocks={k: v * facs[k] for k, v in m.blocks.items()})
    assert np.array_equal(s0, net.summarize_scaled(mb))
    # arbitrary positive scale differs only by float rounding in the division
    m37 = ContactMap(n_chrom=3, blocks={k: v * 3.7 for k, v in m.blocks.items()})
    np.testing.assert_allclose(net.summarize_scaled(m37), s0, atol=1e-5)


def test_geometry_mismatch_rejected(spec3, trained3):
    net, _ = trained3
    with pytest.raises(AssertionError, match="geometry"):
        net.summarize(np.zeros((10, 10, 1), dtype=np.float32))


# --- per-chromosome shared-trunk net ----------------------------------------


def test_equal_length_chromosomes_have_identical_heads():
    spec = small_spec(224000, 224000, 320000)
    net = sm.SharedSummaryNet(spec, make_rng(3))
    shapes = [tuple(t.values.shape for t in h1.params + h2.params) for h1, h2 in net.heads]
    assert shapes[0] == shapes[1] == shapes[2]


def test_block_order_invariance_exact(spec3, rng):
    m = simulate_map(spec3, spec3.sample_prior(rng), rng)
    net = sm.SharedSummaryNet(spec3, make_rng(3))
    row = m.row(1)
    flipped = BlockRow(chrom=1, n_chrom=3,
                       blocks={2: row.blocks[2], 0: row.blocks[0]})
    a = net.summarize_scaled(row)
    b = net.summarize_scaled(flipped)
    assert np.array_equal(a, b)


def test_shared_param_count_below_independent_nets():
    spec = builtin_genome("s_cerevisiae_16")
    net = sm.SharedSummaryNet(spec, make_rng(3))
    trunk = net.trunk_param_count()
    head_sizes = [sum(t.values.size for t in h1.params + h2.params) for h1, h2 in net.heads]
    independent = sum(trunk + h for h in head_sizes)
    assert net.param_count() == trunk + sum(head_sizes)
    assert net.param_count() < independent


def test_shared_training_improves(spec3):
    store, thetas = sm.make_block_store(spec3, 200, make_rng(201))
    net = sm.SharedSummaryNet(spec3, make_rng(7))
    history = sm.train_shared_summary(net, store, thetas, make_rng(8), epochs=6,
                                      batch_size=64)
    assert history["train_loss"][-1] < history["train_loss"][0]
    m = simulate_map(spec3, spec3.sample_prior(make_rng(60)), make_rng(61))
    for chrom in range(3):
        est = net.summarize(m.row(chrom))
        assert 1.0 <= est <= spec3.lengths[chrom] - 1.0


def test_shared_row_chrom_mismatch_rejected(spec3, rng):
    m = simulate_map(spec3, spec3.sample_prior(rng), rng)
    net = sm.SharedSummaryNet(spec3, make_rng(3))
    with pytest.raises(AssertionError, match="geometry"):
        net.summarize_scaled([m.row(0), m.row(1)], chrom=0)


# --- persistence ------------------------------------------------------------


def test_checkpoint_roundtrip_joint(spec3, trained3, tmp_path):
    net, _ = trained3
    path = tmp_path / "joint.ckpt"
    sm.save_summary_net(net, path, extra={"note": "fixture"})
    loaded, header = sm.load_summary_net(path)
    assert header["mode"] == "joint"
    assert header["genome_digest"] == spec3.digest()
    assert header["note"] == "fixture"
    assert all(np.array_equal(a.values, b.values) for a, b in zip(net.params, loaded.params))
    m = simulate_map(spec3, spec3.sample_prior(make_rng(50)), make_rng(51))
    assert np.array_equal(net.summarize(m), loaded.summarize(m))


def test_checkpoint_roundtrip_shared(spec3, tmp_path):
    net = sm.SharedSummaryNet(spec3, make_rng(7))
    path = tmp_path / "shared.ckpt"
    sm.save_summary_net(net, path)
    loaded, header = sm.load_summary_net(path)
    assert header["mode"] == "per-chromosome"
    m = simulate_map(spec3, spec3.sample_prior(make_rng(50)), make_rng(51))
    for chrom in range(3):
        assert np.array_equal(net.summarize(m.row(chrom)), loaded.summarize(m.row(chrom)))


def test_unified_entry_points(tiny3):
    joint = sm.build_joint_net(tiny3, make_rng(1))
    shared = sm.build_shared_net(tiny3, make_rng(2))
    x, thetas = sm.make_joint_dataset(tiny3, 24, make_rng(3))
    h1 = sm.train_summary(joint, x, thetas, make_rng(4), epochs=2, batch_size=8)
    store, thetas2 = sm.make_block_store(tiny3, 24, make_rng(5))
    h2 = sm.train_summary(shared, store, thetas2, make_rng(6), epochs=2, batch_size=8)
    assert len(h1["train_loss"]) == len(h2["train_loss"]) == 2
