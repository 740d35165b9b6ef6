"""Finite-difference gradient checking: shared op-config zoo.

Each case builds float64 leaf tensors and a scalar-producing forward function;
the checker compares backward() gradients against central differences.
"""

import numpy as np

from centrosim.nn import autodiff as ad
from centrosim.rng import make_rng


def _leaf(rng, *shape):
    return ad.Tensor(rng.uniform(0.2, 1.5, size=shape))


def _case_add_broadcast(rng):
    a, b = _leaf(rng, 4, 5), _leaf(rng, 5)
    return [a, b], lambda: ad.tsum(ad.add(a, b))


def _case_sub_scalar(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng)
    return [a, b], lambda: ad.tsum(ad.mul(ad.sub(a, b), ad.sub(a, b)))


def _case_mul_broadcast(rng):
    a, b = _leaf(rng, 6), _leaf(rng, 3, 6)
    return [a, b], lambda: ad.tsum(ad.mul(a, b))


def _case_diamond(rng):
    x = _leaf(rng, 7)
    return [x], lambda: ad.tsum(ad.add(ad.mul(x, x), x))


def _case_matmul(rng):
    a, b = _leaf(rng, 4, 6), _leaf(rng, 6, 3)
    return [a, b], lambda: ad.tsum(ad.matmul(a, b))


def _case_matmul_chain(rng):
    a, b, c = _leaf(rng, 2, 5), _leaf(rng, 5, 4), _leaf(rng, 4, 3)
    # keep tanh away from saturation, where finite differences lose precision
    return [a, b, c], lambda: ad.tsum(ad.tanh(ad.scale(ad.matmul(ad.matmul(a, b), c), 0.05)))


def _case_relu(rng):
    x = ad.Tensor(np.where(rng.random((5, 5)) > 0.5, 1.0, -1.0) * rng.uniform(0.3, 1.0, (5, 5)))
    w = _leaf(rng, 5, 2)
    return [x, w], lambda: ad.tsum(ad.matmul(ad.relu(x), w))


def _case_tanh(rng):
    x = _leaf(rng, 4, 4)
    return [x], lambda: ad.tsum(ad.tanh(x))


def _case_exp(rng):
    x = _leaf(rng, 3, 3)
    return [x], lambda: ad.tsum(ad.exp(ad.neg(x)))


def _case_log(rng):
    x = _leaf(rng, 6)
    return [x], lambda: ad.tsum(ad.log(x))


def _case_scale_addconst(rng):
    x = _leaf(rng, 5)
    return [x], lambda: ad.tsum(ad.add_const(ad.scale(x, -2.5), 1.0))


def _case_sum_axis0(rng):
    x = _leaf(rng, 4, 3)
    w = _leaf(rng, 3)
    return [x, w], lambda: ad.tsum(ad.mul(ad.tsum(x, axis=0), w))


def _case_sum_keepdims(rng):
    x = _leaf(rng, 4, 3)
    return [x], lambda: ad.tsum(ad.mul(x, ad.tsum(x, axis=1, keepdims=True)))


def _case_mean(rng):
    x = _leaf(rng, 5, 2)
    return [x], lambda: ad.tsum(ad.tmean(x, axis=0))


def _case_mean_all(rng):
    x = _leaf(rng, 3, 3)
    return [x], lambda: ad.tmean(ad.mul(x, x))


def _case_logsumexp(rng):
    x = _leaf(rng, 5, 4)
    return [x], lambda: ad.tsum(ad.logsumexp(ad.scale(x, 3.0), axis=1))


def _case_reshape(rng):
    x = _leaf(rng, 4, 6)
    w = _leaf(rng, 8, 2)
    return [x, w], lambda: ad.tsum(ad.matmul(ad.reshape(x, (3, 8)), w))


def _case_permute(rng):
    x = _leaf(rng, 3, 5)
    w = _leaf(rng, 5)
    perm = np.array([4, 2, 0, 1, 3])
    return [x, w], lambda: ad.tsum(ad.mul(ad.permute_cols(x, perm), w))


def _case_concat(rng):
    a, b = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    w = _leaf(rng, 6, 2)
    return [a, b], lambda: ad.tsum(ad.matmul(ad.concat([a, b], axis=1), w))


def _case_conv_stride1(rng):
    x = _leaf(rng, 2, 6, 7, 3)
    w = _leaf(rng, 3, 3, 3, 2)
    return [x, w], lambda: ad.tsum(ad.conv2d(x, w, stride=1))


def _case_conv_stride2(rng):
    x = _leaf(rng, 2, 9, 8, 2)
    w = _leaf(rng, 3, 3, 2, 4)
    return [x, w], lambda: ad.tsum(ad.tanh(ad.scale(ad.conv2d(x, w, stride=2), 0.05)))


def _case_conv_then_dense(rng):
    x = _leaf(rng, 2, 7, 7, 1)
    w = _leaf(rng, 3, 3, 1, 3)
    d = _leaf(rng, 27, 1)
    def fwd():
        h = ad.relu(ad.conv2d(x, w, stride=2))
        return ad.tsum(ad.matmul(ad.reshape(h, (2, 27)), d))
    return [x, w, d], fwd


def _case_mlp_mse(rng):
    x = _leaf(rng, 6, 4)
    w1, b1 = _leaf(rng, 4, 5), _leaf(rng, 5)
    w2 = _leaf(rng, 5, 2)
    t = rng.uniform(size=(6, 2))
    def fwd():
        h = ad.tanh(ad.add(ad.matmul(x, w1), b1))
        d = ad.sub(ad.matmul(h, w2), ad.Tensor(t))
        return ad.tmean(ad.mul(d, d))
    return [x, w1, b1, w2], fwd


def _case_masked_matmul(rng):
    w = _leaf(rng, 5, 5)
    x = _leaf(rng, 3, 5)
    mask = ad.Tensor((rng.random((5, 5)) > 0.4).astype(np.float64))
    return [w, x], lambda: ad.tsum(ad.exp(ad.scale(ad.matmul(x, ad.mul(w, mask)), 0.3)))


def _case_logsumexp_softmaxish(rng):
    x = _leaf(rng, 4, 6)
    return [x], lambda: ad.tsum(ad.sub(ad.logsumexp(x, axis=1), ad.tmean(x, axis=1)))


ALL_CASES = [
    _case_add_broadcast,
    _case_sub_scalar,
    _case_mul_broadcast,
    _case_diamond,
    _case_matmul,
    _case_matmul_chain,
    _case_relu,
    _case_tanh,
    _case_exp,
    _case_log,
    _case_scale_addconst,
    _case_sum_axis0,
    _case_sum_keepdims,
    _case_mean,
    _case_mean_all,
    _case_logsumexp,
    _case_reshape,
    _case_permute,
    _case_concat,
    _case_conv_stride1,
    _case_conv_stride2,
    _case_conv_then_dense,
    _case_mlp_mse,
    _case_masked_matmul,
    _case_logsumexp_softmaxish,
]


def max_rel_grad_error(case_fn, seed=0, h=1e-6) -> float:
    """Largest relative disagreement between backward() and central differences
    over every entry of every leaf parameter of one case."""
    rng = make_rng(seed)
    params, fwd = case_fn(rng)
    loss = fwd()
    ad.backward(loss)
    grads = [p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.values.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = float(fwd().values)
            flat[idx] = orig - h
            f_minus = float(fwd().values)
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2 * h)
            an = float(g.reshape(-1)[idx])
            denom = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / denom)
    return worst
