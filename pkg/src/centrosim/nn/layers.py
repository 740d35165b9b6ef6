"""Neural layers over the autodiff substrate: dense, masked dense, conv."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense:
    """Affine layer y = x @ W + b; Xavier-uniform weights, zero biases."""

    def __init__(self, rng, n_in: int, n_out: int, dtype=np.float32):
        self.W = ad.Tensor(xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.b = ad.Tensor(np.zeros(n_out, dtype=dtype))
        self.params = [self.W, self.b]

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.W), self.b)


class MaskedDense:
    """Dense layer with a fixed binary connectivity mask on the weights."""

    def __init__(self, rng, n_in: int, n_out: int, mask: np.ndarray,
                 dtype=np.float32, zero_init: bool = False):
        assert mask.shape == (n_in, n_out)
        if zero_init:
            w = np.zeros((n_in, n_out), dtype=dtype)
        else:
            w = xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.W = ad.Tensor(w)
        self.b = ad.Tensor(np.zeros(n_out, dtype=dtype))
        self.mask = ad.Tensor(mask.astype(dtype))  # constant, not a parameter
        self.params = [self.W, self.b]

    def __call__(self, x):
        return ad.add(ad.matmul(x, ad.mul(self.W, self.mask)), self.b)


class Conv2d:
    """Valid strided convolution, NHWC layout; He-uniform weights, zero biases."""

    def __init__(self, rng, kh: int, kw: int, c_in: int, c_out: int,
                 stride: int = 1, dtype=np.float32):
        fan_in = kh * kw * c_in
        self.W = ad.Tensor(kaiming_uniform(rng, (kh, kw, c_in, c_out), fan_in, dtype))
        self.b = ad.Tensor(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.params = [self.W, self.b]

    def __call__(self, x):
        return ad.add(ad.conv2d(x, self.W, self.stride), self.b)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.W.shape[:2]
        return ((h - kh) // self.stride + 1, (w - kw) // self.stride + 1)
