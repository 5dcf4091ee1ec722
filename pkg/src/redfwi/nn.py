"""A closed set of differentiable layers with hand-written reverse passes.

Activations are channels-last ``(B, H, W, C)``. Every layer caches what its
backward pass needs during ``forward``; calling ``backward`` once consumes
that cache and *adds* parameter gradients into ``layer.grads``.
"""

import math

import numpy as np
from scipy.special import expit

from ._kernels import col2im, im2col


class Layer:
    """Base class: named parameter arrays and matching gradient accumulators."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def named_parameters(self, prefix=""):
        for name, value in self.params.items():
            yield prefix + name, value
        for child_name, child in self.children():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_grads(self, prefix=""):
        for name, value in self.grads.items():
            yield prefix + name, value
        for child_name, child in self.children():
            yield from child.named_grads(f"{prefix}{child_name}.")

    def children(self):
        return [(k, v) for k, v in vars(self).items() if isinstance(v, Layer)]

    def zero_grad(self):
        for _, g in self.named_grads():
            g[...] = 0.0

    def astype(self, dtype):
        for name in list(self.params):
            self.params[name] = self.params[name].astype(dtype)
            self.grads[name] = np.zeros_like(self.params[name])
        for _, child in self.children():
            child.astype(dtype)
        return self


class Conv2d(Layer):
    """``k x k`` convolution (cross-correlation) with zero padding ``k // 2``."""

    def __init__(self, c_in, c_out, k=3, stride=1, rng=None, dtype=np.float64, scale=1.0):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.k, self.stride, self.pad = k, stride, k // 2
        std = scale * math.sqrt(2.0 / (c_in * k * k))
        self._add_param("weight", (rng.standard_normal((k * k * c_in, c_out)) * std).astype(dtype))
        self._add_param("bias", np.zeros(c_out, dtype=dtype))
        self.c_in = c_in

    def _out_size(self, n):
        return (n + 2 * self.pad - self.k) // self.stride + 1

    def forward(self, x):
        B, H, W, C = x.shape
        k, s, p = self.k, self.stride, self.pad
        Ho, Wo = self._out_size(H), self._out_size(W)
        if k == 1 and s == 1:
            cols = x
        else:
            # reuse the patch buffer between calls: first-touching a fresh
            # allocation of this size costs more than filling it
            buf = getattr(self, "_cols_buf", None)
            shape = (B, Ho, Wo, k * k * C)
            if buf is None or buf.shape != shape or buf.dtype != x.dtype:
                buf = self._cols_buf = np.empty(shape, dtype=x.dtype)
            cols = im2col(np.ascontiguousarray(x), k, s, p, buf)
        self._cache = (x.shape, cols)
        out = cols.reshape(-1, k * k * C) @ self.params["weight"] + self.params["bias"]
        return out.reshape(B, Ho, Wo, -1)

    def backward(self, dy):
        (B, H, W, C), cols = self._cache
        self._cache = None
        k, s, p = self.k, self.stride, self.pad
        Ho, Wo, O = dy.shape[1:]
        d2 = dy.reshape(-1, O)
        self.grads["weight"] += cols.reshape(-1, k * k * C).T @ d2
        self.grads["bias"] += d2.sum(axis=0)
        dcols = (d2 @ self.params["weight"].T).reshape(B, Ho, Wo, k * k * C)
        if k == 1 and s == 1:
            return dcols
        return col2im(dcols, k, s, p, H, W)


class Linear(Layer):
    def __init__(self, d_in, d_out, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(rng)
        std = math.sqrt(1.0 / d_in)
        self._add_param("weight", (rng.standard_normal((d_in, d_out)) * std).astype(dtype))
        self._add_param("bias", np.zeros(d_out, dtype=dtype))

    def forward(self, x):
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        x, self._cache = self._cache, None
        self.grads["weight"] += x.T @ dy
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"].T


class SiLU(Layer):
    def forward(self, x):
        sig = expit(x)
        self._cache = (x, sig)
        return x * sig

    def backward(self, dy):
        (x, sig), self._cache = self._cache, None
        return dy * sig * (1.0 + x * (1.0 - sig))


class Upsample2(Layer):
    """Nearest-neighbour x2 upsampling, cropped to a target spatial size."""

    def forward(self, x, size):
        self._cache = x.shape
        y = x.repeat(2, axis=1).repeat(2, axis=2)
        return y[:, :size[0], :size[1], :]

    def backward(self, dy):
        B, h, w, C = self._cache
        self._cache = None
        full = np.zeros((B, 2 * h, 2 * w, C), dtype=dy.dtype)
        full[:, :dy.shape[1], :dy.shape[2], :] = dy
        return full.reshape(B, h, 2, w, 2, C).sum(axis=(2, 4))


def timestep_embedding(t, dim):
    """Sinusoidal embedding of integer steps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class ResBlock(Layer):
    """SiLU -> conv -> (+ time bias) -> SiLU -> conv, plus a (1x1-projected) skip."""

    def __init__(self, c_in, c_out, emb_dim, rng, dtype):
        super().__init__()
        self.act1 = SiLU()
        self.conv1 = Conv2d(c_in, c_out, 3, rng=rng, dtype=dtype)
        self.emb_act = SiLU()
        self.emb = Linear(emb_dim, c_out, rng=rng, dtype=dtype)
        self.act2 = SiLU()
        self.conv2 = Conv2d(c_out, c_out, 3, rng=rng, dtype=dtype, scale=0.5)
        self.skip = Conv2d(c_in, c_out, 1, rng=rng, dtype=dtype) if c_in != c_out else None

    def forward(self, x, emb):
        h = self.conv1.forward(self.act1.forward(x))
        h = h + self.emb.forward(self.emb_act.forward(emb))[:, None, None, :]
        h = self.conv2.forward(self.act2.forward(h))
        return h + (self.skip.forward(x) if self.skip is not None else x)

    def backward(self, dy):
        dh = self.conv2.backward(dy)
        dh = self.act2.backward(dh)
        demb = self.emb_act.backward(self.emb.backward(dh.sum(axis=(1, 2))))
        dx = self.act1.backward(self.conv1.backward(dh))
        dx = dx + (self.skip.backward(dy) if self.skip is not None else dy)
        return dx, demb


class UNetSmall(Layer):
    """Two-level encoder/decoder with time conditioning.

    full res : conv_in -> ResBlock(w) ---------------------------+
    half res : stride-2 conv -> ResBlock(w -> 2w) -> ResBlock(2w) |
    back up  : 1x1 conv (2w -> w) -> nearest x2 -> add skip <-----+
               -> ResBlock(w) -> SiLU -> conv_out(1) + a * input
    """

    def __init__(self, base_width=8, mult=(1, 2), emb_dim=32, rng=0, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(rng)
        w1, w2 = base_width * mult[0], base_width * mult[1]
        hidden = 2 * emb_dim
        self.emb_dim = emb_dim
        self.t_lin1 = Linear(emb_dim, hidden, rng=rng, dtype=dtype)
        self.t_act = SiLU()
        self.t_lin2 = Linear(hidden, hidden, rng=rng, dtype=dtype)
        self.conv_in = Conv2d(1, w1, 3, rng=rng, dtype=dtype)
        self.enc1 = ResBlock(w1, w1, hidden, rng, dtype)
        self.down = Conv2d(w1, w1, 3, stride=2, rng=rng, dtype=dtype)
        self.mid1 = ResBlock(w1, w2, hidden, rng, dtype)
        self.mid2 = ResBlock(w2, w2, hidden, rng, dtype)
        self.proj = Conv2d(w2, w1, 1, rng=rng, dtype=dtype)
        self.up = Upsample2()
        self.dec1 = ResBlock(w1, w1, hidden, rng, dtype)
        self.out_act = SiLU()
        self.conv_out = Conv2d(w1, 1, 3, rng=rng, dtype=dtype, scale=0.1)
        self._add_param("input_skip", np.zeros(1, dtype=dtype))

    @property
    def dtype(self):
        return self.params["input_skip"].dtype

    def forward(self, x, t):
        """``x`` of shape (B, H, W, 1), ``t`` integer steps of shape (B,)."""
        dt = self.dtype
        emb = timestep_embedding(t, self.emb_dim).astype(dt)
        emb = self.t_lin2.forward(self.t_act.forward(self.t_lin1.forward(emb)))
        h0 = self.conv_in.forward(x)
        h1 = self.enc1.forward(h0, emb)
        h2 = self.mid1.forward(self.down.forward(h1), emb)
        h3 = self.mid2.forward(h2, emb)
        u = self.up.forward(self.proj.forward(h3), h1.shape[1:3])
        h4 = self.dec1.forward(u + h1, emb)
        self._cache = x
        return self.conv_out.forward(self.out_act.forward(h4)) + self.params["input_skip"] * x

    def backward(self, dout):
        x, self._cache = self._cache, None
        self.grads["input_skip"] += np.sum(dout * x)
        dh4 = self.out_act.backward(self.conv_out.backward(dout))
        dsum, demb = self.dec1.backward(dh4)
        dh3 = self.proj.backward(self.up.backward(dsum))
        dh2, de = self.mid2.backward(dh3)
        demb = demb + de
        dd, de = self.mid1.backward(dh2)
        demb = demb + de
        dh1 = dsum + self.down.backward(dd)
        dh0, de = self.enc1.backward(dh1)
        demb = demb + de
        self.conv_in.backward(dh0)
        self.t_lin1.backward(self.t_act.backward(self.t_lin2.backward(demb)))

    def n_parameters(self):
        return int(sum(p.size for _, p in self.named_parameters()))
