"""Parameter containers and the handful of layers the two U-Nets use."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor carrying its Adam moment buffers."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        params = []
        for name, p in self.named_parameters():
            p.name = name
            params.append(p)
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv(Module):
    """'Same'-padded stride-1 convolution, 2D or 3D, kernel 1 or 3."""

    def __init__(self, cin: int, cout: int, *, ndim: int, kernel: int = 3,
                 rng: np.random.Generator, dtype=np.float32, init_scale: float = 1.0):
        shape = (cout, cin) + (kernel,) * ndim
        w = kaiming_uniform(rng, shape, cin * kernel**ndim, dtype) * init_scale
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv(x, self.weight, self.bias)


class ConvTranspose(Module):
    """Kernel-2 stride-2 upsampling."""

    def __init__(self, cin: int, cout: int, *, ndim: int, rng: np.random.Generator, dtype=np.float32):
        shape = (cin, cout) + (2,) * ndim
        self.weight = Parameter(kaiming_uniform(rng, shape, cin, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, fin: int, fout: int, *, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(kaiming_uniform(rng, (fout, fin), fin, dtype))
        self.bias = Parameter(np.zeros(fout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def sinusoidal_embedding(t: int | np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Interleaved sin/cos embedding: [sin(t w_0), cos(t w_0), sin(t w_1), ...].

    w_i = 10000 ** (-2i / dim).  ``t`` may be a scalar or a 1-D batch.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    i = np.arange(dim // 2, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * i / dim)
    ang = ts[:, None] * freqs[None, :]
    emb = np.empty((ts.size, dim), dtype=np.float64)
    emb[:, 0::2] = np.sin(ang)
    emb[:, 1::2] = np.cos(ang)
    emb = emb.astype(dtype)
    return emb[0] if np.ndim(t) == 0 else emb


class TimeEmbedding(Module):
    """Sinusoidal code -> Linear -> ReLU -> Linear, one vector per batch item."""

    def __init__(self, dim: int, out_channels: int, *, rng: np.random.Generator, dtype=np.float32):
        self.dim = dim
        self.fc1 = Linear(dim, dim, rng=rng, dtype=dtype)
        self.fc2 = Linear(dim, out_channels, rng=rng, dtype=dtype)

    def forward(self, t) -> Tensor:
        dtype = self.fc1.weight.dtype
        emb = Tensor(sinusoidal_embedding(np.atleast_1d(t), self.dim, dtype=dtype))
        return self.fc2(T.relu(self.fc1(emb)))
