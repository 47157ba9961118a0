"""Trainable building blocks: linear maps, small MLPs, batch norm.

Layers hold their Parameters explicitly and expose them via params();
there is no registration magic. Checkpointable state (parameters plus
batch-norm running stats) is exposed as a flat name->array dict.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Linear:
    def __init__(self, in_dim: int, out_dim: int, name: str, rng: np.random.Generator,
                 bias: bool = True):
        bound = np.sqrt(6.0 / (in_dim + out_dim))  # Glorot uniform
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)),
                                f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def params(self) -> list[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class MLP:
    """Two-layer perceptron with ReLU in between."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, name: str,
                 rng: np.random.Generator):
        self.l1 = Linear(in_dim, hidden, f"{name}.l1", rng)
        self.l2 = Linear(hidden, out_dim, f"{name}.l2", rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(ad.relu(self.l1(x)))

    def params(self) -> list[Parameter]:
        return self.l1.params() + self.l2.params()


class BatchNorm1d:
    """Feature-wise batch norm over the row axis.

    Uses biased batch variance so single-row inputs stay defined; eval
    normalizes with running statistics (momentum 0.1).
    """

    def __init__(self, dim: int, name: str, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim), f"{name}.beta")
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self._name = name

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if x.ndim != 2:
            raise ad.ShapeError(f"BatchNorm1d expects (n, d) input, got {x.shape}")
        if not train:
            ivar = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = ad.mul(ad.sub(x, ad.as_tensor(self.running_mean)), ad.as_tensor(ivar))
            return ad.add(ad.mul(xhat, self.gamma), self.beta)

        m = x.data.shape[0]
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
        self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var

        ivar = 1.0 / np.sqrt(var + self.eps)
        xc = x.data - mu
        xhat = xc * ivar
        gamma, beta = self.gamma, self.beta
        data = xhat * gamma.data + beta.data

        def rule(g):
            ad._accum(gamma, (g * xhat).sum(axis=0))
            ad._accum(beta, g.sum(axis=0))
            dxhat = g * gamma.data
            dx = (ivar / m) * (m * dxhat - dxhat.sum(axis=0)
                               - xhat * (dxhat * xhat).sum(axis=0))
            ad._accum(x, dx)

        return ad._make(data, (x, gamma, beta), rule)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self._name}.running_mean": self.running_mean,
                f"{self._name}.running_var": self.running_var}

    def load_buffers(self, state: dict[str, np.ndarray]) -> None:
        self.running_mean = state[f"{self._name}.running_mean"].copy()
        self.running_var = state[f"{self._name}.running_var"].copy()


def collect_state(parts) -> dict[str, np.ndarray]:
    """Flatten parameters and buffers of the given layers into one dict."""
    state: dict[str, np.ndarray] = {}
    for part in parts:
        for p in part.params():
            if p.name in state:
                raise ValueError(f"duplicate parameter name: {p.name}")
            state[p.name] = p.data.copy()
        if hasattr(part, "buffers"):
            for k, v in part.buffers().items():
                state[k] = v.copy()
    return state


def load_state(parts, state: dict[str, np.ndarray]) -> None:
    for part in parts:
        for p in part.params():
            src = state[p.name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {p.name}: checkpoint {src.shape} vs model {p.data.shape}")
            p.data = src.copy()
        if hasattr(part, "load_buffers"):
            part.load_buffers(state)
