"""Minimal reverse-mode engine for fully connected tanh networks.

A network's ``forward`` returns its output together with a cache of the
intermediate activations; ``backward`` consumes that cache and an upstream
gradient and returns the gradient w.r.t. the input plus one ``(dW, db)`` pair
per layer.  Because caches are explicit values, a network can appear several
times in one computation graph (as the generators do in the cycle loss) and
the caller simply sums the parameter gradients of each use.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EngageError


class MLP:
    """Dense layers ``sizes[0] -> ... -> sizes[-1]``, tanh hidden units, linear output.

    With ``residual=True`` (input and output widths equal) the network returns
    ``x + f(x)``, so a freshly initialized network is close to the identity.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None, init_scale: float = 1.0,
                 residual: bool = False):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise EngageError("invalid-input", f"bad layer sizes {sizes!r}")
        self.sizes = tuple(int(s) for s in sizes)
        if residual and self.sizes[0] != self.sizes[-1]:
            raise EngageError("invalid-input", "a residual network needs equal input and output widths")
        self.residual = bool(residual)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = init_scale / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            cache.append(h)
        if self.residual:
            h = h + cache[0]
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return ``(dL/dx, [dW0, db0, dW1, db1, ...])``."""
        g = np.asarray(grad_out, dtype=np.float64)
        grads: list[np.ndarray] = []
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                g = g * (1.0 - cache[i + 1] ** 2)
            grads = [cache[i].T @ g, g.sum(axis=0)] + grads
            g = g @ self.weights[i].T
        if self.residual:
            g = g + np.asarray(grad_out, dtype=np.float64)
        return g, grads

    def copy(self) -> "MLP":
        new = MLP.__new__(MLP)
        new.sizes = self.sizes
        new.residual = self.residual
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activation": "tanh",
            "residual": self.residual,
            "layers": [
                {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        try:
            if d.get("activation", "tanh") != "tanh":
                raise EngageError("invalid-file", f"unsupported activation {d['activation']!r}")
            new = cls.__new__(cls)
            new.sizes = tuple(int(s) for s in d["sizes"])
            new.residual = bool(d.get("residual", False))
            new.weights, new.biases = [], []
            for layer, fan_in, fan_out in zip(d["layers"], new.sizes[:-1], new.sizes[1:]):
                if list(layer["shape"]) != [fan_in, fan_out]:
                    raise EngageError("invalid-file", "layer shape does not match declared sizes")
                new.weights.append(np.array(layer["weight"], dtype=np.float64).reshape(fan_in, fan_out))
                new.biases.append(np.array(layer["bias"], dtype=np.float64).reshape(fan_out))
            if len(new.weights) != len(new.sizes) - 1:
                raise EngageError("invalid-file", "layer count does not match declared sizes")
        except (KeyError, TypeError, ValueError) as exc:
            raise EngageError("invalid-file", f"malformed network: {exc}") from None
        if not new.all_finite():
            raise EngageError("invalid-file", "network parameters contain NaN/Inf")
        return new


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), targets].mean())
    g = np.exp(logp)
    g[np.arange(n), targets] -= 1.0
    return loss, g / n


class SGD:
    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.0):
        self.params, self.lr, self.momentum = params, lr, momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off on ~0 gradients from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: list[np.ndarray],
    analytic: list[np.ndarray],
    step: float = 1e-4,
    n_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between ``analytic`` and central differences of ``loss_fn``.

    ``loss_fn`` must read the (mutated in place) ``params``.  With ``n_coords``
    set, that many coordinates are drawn uniformly over all parameters;
    otherwise every coordinate is checked.
    """
    sizes = [p.size for p in params]
    total = sum(sizes)
    if n_coords is None or n_coords >= total:
        flat_ids = np.arange(total)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        flat_ids = rng.choice(total, size=n_coords, replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        p, idx = params[k], np.unravel_index(fid - offsets[k], params[k].shape)
        orig = p[idx]
        p[idx] = orig + step
        up = loss_fn()
        p[idx] = orig - step
        down = loss_fn()
        p[idx] = orig
        worst = max(worst, relative_error(float(analytic[k][idx]), (up - down) / (2 * step)))
    return worst
