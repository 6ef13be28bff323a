"""Multilayer perceptrons with hand-written backward passes, and Adam."""
from __future__ import annotations

import numpy as np
from numba import njit


class MLP:
    """ReLU hidden layers and a linear output layer.

    Parameters are stored as ``weights[i]`` of shape ``(sizes[i], sizes[i+1])``
    and ``biases[i]`` of shape ``(sizes[i+1],)``.
    """

    def __init__(self, sizes, seed: int = 0, dtype=np.float32):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            lim = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype))
            self.biases.append(np.zeros(fan_out, dtype))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, params) -> None:
        params = list(params)
        self.weights = [np.array(p) for p in params[0::2]]
        self.biases = [np.array(p) for p in params[1::2]]

    def copy(self) -> MLP:
        other = MLP.__new__(MLP)
        other.sizes = self.sizes
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def astype(self, dtype) -> MLP:
        other = self.copy()
        other.weights = [w.astype(dtype) for w in other.weights]
        other.biases = [b.astype(dtype) for b in other.biases]
        return other

    def hidden(self, x: np.ndarray):
        """Activations after every hidden layer: ``[x, h1, ..., h_last]``."""
        acts = [x]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.maximum(acts[-1] @ W + b, 0))
        return acts

    def forward(self, x: np.ndarray, return_cache: bool = False):
        acts = self.hidden(np.asarray(x, self.weights[0].dtype))
        out = acts[-1] @ self.weights[-1] + self.biases[-1]
        return (out, acts) if return_cache else out

    __call__ = forward

    def backward_hidden(self, acts, g_last: np.ndarray, grads: list) -> np.ndarray:
        """Backpropagate a gradient on the last hidden activation through the hidden stack.

        Fills ``grads`` (same layout as :attr:`params`) for all hidden layers
        and returns the gradient with respect to the input.
        """
        g = g_last
        for i in range(len(self.weights) - 2, -1, -1):
            g = g * (acts[i + 1] > 0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return g

    def backward(self, acts, g_out: np.ndarray):
        """Gradients of ``sum(g_out * forward(x))``: returns ``(param_grads, input_grad)``."""
        grads = [None] * (2 * len(self.weights))
        grads[-2] = acts[-1].T @ g_out
        grads[-1] = g_out.sum(axis=0)
        g_in = self.backward_hidden(acts, g_out @ self.weights[-1].T, grads)
        return grads, g_in


@njit(cache=True, fastmath=True)
def _adam_dense(p, g, m, v, lr, b1, b2, c1, c2, eps):
    for i in range(p.size):
        mi = b1 * m[i] + (1 - b1) * g[i]
        vi = b2 * v[i] + (1 - b2) * g[i] * g[i]
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


class Adam:
    """Adam over a list of arrays, updated in place.

    ``step`` accepts ``None`` gradients (parameter left untouched) and
    column-sparse gradients given as ``(columns, values)`` tuples, which
    update only those columns and their moments.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g is None:
                continue
            if isinstance(g, tuple):
                cols, vals = g
                mc = self.b1 * m[..., cols] + (1 - self.b1) * vals
                vc = self.b2 * v[..., cols] + (1 - self.b2) * vals * vals
                m[..., cols] = mc
                v[..., cols] = vc
                p[..., cols] -= (self.lr * (mc / c1) / (np.sqrt(vc / c2) + self.eps)).astype(p.dtype)
                continue
            _adam_dense(p.reshape(-1), np.ascontiguousarray(g, p.dtype).reshape(-1), m.reshape(-1), v.reshape(-1),
                        self.lr, self.b1, self.b2, c1, c2, self.eps)


def finite_difference(f, params, eps: float = 1e-4, max_entries: int | None = None, seed: int = 0):
    """Central differences of scalar ``f()`` w.r.t. entries of ``params`` (perturbed in place).

    Returns a list of ``(param_index, flat_index, numeric_grad)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        for j in idx:
            old = flat[j]
            flat[j] = old + eps
            fp = f()
            flat[j] = old - eps
            fm = f()
            flat[j] = old
            out.append((pi, int(j), (fp - fm) / (2 * eps)))
    return out
