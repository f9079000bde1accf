"""Dense ReLU classifier with hand-written forward/backward passes.

Parameters travel as one flat float64 vector (a "param vector") so that
clients and the server can average, sort and compare them without knowing
the layer structure. Layout, layer by layer: weights (fan_in x fan_out,
row-major) followed by biases (fan_out).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    output_dim: int = 4

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split a param vector into per-layer ``(W, b)`` views (no copy)."""
        if params.shape != (self.n_params,):
            raise ValueError(
                f"param vector has shape {params.shape}, expected ({self.n_params},)"
            )
        layers = []
        offset = 0
        sizes = self.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset : offset + fan_out]
            offset += fan_out
            layers.append((w, b))
        return layers


def init_params(arch: MlpArchitecture, seed) -> np.ndarray:
    """He-style uniform init, bound sqrt(6 / fan_in); biases start at zero."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.n_params)
    for w, _ in arch.unflatten(params):
        bound = np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _check_input(arch: MlpArchitecture, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ValueError(
            f"features have shape {X.shape}, expected (n, {arch.input_dim})"
        )
    return X


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(arch, params, X):
    acts = [X]
    layers = arch.unflatten(params)
    h = X
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    w, b = layers[-1]
    probs = _softmax(h @ w + b)
    return layers, acts, probs


def forward(arch: MlpArchitecture, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample."""
    X = _check_input(arch, X)
    return _forward_cache(arch, params, X)[2]


def _check_labels(arch, y, n):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"{n} feature rows but {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= arch.output_dim):
        raise ValueError(f"labels must lie in [0, {arch.output_dim})")
    return y


def _backprop(arch, params, X, y, want_input_grad=False):
    layers, acts, probs = _forward_cache(arch, params, X)
    n = X.shape[0]
    rows = np.arange(n)
    p_true = np.clip(probs[rows, y], 1e-300, None)
    loss = float(-np.mean(np.log(p_true)))

    grad = np.zeros_like(params)
    grad_layers = arch.unflatten(grad)
    delta = probs.copy()
    delta[rows, y] -= 1.0
    delta /= n
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grad_layers[i]
        gw[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0 or want_input_grad:
            delta = delta @ w.T
            if i > 0:
                delta = delta * (acts[i] > 0)
    input_grad = delta if want_input_grad else None
    return loss, grad, input_grad


def backward(arch: MlpArchitecture, params: np.ndarray, X, y) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient wrt the param vector."""
    X = _check_input(arch, X)
    y = _check_labels(arch, y, X.shape[0])
    loss, grad, _ = _backprop(arch, params, X, y)
    return loss, grad


def input_gradient(arch: MlpArchitecture, params: np.ndarray, X, y) -> np.ndarray:
    """Gradient of each sample's own cross-entropy wrt its features.

    Rows are independent: row ``k`` is d loss(x_k, y_k) / d x_k, not scaled by
    the batch size.
    """
    X = _check_input(arch, X)
    y = _check_labels(arch, y, X.shape[0])
    _, _, g = _backprop(arch, params, X, y, want_input_grad=True)
    return g * X.shape[0]


def sgd_epochs(
    arch: MlpArchitecture,
    params: np.ndarray,
    X,
    y,
    lr: float,
    epochs: int,
    batch_size: int,
    seed,
) -> np.ndarray:
    """Plain minibatch SGD; reshuffles every epoch and keeps the short last batch."""
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    X = _check_input(arch, X)
    y = _check_labels(arch, y, X.shape[0])
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    params = np.array(params, dtype=np.float64, copy=True)
    if lr == 0:
        return params
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grad, _ = _backprop(arch, params, X[idx], y[idx])
            params -= lr * grad
    return params


def predict(arch: MlpArchitecture, params: np.ndarray, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class id
    return np.argmax(forward(arch, params, X), axis=1)


def softmax_confidence(arch: MlpArchitecture, params: np.ndarray, X) -> np.ndarray:
    return forward(arch, params, X).max(axis=1)



@dataclass(frozen=True)
class SgdSettings:
    lr: float = 0.01
    epochs: int = 5
    batch_size: int = 32

    def train(self, arch: MlpArchitecture, params: np.ndarray, X, y, seed) -> np.ndarray:
        return sgd_epochs(arch, params, X, y, self.lr, self.epochs, self.batch_size, seed)
