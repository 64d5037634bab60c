"""Shared numeric core: stable softmax, cross-entropy, Adam, model base.

Every model exposes the same two primitives:

- ``forward(X) -> logits``
- ``backward(X, dlogits) -> (param_grads, input_grads)``

Backpropagating an arbitrary ``dlogits`` serves two masters with one code
path: the loss gradient uses ``(softmax - onehot) / N``, and attribution
methods inject a one-hot row to get the gradient of a single class logit
with respect to the inputs.
"""

from __future__ import annotations

import numpy as np

N_CLASSES = 4

_P_CLAMP = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def onehot(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood, probabilities clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    p = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(p, _P_CLAMP)).mean())


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        b1c = 1.0 - self.beta1 ** t
        b2c = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / b1c
            v_hat = self.v[k] / b2c
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Model:
    """Base for the three classifier families.

    Subclasses set ``kind``, ``input_kind`` ("flat" for (N, F) inputs,
    "sequence" for (N, T, C)), ``param_names`` (a fixed serialization order)
    and implement ``forward`` and ``backward``.
    """

    kind: str = "?"
    input_kind: str = "flat"
    param_names: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.meta: dict = {}

    # -- subclass API ------------------------------------------------------
    def forward(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, X: np.ndarray, dlogits: np.ndarray,
                 ) -> tuple[dict[str, np.ndarray], np.ndarray]:
        raise NotImplementedError

    # -- shared machinery --------------------------------------------------
    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.forward(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X).argmax(axis=1)

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        return cross_entropy(self.predict_proba(X), y)

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray,
                       ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy and its exact parameter gradient."""
        probs = self.predict_proba(X)
        loss = cross_entropy(probs, y)
        dlogits = (probs - onehot(y)) / X.shape[0]
        grads, _ = self.backward(X, dlogits)
        return loss, grads

    def logit_input_grad(self, X: np.ndarray, class_idx: int) -> np.ndarray:
        """d logit_c / d input for each sample (the attribution hook)."""
        dlogits = np.zeros((X.shape[0], N_CLASSES))
        dlogits[:, class_idx] = 1.0
        _, dX = self.backward(X, dlogits)
        return dX

    def n_params(self) -> int:
        return int(sum(self.params[k].size for k in self.param_names))

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.param_names:
            self.params[k] = params[k].copy()

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: self.params[k].shape for k in self.param_names}
