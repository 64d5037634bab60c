"""The three classifier families: multinomial logistic regression, a ReLU
MLP, and an LSTM with a linear readout from the final hidden state.

All math is float64 numpy. Weights initialize uniform(-sqrt(1/fan_in),
+sqrt(1/fan_in)) from the model seed; biases start at zero except the LSTM
forget gate, which starts at 1 so early training does not forget.
"""

from __future__ import annotations

import numpy as np

from .core import Model, N_CLASSES, uniform_init


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Logreg(Model):
    """logits = X W^T + b."""

    kind = "logreg"
    input_kind = "flat"
    param_names = ("W", "b")

    def __init__(self, n_features: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.params = {
            "W": uniform_init(rng, (N_CLASSES, n_features), n_features),
            "b": np.zeros(N_CLASSES),
        }
        self.meta = {"n_features": n_features, "seed": seed}

    def forward(self, X):
        return X @ self.params["W"].T + self.params["b"]

    def backward(self, X, dlogits):
        grads = {"W": dlogits.T @ X, "b": dlogits.sum(axis=0)}
        return grads, dlogits @ self.params["W"]


class Mlp(Model):
    """Two ReLU hidden layers, default sizes (128, 128)."""

    kind = "mlp"
    input_kind = "flat"
    param_names = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __init__(self, n_features: int, hidden: tuple[int, int] = (128, 128),
                 seed: int = 0):
        super().__init__()
        h1, h2 = hidden
        rng = np.random.default_rng(seed)
        self.params = {
            "W1": uniform_init(rng, (h1, n_features), n_features),
            "b1": np.zeros(h1),
            "W2": uniform_init(rng, (h2, h1), h1),
            "b2": np.zeros(h2),
            "W3": uniform_init(rng, (N_CLASSES, h2), h2),
            "b3": np.zeros(N_CLASSES),
        }
        self.meta = {"n_features": n_features, "hidden": list(hidden),
                     "seed": seed}

    def _forward_cached(self, X):
        p = self.params
        a1 = X @ p["W1"].T + p["b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ p["W2"].T + p["b2"]
        h2 = np.maximum(a2, 0.0)
        logits = h2 @ p["W3"].T + p["b3"]
        return logits, (h1, h2)

    def forward(self, X):
        return self._forward_cached(X)[0]

    def backward(self, X, dlogits):
        p = self.params
        _, (h1, h2) = self._forward_cached(X)
        grads = {}
        grads["W3"] = dlogits.T @ h2
        grads["b3"] = dlogits.sum(axis=0)
        dh2 = (dlogits @ p["W3"]) * (h2 > 0.0)
        grads["W2"] = dh2.T @ h1
        grads["b2"] = dh2.sum(axis=0)
        dh1 = (dh2 @ p["W2"]) * (h1 > 0.0)
        grads["W1"] = dh1.T @ X
        grads["b1"] = dh1.sum(axis=0)
        return grads, dh1 @ p["W1"]


class Lstm(Model):
    """Single-layer LSTM over (N, T, C) sequences, readout from h_T.

    Standard gate equations: i, f, o through sigmoid, candidate g through
    tanh; c_t = f*c_{t-1} + i*g; h_t = o*tanh(c_t). Backward is full BPTT.
    """

    kind = "lstm"
    input_kind = "sequence"
    param_names = ("Wi", "Ui", "bi", "Wf", "Uf", "bf", "Wg", "Ug", "bg",
                   "Wo", "Uo", "bo", "Wy", "by")

    def __init__(self, n_channels: int, hidden: int = 64, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        H, C = hidden, n_channels
        p = {}
        for gate in ("i", "f", "g", "o"):
            p[f"W{gate}"] = uniform_init(rng, (H, C), C)
            p[f"U{gate}"] = uniform_init(rng, (H, H), H)
            p[f"b{gate}"] = np.zeros(H)
        p["bf"] = np.ones(H)  # forget-gate bias starts open
        p["Wy"] = uniform_init(rng, (N_CLASSES, H), H)
        p["by"] = np.zeros(N_CLASSES)
        self.params = p
        self.meta = {"n_channels": C, "hidden": H, "seed": seed}

    def _forward_cached(self, X):
        p = self.params
        n, T, _ = X.shape
        H = p["Wy"].shape[1]
        h = np.zeros((n, H))
        c = np.zeros((n, H))
        cache = []
        for t in range(T):
            x = X[:, t, :]
            i = _sigmoid(x @ p["Wi"].T + h @ p["Ui"].T + p["bi"])
            f = _sigmoid(x @ p["Wf"].T + h @ p["Uf"].T + p["bf"])
            g = np.tanh(x @ p["Wg"].T + h @ p["Ug"].T + p["bg"])
            o = _sigmoid(x @ p["Wo"].T + h @ p["Uo"].T + p["bo"])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            cache.append((x, h, c, i, f, g, o, tanh_c))
            h, c = h_new, c_new
        logits = h @ p["Wy"].T + p["by"]
        return logits, (h, cache)

    def forward(self, X):
        return self._forward_cached(X)[0]

    def backward(self, X, dlogits):
        p = self.params
        _, (h_last, cache) = self._forward_cached(X)
        n, T, C = X.shape
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dX = np.zeros_like(X)

        grads["Wy"] = dlogits.T @ h_last
        grads["by"] = dlogits.sum(axis=0)
        dh = dlogits @ p["Wy"]
        dc = np.zeros_like(dh)
        for t in range(T - 1, -1, -1):
            x, h_prev, c_prev, i, f, g, o, tanh_c = cache[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc = dc * f  # flows to c_{t-1}

            dai = di * i * (1.0 - i)
            daf = df * f * (1.0 - f)
            dag = dg * (1.0 - g * g)
            dao = do * o * (1.0 - o)

            for name, da in (("i", dai), ("f", daf), ("g", dag), ("o", dao)):
                grads[f"W{name}"] += da.T @ x
                grads[f"U{name}"] += da.T @ h_prev
                grads[f"b{name}"] += da.sum(axis=0)

            dX[:, t, :] = (dai @ p["Wi"] + daf @ p["Wf"]
                           + dag @ p["Wg"] + dao @ p["Wo"])
            dh = (dai @ p["Ui"] + daf @ p["Uf"]
                  + dag @ p["Ug"] + dao @ p["Uo"])
        return grads, dX


def build_model(kind: str, seed: int = 0, *, n_features: int = 162,
                n_channels: int = 52, mlp_hidden: tuple[int, int] = (128, 128),
                lstm_hidden: int = 64) -> Model:
    """Factory keyed by model kind; sizes default to the production layout."""
    if kind == "logreg":
        return Logreg(n_features, seed=seed)
    if kind == "mlp":
        return Mlp(n_features, hidden=tuple(mlp_hidden), seed=seed)
    if kind == "lstm":
        return Lstm(n_channels, hidden=lstm_hidden, seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")
