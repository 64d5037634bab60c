"""Mini-batch Adam training with early stopping, plus k-fold model selection.

Training is bitwise deterministic for a given (model seed, shuffle seed):
initialization comes from the model constructor, epoch shuffles from one
generator seeded here, and all reductions are plain sequential numpy sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..metrics import macro_f1_from_labels
from .core import Adam, Model
from .nets import build_model

#: hyper-grid keys routed to the model constructor; the rest go to train()
_BUILD_KEYS = ("n_features", "n_channels", "mlp_hidden", "lstm_hidden")


@dataclass(slots=True)
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    best_val_f1: float = 0.0
    best_epoch: int = 0
    stopped_early: bool = False


def train(model: Model, X_train: np.ndarray, y_train: np.ndarray,
          X_val: np.ndarray, y_val: np.ndarray, *, epochs: int = 50,
          batch_size: int = 512, lr: float = 1e-3, patience: int = 10,
          seed: int = 0) -> TrainResult:
    """Adam on mean cross-entropy; keeps the parameters of the best
    validation macro-F1 epoch and stops after ``patience`` stale evals."""
    if X_train.shape[0] == 0 or X_val.shape[0] == 0:
        raise DataError("training and validation splits must be non-empty")
    rng = np.random.default_rng(seed)
    adam = Adam(model.param_shapes(), lr=lr)
    result = TrainResult(model)
    best_params = model.copy_params()
    stale = 0
    n = X_train.shape[0]
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            loss, grads = model.loss_and_grads(X_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise DataError(
                    f"non-finite loss at epoch {epoch}, batch offset {start} "
                    f"(lr={lr}, batch={idx.size}): training diverged")
            adam.step(model.params, grads)
            losses.append(loss)
        val_f1 = macro_f1_from_labels(y_val, model.predict(X_val))
        result.history.append({"epoch": epoch,
                               "train_loss": float(np.mean(losses)),
                               "val_macro_f1": val_f1})
        if val_f1 > result.best_val_f1:
            result.best_val_f1 = val_f1
            result.best_epoch = epoch
            best_params = model.copy_params()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                result.stopped_early = True
                break
    model.set_params(best_params)
    return result


def stratified_kfold(labels: np.ndarray, k: int,
                     seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint covering folds with near-equal class mix.

    Indices of each class are shuffled and dealt round-robin; the deal cursor
    carries across classes so k = N degenerates to leave-one-out.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.nonzero(labels == c)[0])
        for i in idx:
            fold_of[i] = cursor % k
            cursor += 1
    folds = []
    for f in range(k):
        val = np.nonzero(fold_of == f)[0]
        tr = np.nonzero(fold_of != f)[0]
        folds.append((tr, val))
    return folds


def crossval(kind: str, X: np.ndarray, y: np.ndarray,
             grid: list[dict], k: int = 5, seed: int = 0,
             **train_kw) -> tuple[dict, list[dict]]:
    """Stratified k-fold selection over a hyperparameter grid.

    Returns (best point, per-point results). The winner maximizes mean
    validation macro-F1; exact ties go to the model with fewer parameters.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    shared_build = {kk: train_kw.pop(kk) for kk in _BUILD_KEYS if kk in train_kw}
    if X.ndim == 3:
        shared_build.setdefault("n_channels", X.shape[2])
    else:
        shared_build.setdefault("n_features", X.shape[1])
    folds = stratified_kfold(y, k, seed)
    results = []
    for hyper in grid:
        build_kw = {**shared_build,
                    **{kk: vv for kk, vv in hyper.items() if kk in _BUILD_KEYS}}
        fit_kw = {kk: vv for kk, vv in hyper.items() if kk not in _BUILD_KEYS}
        fit_kw = {**train_kw, **fit_kw}
        f1s = []
        for fold_i, (tr, val) in enumerate(folds):
            model = build_model(kind, seed=seed + fold_i, **build_kw)
            res = train(model, X[tr], y[tr], X[val], y[val],
                        seed=seed + fold_i, **fit_kw)
            f1s.append(res.best_val_f1)
        probe = build_model(kind, seed=0, **build_kw)
        results.append({"hyper": hyper, "mean_val_f1": float(np.mean(f1s)),
                        "fold_f1": f1s, "n_params": probe.n_params()})
    best = max(results, key=lambda r: (r["mean_val_f1"], -r["n_params"]))
    return best["hyper"], results
