"""From-scratch differentiable classifiers and their training harness."""

from .core import Adam, Model, cross_entropy, onehot, softmax
from .nets import Logreg, Lstm, Mlp, build_model
from .serialize import load_model, save_model
from .train import TrainResult, crossval, stratified_kfold, train

__all__ = [
    "Adam", "Model", "cross_entropy", "onehot", "softmax",
    "Logreg", "Mlp", "Lstm", "build_model",
    "load_model", "save_model",
    "TrainResult", "crossval", "stratified_kfold", "train",
]
