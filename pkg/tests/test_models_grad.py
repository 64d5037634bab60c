"""Analytic gradients vs central finite differences, plus unit checks for
softmax, cross-entropy, and Adam."""

import numpy as np
import pytest

from cropcast.models import (Adam, Logreg, Lstm, Mlp, build_model,
                             cross_entropy, onehot, softmax)

H_FD = 1e-5
REL_TOL = 1e-5


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------

def test_softmax_uniform():
    assert np.allclose(softmax(np.zeros((1, 4))), 0.25)


def test_softmax_stability():
    p = softmax(np.array([[1000.0, 0.0, 0.0, 0.0]]))
    assert np.isfinite(p).all()
    assert abs(p[0, 0] - 1.0) < 1e-12


def test_softmax_shift_invariance(rng):
    z = rng.normal(0, 3, (6, 4))
    assert np.allclose(softmax(z), softmax(z + 123.456), atol=1e-15)


def test_softmax_rows_sum_one(rng):
    p = softmax(rng.normal(0, 10, (100, 4)))
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12
    assert (p > 0).all() and (p < 1).all()


def test_cross_entropy_perfect():
    p = onehot(np.array([2]))
    assert cross_entropy(p, np.array([2])) == 0.0


def test_cross_entropy_uniform():
    p = np.full((1, 4), 0.25)
    assert abs(cross_entropy(p, np.array([0])) - np.log(4)) < 1e-12


def test_cross_entropy_clamped():
    p = np.array([[1e-20, 1.0, 0.0, 0.0]])
    loss = cross_entropy(p, np.array([0]))
    assert np.isfinite(loss)
    assert abs(loss - (-np.log(1e-12))) < 1e-9


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_first_step_magnitude():
    params = {"w": np.array([0.0])}
    adam = Adam({"w": (1,)})
    adam.step(params, {"w": np.array([1.0])})
    # m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
    assert abs(params["w"][0] + 1e-3 / (1.0 + 1e-8)) < 1e-15


def test_adam_zero_gradient_no_change():
    params = {"w": np.array([3.5])}
    adam = Adam({"w": (1,)})
    adam.step(params, {"w": np.array([0.0])})
    assert params["w"][0] == 3.5


def test_adam_first_step_sign(rng):
    g = rng.normal(0, 5, 20)
    params = {"w": np.zeros(20)}
    adam = Adam({"w": (20,)})
    adam.step(params, {"w": g.copy()})
    nz = g != 0
    assert (np.sign(params["w"][nz]) == -np.sign(g[nz])).all()


# ---------------------------------------------------------------------------
# Finite-difference harness
# ---------------------------------------------------------------------------

def assert_param_grads_match(model, X, y, rng, n_coords=25):
    _, grads = model.loss_and_grads(X, y)
    names = list(model.param_names)
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        arr = model.params[name]
        i = rng.integers(arr.size)
        orig = arr.flat[i]
        arr.flat[i] = orig + H_FD
        lp = model.loss(X, y)
        arr.flat[i] = orig - H_FD
        lm = model.loss(X, y)
        arr.flat[i] = orig
        fd = (lp - lm) / (2 * H_FD)
        an = grads[name].flat[i]
        scale = max(abs(an), abs(fd))
        if scale > 1e-6:
            assert abs(an - fd) / scale <= REL_TOL, \
                f"{model.kind}.{name}[{i}]: analytic {an} vs fd {fd}"
        else:
            assert abs(an - fd) < 1e-10


def assert_input_grads_match(model, X, rng, n_coords=15):
    cls = 2
    dX = model.logit_input_grad(X, cls)
    flatX = X.reshape(X.shape[0], -1)
    flatG = dX.reshape(X.shape[0], -1)
    for _ in range(n_coords):
        n = rng.integers(X.shape[0])
        i = rng.integers(flatX.shape[1])
        orig = flatX[n, i]
        flatX[n, i] = orig + H_FD
        lp = model.forward(X)[n, cls]
        flatX[n, i] = orig - H_FD
        lm = model.forward(X)[n, cls]
        flatX[n, i] = orig
        fd = (lp - lm) / (2 * H_FD)
        an = flatG[n, i]
        scale = max(abs(an), abs(fd))
        if scale > 1e-6:
            assert abs(an - fd) / scale <= REL_TOL
        else:
            assert abs(an - fd) < 1e-10


def small_models():
    return [
        (Logreg(7, seed=3), (6, 7)),
        (Mlp(7, hidden=(5, 4), seed=3), (6, 7)),
        (Lstm(6, hidden=5, seed=3), (4, 12, 6)),
    ]


@pytest.mark.parametrize("idx", [0, 1, 2], ids=["logreg", "mlp", "lstm"])
def test_param_gradients_finite_difference(idx):
    rng = np.random.default_rng(42 + idx)
    model, shape = small_models()[idx]
    X = rng.normal(0, 1, shape)
    y = rng.integers(0, 4, shape[0])
    assert_param_grads_match(model, X, y, rng)


@pytest.mark.parametrize("idx", [0, 1, 2], ids=["logreg", "mlp", "lstm"])
def test_input_gradients_finite_difference(idx):
    rng = np.random.default_rng(142 + idx)
    model, shape = small_models()[idx]
    X = rng.normal(0, 1, shape)
    assert_input_grads_match(model, X, rng)


def test_duplicated_sample_same_gradient(rng):
    model = Mlp(5, hidden=(4, 4), seed=1)
    x = rng.normal(0, 1, (1, 5))
    y = np.array([1])
    _, g1 = model.loss_and_grads(x, y)
    _, g2 = model.loss_and_grads(np.repeat(x, 3, axis=0), np.array([1, 1, 1]))
    for k in g1:
        assert np.allclose(g1[k], g2[k], atol=1e-14)


# ---------------------------------------------------------------------------
# Forward contracts
# ---------------------------------------------------------------------------

def test_zero_weights_uniform_probs():
    model = Logreg(5, seed=0)
    model.params["W"][:] = 0.0
    model.params["b"][:] = 0.0
    p = model.predict_proba(np.random.default_rng(0).normal(0, 1, (3, 5)))
    assert np.allclose(p, 0.25)


def test_logreg_onehot_input_reads_column():
    model = Logreg(6, seed=5)
    x = np.zeros((1, 6))
    x[0, 4] = 1.0
    logits = model.forward(x)
    assert np.allclose(logits[0], model.params["W"][:, 4] + model.params["b"])


def test_lstm_zero_weights_logits_are_readout_bias():
    model = Lstm(6, hidden=5, seed=0)
    for k in model.param_names:
        model.params[k][:] = 0.0
    model.params["by"][:] = np.array([0.5, -1.0, 2.0, 0.0])
    # with every gate weight zero: i=f=o=0.5, g=0, so c stays 0 and h stays 0
    # through all 12 steps; logits reduce to the readout bias
    X = np.random.default_rng(1).normal(0, 1, (3, 12, 6))
    logits = model.forward(X)
    assert np.allclose(logits, np.array([0.5, -1.0, 2.0, 0.0]))


def test_predict_matches_argmax_of_proba(rng):
    model = Mlp(8, hidden=(6, 5), seed=2)
    X = rng.normal(0, 1, (20, 8))
    assert np.array_equal(model.predict(X),
                          model.predict_proba(X).argmax(axis=1))


def test_build_model_kinds():
    assert build_model("logreg").kind == "logreg"
    assert build_model("mlp").kind == "mlp"
    m = build_model("lstm")
    assert m.kind == "lstm" and m.params["Wi"].shape == (64, 52)
    assert np.allclose(m.params["bf"], 1.0)  # forget gate starts open
    with pytest.raises(ValueError):
        build_model("transformer")


def test_default_shapes_match_production_layout():
    lr = build_model("logreg")
    assert lr.params["W"].shape == (4, 162)
    mlp = build_model("mlp")
    assert mlp.params["W1"].shape == (128, 162)
    assert mlp.params["W3"].shape == (4, 128)
