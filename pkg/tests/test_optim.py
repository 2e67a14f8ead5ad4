import numpy as np
import pytest

from muonlab.errors import InvalidInputError
from muonlab.linalg import nuclear_norm, operator_norm
from muonlab.optim import KINDS, Hyperparams, make_optimizer


def test_gd_step():
    opt = make_optimizer("gd", learning_rate=0.1)
    (w,) = opt.step([np.ones((2, 2))], [np.full((2, 2), 2.0)])
    assert np.allclose(w, 0.8)


def test_momentum_buffer_accumulates():
    opt = make_optimizer("momentum_gd", learning_rate=1.0, momentum=0.5)
    g = np.eye(2)
    (w,) = opt.step([np.zeros((2, 2))], [g])
    (w,) = opt.step([w], [g])
    # displacements 1 then 1.5
    assert np.allclose(w, -2.5 * g)


def test_inputs_not_modified(rng):
    p, g = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    p0, g0 = p.copy(), g.copy()
    for kind in KINDS:
        make_optimizer(kind, learning_rate=0.1, momentum=0.5).step([p], [g])
    assert np.array_equal(p, p0) and np.array_equal(g, g0)


def test_spectral_update_is_steepest_descent(rng):
    lr = 0.03
    for shape in [(4, 4), (6, 3), (2, 7)]:
        g = rng.normal(size=shape)
        opt = make_optimizer("spectral_gd", learning_rate=lr)
        (w,) = opt.step([np.zeros(shape)], [g])
        assert np.sum(g * w) == pytest.approx(-lr * nuclear_norm(g), abs=1e-9)
        assert operator_norm(w) == pytest.approx(lr, rel=1e-10)


def test_spectral_zero_grad_skips():
    opt = make_optimizer("spectral_gd", learning_rate=1.0)
    (w,) = opt.step([np.ones((2, 3))], [np.zeros((2, 3))])
    assert np.array_equal(w, np.ones((2, 3)))


def test_spectral_momentum_orthogonalizes_buffer(rng):
    g1, g2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    opt = make_optimizer("spectral_momentum_gd", learning_rate=1.0, momentum=0.9)
    ref = make_optimizer("spectral_gd", learning_rate=1.0)
    p = np.zeros((3, 3))
    (p,) = opt.step([p], [g1])
    (p2,) = opt.step([p], [g2])
    (q,) = ref.step([p], [0.9 * g1 + g2])
    assert np.allclose(p2, q, atol=1e-12)


def test_muon_close_to_spectral_momentum(rng):
    g = rng.normal(size=(5, 5))
    (a,) = make_optimizer("muon", learning_rate=1.0).step([np.zeros((5, 5))], [g])
    (b,) = make_optimizer("spectral_momentum_gd", learning_rate=1.0).step([np.zeros((5, 5))], [g])
    # Same singular vectors, singular values only approximately one.
    cos = np.sum(a * b) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos > 0.95


def test_adam_first_step_is_sign():
    opt = make_optimizer("adam", learning_rate=0.01)
    g = np.array([[3.0, -0.2], [1e-3, -5.0]])
    (w,) = opt.step([np.zeros((2, 2))], [g])
    assert np.allclose(w, -0.01 * np.sign(g), rtol=1e-4)


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_descends_on_quadratic(kind):
    target = np.array([[1.0, 2.0], [0.0, -1.0]])
    w = np.zeros((2, 2))
    opt = make_optimizer(kind, learning_rate=0.01, momentum=0.5 if "momentum" in kind or kind == "muon" else 0.0)
    for _ in range(50):
        (w,) = opt.step([w], [w - target])
    assert np.linalg.norm(w - target) < np.linalg.norm(target)


def test_validation():
    with pytest.raises(InvalidInputError):
        make_optimizer("sgdx")
    for bad in [dict(learning_rate=0), dict(momentum=1.0), dict(adam_eps=0), dict(ns_iterations=0),
                dict(rank_cutoff=-1), dict(svd_method="qr"), dict(adam_beta2=1.0)]:
        with pytest.raises(InvalidInputError):
            Hyperparams(**bad)
    opt = make_optimizer("gd")
    with pytest.raises(InvalidInputError):
        opt.step([np.zeros((2, 2))], [np.zeros((2, 3))])
    with pytest.raises(InvalidInputError):
        opt.step([np.zeros((2, 2))], [np.full((2, 2), np.nan)])
    with pytest.raises(InvalidInputError):
        opt.step([np.zeros((2, 2))], [])
    opt.step([np.zeros((2, 2))], [np.zeros((2, 2))])
    with pytest.raises(InvalidInputError):
        opt.step([np.zeros((3, 3))], [np.zeros((3, 3))])
