import numpy as np
import pytest

from muonlab.datagen import (
    DEFAULT_ROUTING_TARGETS, Rng, SpuriousSpec, aligned_init, allowed_pairs, balanced_small_init,
    check_encodings, gaussian_regression, make_source_encodings, random_orthogonal,
    routing_sample_batch, routing_small_init, spurious_dataset,
)
from muonlab.errors import InvalidInputError
from muonlab.models import PopulationStats, balancedness_gap


def test_rng_determinism_and_independence():
    a = Rng(7).substream("x").normal(size=5)
    assert np.array_equal(a, Rng(7).substream("x").normal(size=5))
    assert not np.array_equal(a, Rng(8).substream("x").normal(size=5))
    assert not np.array_equal(a, Rng(7).substream("y").normal(size=5))
    # Drawing from one stream leaves siblings untouched.
    root = Rng(7)
    root.substream("y").normal(size=100)
    assert np.array_equal(root.substream("x").normal(size=5), a)
    with pytest.raises(InvalidInputError):
        Rng(-1)


def test_random_orthogonal():
    q = random_orthogonal(Rng(0), 5)
    assert np.allclose(q.T @ q, np.eye(5), atol=1e-12)


def test_gaussian_regression_spectrum():
    data = gaussian_regression(Rng(0), 10, 3, 2, [2.0, 1.0])
    assert np.allclose(np.linalg.svd(data.stats.sigma_yx, compute_uv=False), [2.0, 1.0])
    assert np.array_equal(data.stats.sigma_xx, np.eye(3))
    assert np.allclose(data.ys, data.xs @ data.stats.sigma_yx.T)
    one = gaussian_regression(Rng(0), 4, 2, 2, [1.0])
    assert np.linalg.matrix_rank(one.stats.sigma_yx) == 1
    again = gaussian_regression(Rng(0), 10, 3, 2, [2.0, 1.0], noise=0.3)
    assert np.array_equal(again.xs, data.xs)
    for bad in [dict(teacher_spectrum=[1, 1, 1]), dict(teacher_spectrum=[-1.0]), dict(noise=-1.0)]:
        kw = dict(n=4, d_in=2, d_out=2, teacher_spectrum=[1.0]) | bad
        with pytest.raises(InvalidInputError):
            gaussian_regression(Rng(0), **kw)


def test_sample_stats_converge():
    data = gaussian_regression(Rng(1), 200_000, 3, 2, [2.0, 1.0], noise=0.5)
    est = PopulationStats.from_samples(data.xs, data.ys)
    assert np.allclose(est.sigma_xx, np.eye(3), atol=0.02)
    assert np.allclose(est.sigma_yx, data.stats.sigma_yx, atol=0.02)


def test_inits():
    net = balanced_small_init(Rng(0), 3, 4, 2, scale=1e-2)
    assert net.u.shape == (4, 3) and net.v.shape == (2, 4)
    assert abs(np.std(np.concatenate([net.u.ravel(), net.v.ravel()])) - 1e-2) < 5e-3
    bal = balanced_small_init(Rng(0), 3, 4, 2, scale=1e-2, exact_balance=True)
    assert np.allclose(bal.v @ bal.u, net.v @ net.u, atol=1e-15)
    assert balancedness_gap(bal) <= 1e-12
    data = gaussian_regression(Rng(0), 4, 3, 2, [2.0, 1.0])
    al = aligned_init(Rng(0), data.q, data.r, 4, 1e-3)
    assert np.allclose(data.q.T @ (al.v @ al.u) @ data.r, 1e-3 * np.eye(2), atol=1e-15)
    with pytest.raises(InvalidInputError):
        aligned_init(Rng(0), data.q, data.r, 1, 1e-3)


def test_routing_encodings_and_batch():
    enc = make_source_encodings(Rng(0), 7, 4)
    check_encodings(enc)
    assert not np.allclose(enc[0], enc[1])
    batch = routing_sample_batch(Rng(1), 7, 2, enc, DEFAULT_ROUTING_TARGETS)
    assert [(s.in_src, s.out_src) for s in batch] == [(j, (j + s) % 7) for j in range(7) for s in range(2)]
    for s in batch:
        assert np.array_equal(s.x, enc[s.in_src, s.number])
        assert np.array_equal(s.y, DEFAULT_ROUTING_TARGETS[s.number])
    assert allowed_pairs(7, 2) == {(s.in_src, s.out_src) for s in batch}
    bad = enc.copy()
    bad[3, 0] *= 2
    with pytest.raises(InvalidInputError):
        routing_sample_batch(Rng(1), 7, 2, bad, DEFAULT_ROUTING_TARGETS)
    with pytest.raises(InvalidInputError):
        make_source_encodings(Rng(0), 7, 5)


def test_routing_batch_numbers_uniform():
    enc = make_source_encodings(Rng(0), 7, 4)
    rng = Rng(2)
    counts = np.zeros(4)
    for _ in range(500):
        for s in routing_sample_batch(rng, 7, 2, enc, DEFAULT_ROUTING_TARGETS):
            counts[s.number] += 1
    assert np.all(np.abs(counts / counts.sum() - 0.25) < 0.02)


def test_routing_init_shapes():
    net = routing_small_init(Rng(0), 7, scale=3e-4, hidden_scale=3e-5)
    assert net.encoders[0].shape == (64, 4) and net.decoders[0].shape == (7, 64)
    assert net.hidden.shape == (64, 64)
    assert np.std(net.hidden) < np.std(net.encoders[0])


def test_spurious_dataset():
    spec = SpuriousSpec(spurious_strength=2.0)
    data = spurious_dataset(Rng(0), spec, 50_000)
    ex, ey = data.eval_with
    ex0, ey0 = data.eval_without
    assert np.array_equal(ey, ey0) and np.array_equal(ex[:, :-1], ex0[:, :-1])
    assert np.all(ex0[:, -1] == 0)
    # The spurious pixel is a noiseless copy of the first label coordinate.
    assert np.allclose(data.xs[:, -1], 2.0 * data.ys[:, 0])
    est = PopulationStats.from_samples(data.xs, data.ys)
    assert np.allclose(est.sigma_xx, data.stats.sigma_xx, atol=0.05)
    assert np.allclose(est.sigma_yx, data.stats.sigma_yx, atol=0.05)
    assert np.array_equal(spurious_dataset(Rng(0), spec, 10).xs, spurious_dataset(Rng(0), spec, 10).xs)
    for bad in [dict(core_strength=0.0), dict(spurious_strength=-1.0), dict(noise_level=-1.0),
                dict(d_in=2, d_out=2)]:
        with pytest.raises(InvalidInputError):
            SpuriousSpec(**bad)
