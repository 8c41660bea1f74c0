import numpy as np
import pytest
import scipy.linalg

from mekd import autodiff as ad
from mekd.data import Dataset, synth_blobs
from mekd.distill import kld_loss
from mekd.metrics import (
    FrechetStats,
    accuracy,
    frechet_distance,
    matrix_sqrt_psd,
    record_logit_gradients,
    supervised_ce_loss,
)
from mekd.nets import NetworkSpec, build_network, generator_spec, student_spec


# -- accuracy ---------------------------------------------------------------


def _constant_classifier(num_classes, winner, n=4):
    net = build_network(NetworkSpec("classifier", n, (), num_classes), num_classes, seed=0)
    net.params["layers.0.weight"].data = np.zeros((n, num_classes))
    bias = np.zeros(num_classes)
    bias[winner] = 5.0
    net.params["layers.0.bias"].data = bias
    return net


def test_accuracy_constant_predictor():
    ds = Dataset(np.random.default_rng(0).uniform(size=(10, 4)),
                 np.full(10, 2), num_classes=3)
    assert accuracy(_constant_classifier(3, winner=2), ds) == 1.0
    assert accuracy(_constant_classifier(3, winner=0), ds) == 0.0


def test_accuracy_untrained_net_near_chance():
    # balanced labels carrying no information about the samples: any fixed
    # predictor lands near 1/C
    rng = np.random.default_rng(1)
    ds = Dataset(rng.uniform(size=(1200, 8)), np.repeat(np.arange(4), 300),
                 num_classes=4)
    net = build_network(student_spec(8, 4), 4, seed=2)
    assert abs(accuracy(net, ds) - 0.25) < 0.1


def test_accuracy_empty_dataset_rejected():
    ds = Dataset(np.zeros((0, 4)), np.zeros(0, dtype=int), num_classes=2)
    net = build_network(student_spec(4, 2), 2, seed=0)
    with pytest.raises(ValueError):
        accuracy(net, ds)


def test_accuracy_class_count_mismatch():
    ds = synth_blobs(3, 4, per_class=5, spread=0.05, seed=0)
    net = build_network(student_spec(4, 2), 2, seed=0)
    with pytest.raises(ValueError):
        accuracy(net, ds)


def test_accuracy_role_checked():
    ds = synth_blobs(3, 4, per_class=5, spread=0.05, seed=0)
    gen = build_network(generator_spec(3, 4), 3, seed=0)
    with pytest.raises(ValueError):
        accuracy(gen, ds)


def test_accuracy_invariant_under_monotone_transform():
    # argmax of softmax == argmax of logits; scaling all logits by a positive
    # constant (a strictly monotone map) cannot change accuracy
    ds = synth_blobs(3, 6, per_class=40, spread=0.2, seed=3)
    net = build_network(student_spec(6, 3), 3, seed=4)
    base = accuracy(net, ds)
    scaled = build_network(student_spec(6, 3), 3, seed=4)
    state = scaled.state_dict()
    last = max(int(k.split(".")[1]) for k in state)
    state[f"layers.{last}.weight"] = state[f"layers.{last}.weight"] * 3.0
    state[f"layers.{last}.bias"] = state[f"layers.{last}.bias"] * 3.0
    scaled.load_state_dict(state)
    assert accuracy(scaled, ds) == base


def test_accuracy_counts_label_reads():
    ds = synth_blobs(3, 4, per_class=5, spread=0.05, seed=0)
    net = build_network(student_spec(4, 3), 3, seed=0)
    accuracy(net, ds)
    assert ds.label_reads == 1


# -- FrechetStats / matrix_sqrt_psd ------------------------------------------


def test_frechet_stats_unbiased_covariance():
    samples = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    stats = FrechetStats.from_samples(samples)
    assert np.allclose(stats.mean, [1.0, 1.0])
    # per-component variance with N-1 = 3 denominator: 4/3
    assert np.allclose(stats.cov, [[4.0 / 3.0, 0.0], [0.0, 4.0 / 3.0]], atol=1e-12)


def test_frechet_stats_validation():
    with pytest.raises(ValueError):
        FrechetStats.from_samples(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        FrechetStats.from_samples(np.array([[np.inf, 0.0], [0.0, 0.0]]))
    with pytest.warns(UserWarning, match="rank-deficient"):
        FrechetStats.from_samples(np.random.default_rng(0).uniform(size=(3, 5)))


def test_matrix_sqrt_identity():
    assert np.allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3), atol=1e-12)


def test_matrix_sqrt_diagonal():
    assert np.allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])),
                       np.diag([2.0, 3.0]), atol=1e-12)


def test_matrix_sqrt_reconstructs_random_psd():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.standard_normal((5, 5))
        m = a.T @ a
        s = matrix_sqrt_psd(m)
        assert np.linalg.norm(s @ s - m) < 1e-8 * max(1.0, np.linalg.norm(m))
        assert np.allclose(s, s.T, atol=1e-12)


def test_matrix_sqrt_rejects_asymmetry():
    with pytest.raises(ValueError):
        matrix_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        matrix_sqrt_psd(np.zeros((2, 3)))


def test_matrix_sqrt_clamps_tiny_negative_eigenvalues():
    m = np.diag([1.0, -1e-12])
    s = matrix_sqrt_psd(m)
    assert np.allclose(s, np.diag([1.0, 0.0]), atol=1e-9)


def test_matrix_sqrt_matches_scipy_on_random_psd():
    rng = np.random.default_rng(6)
    for _ in range(10):
        a = rng.standard_normal((4, 4))
        m = a.T @ a + 0.1 * np.eye(4)
        want = scipy.linalg.sqrtm(m).real
        assert np.allclose(matrix_sqrt_psd(m), want, atol=1e-8)


# -- frechet_distance ---------------------------------------------------------


def test_frechet_identity_zero():
    samples = np.random.default_rng(7).uniform(size=(50, 3))
    assert frechet_distance(samples, samples) == pytest.approx(0.0, abs=1e-6)


def test_frechet_symmetric():
    rng = np.random.default_rng(8)
    a = rng.uniform(size=(40, 3))
    b = rng.uniform(size=(40, 3)) + 0.3
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-9)


def test_frechet_nonnegative_on_random_pairs():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = rng.standard_normal((30, 4))
        b = rng.standard_normal((30, 4)) * rng.uniform(0.5, 2.0)
        assert frechet_distance(a, b) >= 0.0


def test_frechet_matches_scipy_sqrtm_oracle():
    # independent implementation: trace term via scipy.linalg.sqrtm on C_A C_B
    rng = np.random.default_rng(10)
    for _ in range(100):
        d = int(rng.integers(2, 5))
        n = int(rng.integers(d + 2, 40))
        a = rng.standard_normal((n, d)) @ rng.standard_normal((d, d)) + rng.standard_normal(d)
        b = rng.standard_normal((n, d)) @ rng.standard_normal((d, d)) + rng.standard_normal(d)
        got = frechet_distance(a, b)

        mat_a, mat_b = FrechetStats.from_samples(a), FrechetStats.from_samples(b)
        cross = scipy.linalg.sqrtm(mat_a.cov @ mat_b.cov)
        if np.iscomplexobj(cross):
            cross = cross.real
        diff = mat_a.mean - mat_b.mean
        want = float(diff @ diff + np.trace(mat_a.cov) + np.trace(mat_b.cov)
                     - 2.0 * np.trace(cross))
        assert got == pytest.approx(want, abs=1e-6)


def test_frechet_dimension_mismatch():
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((10, 2)), np.zeros((10, 3)))


def test_frechet_separated_gaussians_closed_form():
    # N(0, I) vs N([1,0], I) in d=2 has distance ||mu||^2 = 1
    rng = np.random.default_rng(11)
    a = rng.standard_normal((100_000, 2))
    b = rng.standard_normal((100_000, 2)) + np.array([1.0, 0.0])
    assert abs(frechet_distance(a, b) - 1.0) < 0.05


# -- logit-gradient profiles ---------------------------------------------------


def test_ce_gradient_is_probs_minus_onehot():
    net = build_network(student_spec(6, 4), 4, seed=12)
    x = np.random.default_rng(13).uniform(size=6)
    for true_class in range(4):
        got = record_logit_gradients(net, lambda z: supervised_ce_loss(z, true_class),
                                     x, true_class)
        probs = net.classify(x.reshape(1, -1)).data[0]
        onehot = np.eye(4)[true_class]
        want = probs - onehot
        reordered = np.concatenate(([want[true_class]],
                                    want[:true_class], want[true_class + 1:]))
        assert np.allclose(got, reordered, atol=1e-10)


def test_ce_gradient_matches_finite_differences():
    net = build_network(student_spec(5, 3), 3, seed=14)
    x = np.random.default_rng(15).uniform(size=5)
    true_class = 1
    got = record_logit_gradients(net, lambda z: supervised_ce_loss(z, true_class),
                                 x, true_class)
    # numeric gradient w.r.t. the logits themselves
    logits = net.logits(x.reshape(1, -1)).data[0].copy()
    h = 1e-6

    def ce(z):
        e = np.exp(z - z.max())
        p = e / e.sum()
        return -np.log(p[true_class])

    numeric = np.zeros(3)
    for j in range(3):
        up, down = logits.copy(), logits.copy()
        up[j] += h
        down[j] -= h
        numeric[j] = (ce(up) - ce(down)) / (2 * h)
    reordered = np.concatenate(([numeric[true_class]],
                                numeric[:true_class], numeric[true_class + 1:]))
    assert np.allclose(got, reordered, atol=1e-6)


def test_ce_gradient_near_zero_at_minimum():
    net = _constant_classifier(3, winner=1, n=4)
    for p in net.params.values():
        p.requires_grad = True
    net.params["layers.0.bias"].data = np.array([0.0, 50.0, 0.0])  # ~one-hot on class 1
    got = record_logit_gradients(net, lambda z: supervised_ce_loss(z, 1),
                                 np.zeros(4), 1)
    assert np.all(np.abs(got) < 1e-9)


def test_gradient_profile_is_permutation():
    net = build_network(student_spec(6, 5), 5, seed=16)
    x = np.random.default_rng(17).uniform(size=6)

    def kd_loss(z):
        return kld_loss(np.full((1, 5), 0.2), ad.softmax(z), 4.0)

    plain = record_logit_gradients(net, kd_loss, x, 0)
    shuffled = record_logit_gradients(net, kd_loss, x, 3)
    assert sorted(plain) == pytest.approx(sorted(shuffled))
    assert len(plain) == 5


def test_gradient_profile_class_range_checked():
    net = build_network(student_spec(4, 3), 3, seed=18)
    with pytest.raises(ValueError):
        record_logit_gradients(net, lambda z: supervised_ce_loss(z, 0), np.zeros(4), 3)


def test_gradient_profile_rejects_frozen_student():
    net = build_network(student_spec(4, 3), 3, seed=19).freeze()
    with pytest.raises(ValueError, match="frozen"):
        record_logit_gradients(net, lambda z: supervised_ce_loss(z, 0), np.zeros(4), 0)
