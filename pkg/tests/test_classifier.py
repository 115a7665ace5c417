import numpy as np
import pytest
from hypothesis import given, strategies as st

from dialect_aug import classifier as clf
from dialect_aug.classifier import MlpParams, TrainConfig


def numeric_grad(p, X, y, masks, eps=1e-6):
    out = []
    for a in p.arrays():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            lp, _ = clf.loss_and_grad(p, X, y, masks)
            a[i] = old - eps
            lm, _ = clf.loss_and_grad(p, X, y, masks)
            a[i] = old
            g[i] = (lp - lm) / (2 * eps)
        out.append(g)
    return out


def max_rel_error(p, X, y, masks):
    _, g = clf.loss_and_grad(p, X, y, masks)
    worst = 0.0
    for ga, gn in zip(g.arrays(), numeric_grad(p, X, y, masks)):
        worst = max(worst, np.max(np.abs(ga - gn) / np.maximum(1e-6, np.abs(ga) + np.abs(gn))))
    return worst


def random_instance(seed):
    rng = np.random.default_rng(seed)
    D, H1, H2, C, n = rng.integers(2, 6), rng.integers(2, 7), rng.integers(2, 7), rng.integers(2, 5), rng.integers(1, 6)
    p = clf.init_params(D, H1, H2, C, rng)
    p.b1 += rng.normal(0, 0.1, H1)
    p.b2 += rng.normal(0, 0.1, H2)
    X = rng.standard_normal((n, D))
    y = rng.integers(0, C, n)
    masks = clf.dropout_masks(rng, n, H1, H2, 0.3)
    return p, X, y, masks


def test_init_shapes_and_determinism():
    p = clf.init_params(128, 64, 32, 20, 5)
    assert [a.shape for a in p.arrays()] == [(128, 64), (64,), (64, 32), (32,), (32, 20), (20,)]
    q = clf.init_params(128, 64, 32, 20, 5)
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
    with pytest.raises(clf.ClassifierError):
        clf.init_params(0, 4, 4, 2, 0)


def test_he_variance():
    p = clf.init_params(128, 800, 2, 2, 0)  # 102400 W1 entries
    assert abs(p.W1.var() / (2 / 128) - 1) < 0.1


def test_zero_params_give_uniform():
    p = MlpParams(np.zeros((3, 4)), np.zeros(4), np.zeros((4, 2)), np.zeros(2), np.zeros((2, 5)), np.zeros(5))
    assert np.allclose(clf.forward(p, np.ones(3)), 0.2)


@given(st.integers(0, 2**31))
def test_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    p = clf.init_params(6, 5, 4, 3, rng)
    X = rng.standard_normal((7, 6)) * 10
    assert np.allclose(clf.forward(p, X).sum(axis=1), 1.0, atol=1e-6)


def test_hand_computed_2222_network():
    # x=(1,-1); z1=(1*1+-1*0, 1*0.5+-1*1)+(0,0) = (1, -0.5); a1=(1, -0.005)
    # z2 = a1 @ [[1,-1],[2,0]] + (0.1, 0) = (1-0.01+0.1, -1) = (1.09, -1); a2 = (1.09, -0.01)
    # logits = a2 @ [[1,0],[0,1]] + 0 = (1.09, -0.01)
    p = MlpParams(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), np.array([[1.0, -1.0], [2.0, 0.0]]),
                  np.array([0.1, 0.0]), np.eye(2), np.zeros(2))
    e = np.exp([1.09, -0.01])
    assert np.allclose(clf.forward(p, np.array([1.0, -1.0])), e / e.sum(), atol=1e-6)


def test_dimension_mismatch():
    with pytest.raises(clf.ClassifierError):
        clf.forward(clf.init_params(4, 3, 3, 2, 0), np.ones(5))


@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_softmax_shift_invariance(seed, c):
    z = np.random.default_rng(seed).standard_normal((3, 5))
    assert np.allclose(clf.softmax(z + c), clf.softmax(z), atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    p, X, y, masks = random_instance(seed)
    assert max_rel_error(p, X, y, masks) < 1e-4


def test_duplicated_batch_has_same_gradient():
    p, X, y, _ = random_instance(3)
    g1 = clf.grad(p, X[:1], y[:1])
    g2 = clf.grad(p, np.vstack([X[:1], X[:1]]), np.concatenate([y[:1], y[:1]]))
    assert all(np.allclose(a, b) for a, b in zip(g1.arrays(), g2.arrays()))


def test_label_out_of_range():
    p, X, y, _ = random_instance(0)
    with pytest.raises(clf.ClassifierError):
        clf.grad(p, X, np.full(len(y), p.W3.shape[1]))


def test_dropout_expectation():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(16)
    W = rng.standard_normal((16, 4))
    masks = np.stack([clf.dropout_masks(rng, 1, 16, 1, 0.3)[0][0] for _ in range(10_000)])
    mc = ((a * masks) @ W).mean(axis=0)
    se = ((a * masks) @ W).std(axis=0) / np.sqrt(10_000)
    assert np.all(np.abs(mc - a @ W) < 4 * se)


def separable(seed=0, n=200, D=8):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-1.5, 1, (n, D)), rng.normal(1.5, 1, (n, D))])
    y = np.repeat([0, 1], n)
    return X, y


def test_train_separable():
    X, y = separable()
    Xv, yv = separable(1, 50)
    res = clf.train(TrainConfig(h1=32, h2=16, epochs=50, patience=50, seed=0), X, y, Xv, yv)
    assert (clf.predict(res.params, X) == y).mean() >= 0.99
    assert res.history[1].train_loss < res.history[0].train_loss


def test_train_is_deterministic():
    X, y = separable(2, 60)
    cfg = TrainConfig(h1=16, h2=8, epochs=5, seed=3)
    a = clf.train(cfg, X, y, X, y)
    b = clf.train(cfg, X, y, X, y)
    assert [(r.train_loss, r.val_weighted_f1) for r in a.history] == [(r.train_loss, r.val_weighted_f1) for r in b.history]
    assert all(np.array_equal(u, v) for u, v in zip(a.params.arrays(), b.params.arrays()))


def test_early_stopping_keeps_best():
    X, y = separable(4, 40)
    res = clf.train(TrainConfig(h1=8, h2=8, epochs=100, patience=3, seed=1), X, y, X, y)
    assert len(res.history) <= 101
    best = max(r.val_weighted_f1 for r in res.history)
    assert res.history[res.best_epoch].val_weighted_f1 == best


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_training_aborts():
    X, y = separable(5, 40)
    with pytest.raises(clf.TrainingDivergedError):
        clf.train(TrainConfig(h1=8, h2=8, epochs=20, lr=1e200, dropout_p=0.0), X, y, X, y)


def test_checkpoint_and_history_round_trip(tmp_path):
    p = clf.init_params(5, 4, 3, 2, 9)
    clf.save_checkpoint(p, tmp_path / "m.bin")
    q = clf.load_checkpoint(tmp_path / "m.bin")
    assert all(np.allclose(a, b, atol=1e-6) for a, b in zip(p.arrays(), q.arrays()))
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(clf.ClassifierError):
        clf.load_checkpoint(tmp_path / "bad.bin")
    X, y = separable(6, 20)
    res = clf.train(TrainConfig(h1=4, h2=4, epochs=2), X, y, X, y)
    clf.write_history(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_weighted_f1" and len(lines) == len(res.history) + 1
