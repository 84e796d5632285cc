import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddfabc.forest import (MAGIC, Forest, TreeParams, backward, batch_loss, forest_from_bytes,
                           forest_predict, forest_to_bytes, init_forest, leaf_probabilities, load_forest,
                           loss, save_forest, tree_predict)


def brute_force_leaf_probs(tree: TreeParams, x) -> np.ndarray:
    """Walk every root-to-leaf path explicitly; g at a node is the left probability."""
    d = tree.depth
    out = np.empty(2**d)
    for leaf in range(2**d):
        node, p = 0, 1.0
        for level in range(d - 1, -1, -1):
            g = 1.0 / (1.0 + np.exp(-(tree.A[node] @ x - tree.b[node])))
            right = (leaf >> level) & 1
            p *= (1.0 - g) if right else g
            node = 2 * node + 1 + right
        out[leaf] = p
    return out


def random_tree(rng, depth, M, scale=2.0):
    n = 2**depth - 1
    return TreeParams(rng.uniform(-scale, scale, (n, M)), rng.uniform(-scale, scale, n),
                      rng.uniform(-scale, scale, n + 1))


def random_forest(rng, K, depth, M):
    trees = [random_tree(rng, depth, M) for _ in range(K)]
    return Forest.from_trees(trees)


def test_depth_one_half_gate():
    t = TreeParams(np.zeros((1, 3)), np.zeros(1), np.array([0.0, 2.0]))
    assert np.allclose(leaf_probabilities(t, np.ones(3)), [0.5, 0.5])


def test_depth_one_hand_evaluation():
    # g = sigmoid(-ln 3) = 0.25 routes left
    t = TreeParams(np.zeros((1, 2)), np.array([np.log(3.0)]), np.array([0.0, 2.0]))
    assert tree_predict(t, np.zeros(2)) == pytest.approx(1.5, rel=1e-14)


def test_figure_topology_leaf_probability():
    rng = np.random.default_rng(4)
    t = random_tree(rng, 2, 3)
    x = rng.normal(size=3)
    g = [1 / (1 + np.exp(-(t.A[n] @ x - t.b[n]))) for n in range(3)]
    # third leaf from the left: right at the root, then left at its node
    assert leaf_probabilities(t, x)[2] == pytest.approx((1 - g[0]) * g[2], rel=1e-14)


def test_tree_matches_brute_force_paths():
    rng = np.random.default_rng(0)
    for _ in range(300):
        d, M = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        t = random_tree(rng, d, M)
        x = rng.uniform(-3, 3, M)
        p = brute_force_leaf_probs(t, x)
        assert np.allclose(leaf_probabilities(t, x), p, rtol=1e-12, atol=0)
        ref = p @ t.Q
        assert abs(tree_predict(t, x) - ref) <= 1e-12 * max(abs(ref), 1e-300) + 1e-15


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 7), st.integers(1, 6), st.integers(0, 2**31))
def test_leaf_probabilities_sum_to_one(depth, M, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, depth, M, scale=5.0)
    p = leaf_probabilities(t, rng.uniform(-3, 3, M))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert (p >= 0).all()


def test_forest_prediction_is_mean_of_trees():
    rng = np.random.default_rng(1)
    f = random_forest(rng, 5, 3, 4)
    x = rng.normal(size=4)
    assert forest_predict(f, x) == pytest.approx(np.mean([tree_predict(t, x) for t in f.trees]), rel=1e-13)


def test_forest_normalisation_applied():
    rng = np.random.default_rng(2)
    f = random_forest(rng, 3, 2, 4)
    f.x_mean, f.x_std = rng.normal(size=4), rng.uniform(0.5, 2, 4)
    f.y_mean, f.y_std = 3.0, 0.5
    x = rng.normal(size=4)
    xn = (x - f.x_mean) / f.x_std
    expect = 3.0 + 0.5 * np.mean([tree_predict(t, xn) for t in f.trees])
    assert forest_predict(f, x) == pytest.approx(expect, rel=1e-13)
    with pytest.raises(ValueError):
        forest_predict(f, np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1e6, 1e6))
def test_prediction_finite(seed, scale):
    rng = np.random.default_rng(seed)
    f = random_forest(rng, 3, 3, 5)
    assert np.isfinite(f.predict(rng.normal(size=(7, 5)) * scale)).all()


def test_zero_residual_gives_zero_gradient():
    rng = np.random.default_rng(3)
    f = random_forest(rng, 3, 2, 4)
    X = rng.normal(size=(6, 4))
    y = f.predict(X)
    value, g = backward(f, X, y)
    assert value == pytest.approx(0.0, abs=1e-28)
    assert all(np.abs(v).max() < 1e-14 for v in g.values())


def test_gradient_hand_example():
    f = Forest(np.zeros((1, 1, 2)), np.zeros((1, 1)), np.array([[0.0, 2.0]]))
    value, g = backward(f, np.zeros((1, 2)), np.zeros(1))
    assert value == pytest.approx(1.0)
    assert g["Q"][0, 0] == pytest.approx(1.0)
    assert g["Q"][0, 1] == pytest.approx(1.0)


def finite_difference_check(f, X, y, kind, composition, l1=0.0, eps=1e-5):
    _, grads = backward(f, X, y, kind, 1.0, composition, l1)
    worst = 0.0
    for name, arr in f.params().items():
        fd = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = batch_loss(f, X, y, kind, 1.0, composition, l1)
            arr[idx] = old - eps
            down = batch_loss(f, X, y, kind, 1.0, composition, l1)
            arr[idx] = old
            fd[idx] = (up - down) / (2 * eps)
        denom = max(np.abs(fd).max(), np.abs(grads[name]).max(), 1e-8)
        worst = max(worst, np.abs(fd - grads[name]).max() / denom)
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for trial in range(50):
        K, d, M = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        f = random_forest(rng, K, d, M)
        X = rng.uniform(-3, 3, (8, M))
        y = rng.normal(size=8)
        composition = "ensemble" if trial % 2 == 0 else "per_tree"
        assert finite_difference_check(f, X, y, "mse", composition) <= 1e-4


@pytest.mark.parametrize("kind", ["mae", "huber"])
def test_gradients_other_losses(kind):
    rng = np.random.default_rng(6)
    f = random_forest(rng, 2, 2, 3)
    X = rng.uniform(-3, 3, (10, 3))
    y = rng.normal(size=10) * 5     # residuals far from the kinks
    assert finite_difference_check(f, X, y, kind, "ensemble") <= 1e-4


def test_l1_gradient():
    rng = np.random.default_rng(7)
    f = random_forest(rng, 2, 2, 3)
    X = rng.uniform(-3, 3, (5, 3))
    y = rng.normal(size=5)
    assert finite_difference_check(f, X, y, "mse", "ensemble", l1=0.01) <= 1e-4


def test_loss_values():
    assert loss(3.0, 1.0, "mse") == 4.0
    assert loss(3.0, 1.0, "mae") == 2.0
    assert loss(3.0, 1.0, "huber", 1.0) == 1.5
    assert loss(1.5, 1.0, "huber", 1.0) == 0.125
    with pytest.raises(ValueError):
        loss(0.0, 0.0, "xent")


def test_init_forest():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(500, 6)) * 3 + 1
    y = rng.normal(size=500) + 4
    f = init_forest(X, y, 4, 3, np.random.default_rng(0))
    assert f.A.shape == (4, 7, 6) and f.Q.shape == (4, 8)
    assert np.abs(f.A).max() <= 1 / np.sqrt(6)
    assert not f.Q.any()
    assert np.allclose(f.predict(X), y.mean())
    with pytest.raises(ValueError):
        init_forest(X[:0], y[:0], 4, 3, rng)


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    f = random_forest(rng, 3, 3, 5)
    f.x_mean, f.x_std = rng.normal(size=5), rng.uniform(1, 2, 5)
    f.y_mean, f.y_std, f.loss_kind = 2.0, 3.0, "huber"
    path = tmp_path / "m.ddf"
    save_forest(f, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    g = load_forest(path)
    X = rng.normal(size=(20, 5))
    assert np.allclose(g.predict(X), f.predict(X), rtol=1e-13, atol=1e-13)
    assert g.loss_kind == "huber"
    assert forest_to_bytes(g) == raw


def test_model_file_rejects_bad_magic_and_size():
    rng = np.random.default_rng(10)
    raw = forest_to_bytes(random_forest(rng, 2, 2, 3))
    with pytest.raises(ValueError):
        forest_from_bytes(b"BADMAGIC" + raw[8:])
    with pytest.raises(ValueError):
        forest_from_bytes(raw[:-8])


def test_tree_shape_validation():
    with pytest.raises(ValueError):
        TreeParams(np.zeros((2, 3)), np.zeros(2), np.zeros(3))
