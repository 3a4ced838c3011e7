import numpy as np
import pytest

from wamkit.learn import (ConvNet, Forest, ForestParams, Mlp, SgdConfig,
                          TrainingDiverged, accuracy_metrics, conv_loss,
                          fit_convnet, fit_forest, fit_mlp, load_payload,
                          mlp_loss, oob_error, predict_convnet, predict_forest,
                          predict_mlp, save_payload)
from wamkit.learn.convnet import conv_gradients, init_convnet
from wamkit.learn.mlp import init_mlp, mlp_gradients
from wamkit.learn.tree import best_split


class TestForest:
    def test_constant_target(self):
        X = np.random.default_rng(0).standard_normal((20, 3))
        y = np.full(20, 7.5)
        f = fit_forest(X, y, ForestParams(n_trees=5, seed=1))
        assert np.allclose(predict_forest(f, X), 7.5)

    def test_single_tree_split_matches_bruteforce(self):
        # oracle: brute force over all (feature, midpoint-threshold) pairs
        X = np.array([[0.0, 5.0], [1.0, 4.0], [2.0, 3.0], [3.0, 1.0]])
        y = np.array([0.0, 0.1, 2.0, 2.1])

        def sse(v):
            return ((v - v.mean()) ** 2).sum() if len(v) else 0.0

        best = None
        for f in range(2):
            xs = np.sort(np.unique(X[:, f]))
            for lo, hi in zip(xs, xs[1:]):
                thr = 0.5 * (lo + hi)
                mask = X[:, f] <= thr
                if mask.sum() == 0 or mask.sum() == len(y):
                    continue
                score = sse(y[mask]) + sse(y[~mask])
                if best is None or score < best[0] - 1e-12:
                    best = (score, f, thr)
        oracle = (best[1], best[2])

        forest = fit_forest(X, y, ForestParams(n_trees=1, max_depth=1,
                                               min_leaf=1, mtry=2,
                                               bootstrap=False, seed=0))
        tree = forest.trees[0]
        assert (tree.feature[0], tree.threshold[0]) == pytest.approx(oracle)
        assert best_split(X, y, [0, 1], 1, "regression", 1) == pytest.approx(oracle)

    def test_oob_error_decreases_with_trees(self):
        # oracle: recompute OOB at both forest sizes
        rng = np.random.default_rng(2)
        X = rng.standard_normal((150, 4))
        y = X[:, 0] + 0.05 * rng.standard_normal(150)
        e1 = oob_error(fit_forest(X, y, ForestParams(n_trees=1, seed=3)), X, y)
        e50 = oob_error(fit_forest(X, y, ForestParams(n_trees=50, seed=3)), X, y)
        assert e50 < e1

    def test_prediction_invariant_to_tree_order(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((60, 3))
        y = rng.standard_normal(60)
        f = fit_forest(X, y, ForestParams(n_trees=7, seed=5))
        p0 = predict_forest(f, X)
        f.trees = f.trees[::-1]
        assert np.allclose(predict_forest(f, X), p0)

    def test_mirrored_training_gives_mirrored_prediction(self):
        # oracle: retrain on the mirrored data.  Full-feature scans and no
        # bootstrap so the split search is an exact deterministic scan;
        # random subspaces are consumed in DFS order, which mirroring
        # reverses, and bootstrap duplicates create near-tie split scores
        # whose prefix sums round differently under reversed accumulation.
        rng = np.random.default_rng(6)
        X = rng.standard_normal((80, 2))
        y = 3.0 * X[:, 0] + rng.standard_normal(80) * 0.01
        Xm = X.copy()
        Xm[:, 0] = -Xm[:, 0]
        params = ForestParams(n_trees=3, mtry=2, bootstrap=False, seed=7)
        f = fit_forest(X, y, params)
        fm = fit_forest(Xm, y, params)
        q = np.array([0.5, 0.2])
        qm = np.array([-0.5, 0.2])
        assert predict_forest(f, q) == pytest.approx(predict_forest(fm, qm))

    def test_classification_probs_sum_to_one(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((100, 3))
        y = (X[:, 0] > 0).astype(int)
        f = fit_forest(X, y, ForestParams(n_trees=15, seed=9), task="classification")
        probs = predict_forest(f, X)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert (probs >= 0).all()

    def test_dimension_mismatch_rejected(self):
        X = np.random.default_rng(1).standard_normal((10, 3))
        f = fit_forest(X, X[:, 0], ForestParams(n_trees=2, seed=0))
        with pytest.raises(ValueError):
            predict_forest(f, np.zeros(4))

    def test_determinism(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((50, 3))
        y = rng.standard_normal(50)
        a = fit_forest(X, y, ForestParams(n_trees=5, seed=11))
        b = fit_forest(X, y, ForestParams(n_trees=5, seed=11))
        assert np.allclose(predict_forest(a, X), predict_forest(b, X))


class TestMlp:
    def test_gradient_matches_finite_differences(self):
        # oracle: central finite differences of the loss
        rng = np.random.default_rng(0)
        mlp = init_mlp([2, 3, 2], "sigmoid", "classification", seed=1)
        X = rng.standard_normal((10, 2))
        y = rng.integers(0, 2, 10)
        _, dw, db = mlp_gradients(mlp, X, y)
        eps = 1e-6
        for k in range(len(mlp.weights)):
            for idx in np.ndindex(mlp.weights[k].shape):
                mlp.weights[k][idx] += eps
                lp = mlp_loss(mlp, X, y)
                mlp.weights[k][idx] -= 2 * eps
                lm = mlp_loss(mlp, X, y)
                mlp.weights[k][idx] += eps
                fd = (lp - lm) / (2 * eps)
                assert abs(fd - dw[k][idx]) <= 1e-4 * max(abs(fd), 1e-6)

    def test_gradient_regression_task(self):
        rng = np.random.default_rng(3)
        mlp = init_mlp([3, 4, 1], "relu", "regression", seed=2)
        X = rng.standard_normal((8, 3))
        y = rng.standard_normal(8)
        _, dw, _ = mlp_gradients(mlp, X, y)
        eps = 1e-6
        w = mlp.weights[0]
        for idx in np.ndindex(w.shape):
            w[idx] += eps
            lp = mlp_loss(mlp, X, y)
            w[idx] -= 2 * eps
            lm = mlp_loss(mlp, X, y)
            w[idx] += eps
            fd = (lp - lm) / (2 * eps)
            assert abs(fd - dw[0][idx]) <= 1e-4 * max(abs(fd), 1e-6)

    def test_zero_final_layer_gives_uniform(self):
        mlp = init_mlp([4, 5, 3], seed=0)
        mlp.weights[-1][:] = 0.0
        mlp.biases[-1][:] = 0.0
        probs = predict_mlp(mlp, np.random.default_rng(0).standard_normal((6, 4)))
        assert np.allclose(probs, 1.0 / 3.0)

    def test_xor_convergence(self):
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        y = np.array([0, 1, 1, 0])
        mlp, report = fit_mlp(X, y, [2, 8, 2],
                              SgdConfig(lr=0.5, momentum=0.9, epochs=5000, batch=4),
                              seed=3)
        pred = predict_mlp(mlp, X).argmax(axis=1)
        assert (pred == y).all()
        assert report.loss_curve[-1] < report.loss_curve[0]

    def test_softmax_outputs_are_distributions(self):
        mlp = init_mlp([3, 6, 4], seed=5)
        probs = predict_mlp(mlp, np.random.default_rng(1).standard_normal((20, 3)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert (probs >= 0).all()

    def test_determinism(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((30, 3))
        y = rng.integers(0, 2, 30)
        cfg = SgdConfig(epochs=20, batch=8)
        a, _ = fit_mlp(X, y, [3, 5, 2], cfg, seed=7)
        b, _ = fit_mlp(X, y, [3, 5, 2], cfg, seed=7)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_divergence_reported(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((20, 2)) * 50
        y = rng.standard_normal(20) * 1e6
        with pytest.raises(TrainingDiverged):
            fit_mlp(X, y, [2, 8, 1], SgdConfig(lr=50.0, epochs=200, batch=4),
                    task="regression", seed=9)


class TestConvNet:
    def test_gradient_check_toy_net(self):
        # oracle: central finite differences on an 8x8x1 toy net
        rng = np.random.default_rng(0)
        net = init_convnet((8, 8, 1), 3, f1=2, f2=3, dense=8, seed=2)
        imgs = rng.standard_normal((4, 8, 8, 1))
        labs = rng.integers(0, 3, 4)
        _, grads = conv_gradients(net, imgs, labs)
        eps = 1e-6
        check_rng = np.random.default_rng(1)
        for k, p in enumerate(net.params()):
            flat = p.reshape(-1)
            picks = check_rng.choice(flat.size, size=min(12, flat.size),
                                     replace=False)
            for j in picks:
                flat[j] += eps
                lp = conv_loss(net, imgs, labs)
                flat[j] -= 2 * eps
                lm = conv_loss(net, imgs, labs)
                flat[j] += eps
                fd = (lp - lm) / (2 * eps)
                an = grads[k].reshape(-1)[j]
                assert abs(fd - an) <= 1e-3 * max(abs(fd), 1e-5)

    def test_left_right_brightness_task(self):
        rng = np.random.default_rng(3)
        n = 80
        imgs = 0.1 * rng.standard_normal((n, 8, 8, 1))
        labs = rng.integers(0, 2, n)
        for i in range(n):
            if labs[i] == 0:
                imgs[i, :, :4, 0] += 1.0
            else:
                imgs[i, :, 4:, 0] += 1.0
        net, _ = fit_convnet(imgs, labs,
                             SgdConfig(lr=0.05, momentum=0.9, epochs=15, batch=16),
                             f1=4, f2=4, dense=16, seed=4)
        pred = predict_convnet(net, imgs).argmax(axis=1)
        assert (pred == labs).mean() >= 0.99

    def test_training_determinism(self):
        rng = np.random.default_rng(5)
        imgs = rng.standard_normal((20, 8, 8, 1))
        labs = rng.integers(0, 2, 20)
        cfg = SgdConfig(lr=0.01, epochs=3, batch=8)
        a, _ = fit_convnet(imgs, labs, cfg, f1=2, f2=2, dense=8, seed=6)
        b, _ = fit_convnet(imgs, labs, cfg, f1=2, f2=2, dense=8, seed=6)
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa, pb)

    def test_shape_mismatch_rejected(self):
        net = init_convnet((8, 8, 1), 2, f1=2, f2=2, dense=8, seed=0)
        with pytest.raises(ValueError):
            predict_convnet(net, np.zeros((2, 16, 16, 1)))


class TestMetrics:
    def test_perfect_is_100(self):
        assert accuracy_metrics([1, 2, 3], [1, 2, 3], "classification") == 100.0
        assert accuracy_metrics(np.array([1.0, 2.0]), np.array([1.0, 2.0]),
                                "regression") == 100.0

    def test_single_pair_formula(self):
        assert accuracy_metrics(np.array([99.0]), np.array([100.0]),
                                "regression") == pytest.approx(99.0)

    def test_scale_invariance(self):
        pred = np.array([1.1, 1.9, 3.2])
        truth = np.array([1.0, 2.0, 3.0])
        a = accuracy_metrics(pred, truth, "regression")
        b = accuracy_metrics(7 * pred, 7 * truth, "regression")
        assert a == pytest.approx(b)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy_metrics(np.array([]), np.array([]), "regression")


class TestContainer:
    def test_payload_round_trip(self, tmp_path):
        path = tmp_path / "model.npz"
        meta = {"kind": "test", "seed": 42, "params": {"depth": 3}}
        arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.zeros(3)}
        save_payload(path, meta, arrays)
        meta2, arrays2 = load_payload(path)
        assert meta2["seed"] == 42
        assert meta2["params"]["depth"] == 3
        assert np.array_equal(arrays2["w"], arrays["w"])
