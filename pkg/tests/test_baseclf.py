import numpy as np
import pytest

from bichunter.baseclf import ClassifierError, ClassifierSpec, fit, predict_proba


def separable_clusters(n_per=20, seed=0):
    """Two clusters around (+2, +2) and (-2, -2); a separating hyperplane is
    x + y = 0, so they are linearly separable by construction."""
    rng = np.random.RandomState(seed)
    a = rng.randn(n_per, 2) * 0.3 + 2.0
    b = rng.randn(n_per, 2) * 0.3 - 2.0
    features = np.vstack([a, b])
    labels = np.array([0] * n_per + [1] * n_per)
    assert ((features @ np.ones(2) > 0) == (labels == 0)).all()
    return features, labels


class TestSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ClassifierError):
            ClassifierSpec(kind="tree")

    def test_rejects_bad_hyperparameters(self):
        with pytest.raises(ClassifierError):
            ClassifierSpec(learning_rate=0.0)
        with pytest.raises(ClassifierError):
            ClassifierSpec(iterations=0)
        with pytest.raises(ClassifierError):
            ClassifierSpec(k=0)


class TestLogisticRegression:
    def test_separable_clusters_fit_perfectly(self):
        features, labels = separable_clusters()
        model = fit(ClassifierSpec(iterations=300, learning_rate=0.5, l2=1e-4),
                    features, labels)
        predicted = predict_proba(model, features).argmax(axis=1)
        assert (predicted == labels).all()

    def test_zero_weights_give_uniform_rows(self):
        features, labels = separable_clusters(n_per=5)
        model = fit(ClassifierSpec(iterations=1, learning_rate=1e-9),
                    features, labels)
        model.weights[:] = 0.0
        model.bias[:] = 0.0
        probs = model.predict_proba(features)
        assert np.allclose(probs, 0.5)

    def test_loss_monotonically_nonincreasing(self):
        features, labels = separable_clusters(n_per=30, seed=3)
        model = fit(ClassifierSpec(iterations=200, learning_rate=0.3, l2=1e-3),
                    features, labels)
        trace = np.array(model.loss_trace)
        assert (np.diff(trace) <= 1e-12).all()

    def test_deterministic(self):
        features, labels = separable_clusters(seed=5)
        spec = ClassifierSpec(iterations=50)
        m1 = fit(spec, features, labels)
        m2 = fit(spec, features, labels)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.bias, m2.bias)

    def test_rows_stochastic(self):
        features, labels = separable_clusters()
        model = fit(ClassifierSpec(iterations=100), features, labels)
        probs = predict_proba(model, np.vstack([features, features * 10]))
        assert (probs >= 0).all()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_dimension_mismatch(self):
        features, labels = separable_clusters()
        model = fit(ClassifierSpec(iterations=10), features, labels)
        with pytest.raises(ClassifierError, match="dimension"):
            model.predict_proba(np.zeros((3, 5)))


class TestKnn:
    def test_query_on_training_point_k1_smoothing(self):
        # votes (1, 0), add-one smoothing over k + m -> (2/3, 1/3)
        features = np.array([[0.0, 0.0], [5.0, 5.0]])
        labels = np.array([0, 1])
        model = fit(ClassifierSpec(kind="knn", k=1), features, labels)
        probs = model.predict_proba(np.array([[0.0, 0.0]]))
        assert np.allclose(probs, [[2 / 3, 1 / 3]])

    def test_k_equals_n_constant_everywhere(self):
        rng = np.random.RandomState(1)
        features = rng.randn(9, 3)
        labels = np.array([0, 0, 0, 0, 0, 0, 1, 1, 1])
        model = fit(ClassifierSpec(kind="knn", k=9), features, labels)
        probs = model.predict_proba(rng.randn(20, 3))
        # smoothed class frequencies (votes + 1) / (k + m), same for any query
        expected = np.array([(6 + 1) / 11, (3 + 1) / 11])
        assert np.allclose(probs, expected)

    def test_rows_stochastic(self):
        rng = np.random.RandomState(2)
        features = rng.randn(30, 4)
        labels = rng.randint(0, 3, size=30)
        labels[:3] = [0, 1, 2]
        model = fit(ClassifierSpec(kind="knn", k=5), features, labels)
        probs = model.predict_proba(rng.randn(10, 4))
        assert (probs > 0).all()  # smoothing forbids hard zeros
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_k_larger_than_training_set(self):
        features = np.zeros((3, 2))
        labels = np.array([0, 1, 0])
        with pytest.raises(ClassifierError, match="exceeds"):
            fit(ClassifierSpec(kind="knn", k=4), features, labels)


class TestFitValidation:
    def test_single_class_rejected(self):
        with pytest.raises(ClassifierError, match="two classes"):
            fit(ClassifierSpec(), np.zeros((4, 2)), np.zeros(4, dtype=int))

    def test_empty_class_rejected(self):
        with pytest.raises(ClassifierError, match="zero samples"):
            fit(ClassifierSpec(), np.zeros((4, 2)), np.array([0, 0, 2, 2]))

    def test_non_finite_features_rejected(self):
        features = np.zeros((4, 2))
        features[1, 1] = np.nan
        with pytest.raises(ClassifierError, match="finite"):
            fit(ClassifierSpec(), features, np.array([0, 0, 1, 1]))
