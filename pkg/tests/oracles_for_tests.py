"""Synthetic oracles shared by the metric and saliency tests."""

import numpy as np

from saliencybench.oracles import ScoringOracle


class ConstantOracle(ScoringOracle):
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.num_classes = len(self.probs)

    def score_batch(self, images):
        return np.tile(self.probs, (len(images), 1))


class MeanOracle(ScoringOracle):
    """Class-0 confidence equals the mean pixel value; class 1 the rest."""

    num_classes = 2

    def score_batch(self, images):
        out = np.zeros((len(images), 2), dtype=np.float64)
        for i, img in enumerate(images):
            m = float(np.clip(np.asarray(img, dtype=np.float64).mean(), 0.0, 1.0))
            out[i] = (m, 1.0 - m)
        return out


class PatchMeanOracle(ScoringOracle):
    """Class-0 score is the mean of one designated pixel block."""

    num_classes = 2

    def __init__(self, rows, cols):
        self.rows = rows
        self.cols = cols

    def score_batch(self, images):
        out = np.zeros((len(images), 2), dtype=np.float64)
        for i, img in enumerate(images):
            m = float(np.asarray(img, dtype=np.float64)[self.rows, self.cols, :].mean())
            out[i] = (m, 1.0 - m)
        return out


class LinearScorerOracle(ScoringOracle):
    """Purely linear scalar scorer y_0 = <w, x>; gradient is w everywhere."""

    num_classes = 2
    has_gradients = True

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)

    def score_batch(self, images):
        out = np.zeros((len(images), 2), dtype=np.float64)
        for i, img in enumerate(images):
            y = float((self.weights * np.asarray(img, dtype=np.float64)).sum())
            out[i] = (y, 1.0 - y)
        return out

    def confidence_gradient(self, image, class_index):
        if class_index == 0:
            return self.weights.copy()
        return -self.weights.copy()


class CornerVisibilityOracle(ScoringOracle):
    """Scores 1 when the top-left pixel is bright (cell (0,0) kept)."""

    num_classes = 2

    def score_batch(self, images):
        out = np.zeros((len(images), 2), dtype=np.float64)
        for i, img in enumerate(images):
            visible = 1.0 if float(img[0, 0, 0]) > 0.5 else 0.0
            out[i] = (visible, 1.0 - visible)
        return out


class CountingOracle(ScoringOracle):
    """Wraps another oracle and counts how many images were scored."""

    def __init__(self, inner: ScoringOracle):
        self.inner = inner
        self.num_classes = inner.num_classes
        self.calls = 0

    def score_batch(self, images):
        self.calls += len(images)
        return self.inner.score_batch(images)
