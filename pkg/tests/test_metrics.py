import numpy as np
import pytest

from oracles_for_tests import ConstantOracle, MeanOracle
from saliencybench.errors import TooFewSteps, ZeroConfidence
from saliencybench.metrics import (
    Curve,
    Direction,
    MetricKind,
    auc,
    average_drop,
    correlation_score,
    deletion_curve,
    evaluate_matrix,
    insertion_curve,
    load_matrix_csv,
    pearson,
    save_matrix_csv,
    score_all_metrics,
)
from saliencybench.oracles import ScoringOracle
from saliencybench.perturb import BlurSpec, PatchGrid, gaussian_blur, top_k_positions
from saliencybench.rng import Rng


class ScriptedOracle(ScoringOracle):
    """Returns preset probability rows in scoring order."""

    num_classes = 2

    def __init__(self, rows):
        self.rows = list(rows)
        self.cursor = 0

    def score_batch(self, images):
        take = self.rows[self.cursor:self.cursor + len(images)]
        self.cursor += len(images)
        return np.array(take, dtype=np.float64)


def rand_image(h=4, w=4, c=3, seed=1):
    r = Rng(seed)
    return np.array([r.next_float() for _ in range(h * w * c)],
                    dtype=np.float32).reshape(h, w, c)


GRID = PatchGrid(2, 2, 4, 4)
BLUR = BlurSpec(kernel=3, sigma=1.0)


class TestAverageDrop:
    s = np.array([[0.9, 0.1], [0.2, 0.7]], dtype=np.float32)

    def test_insensitive_oracle_gives_zero(self):
        img = rand_image()
        assert average_drop(ConstantOracle([0.8, 0.2]), img, self.s,
                            MetricKind.AD, 0) == 0.0

    def test_clamp_when_confidence_rises(self):
        oracle = ScriptedOracle([[0.8, 0.2], [0.9, 0.1]])
        assert average_drop(oracle, rand_image(), self.s, MetricKind.AD, 0) == 0.0

    def test_add_arithmetic(self):
        oracle = ScriptedOracle([[0.8, 0.2], [0.2, 0.8]])
        value = average_drop(oracle, rand_image(), self.s, MetricKind.ADD, 0)
        assert value == pytest.approx(0.75)

    def test_add_can_go_negative(self):
        oracle = ScriptedOracle([[0.5, 0.5], [0.6, 0.4]])
        value = average_drop(oracle, rand_image(), self.s, MetricKind.ADD, 0)
        assert value == pytest.approx(-0.2)

    def test_zero_confidence_error(self):
        oracle = ScriptedOracle([[0.0, 1.0], [0.5, 0.5]])
        with pytest.raises(ZeroConfidence):
            average_drop(oracle, rand_image(), self.s, MetricKind.AD, 0)


class TestCurves:
    s = np.array([[0.9, 0.1], [0.2, 0.7]], dtype=np.float32)

    def test_constant_oracle_flat_curves(self):
        img = rand_image()
        for cumulative in (True, False):
            del_curve = deletion_curve(ConstantOracle([0.3, 0.7]), img, self.s,
                                       GRID, cumulative, 0)
            ins_curve = insertion_curve(ConstantOracle([0.3, 0.7]), img, self.s,
                                        GRID, cumulative, 0, BLUR)
            assert np.allclose(del_curve.confidences, 0.3)
            assert np.allclose(ins_curve.confidences, 0.3)
            assert len(del_curve.confidences) == 5

    def test_cumulative_deletion_ends_at_black_image(self):
        img = rand_image(seed=3)
        oracle = MeanOracle()
        curve = deletion_curve(oracle, img, self.s, GRID, True, 0)
        assert curve.confidences[-1] == pytest.approx(0.0, abs=1e-7)
        assert curve.confidences[0] == pytest.approx(float(img.mean()), abs=1e-6)

    def test_cumulative_insertion_ends_at_original(self):
        img = rand_image(seed=4)
        oracle = MeanOracle()
        curve = insertion_curve(oracle, img, self.s, GRID, True, 0, BLUR)
        assert curve.confidences[-1] == pytest.approx(float(img.mean()), abs=1e-6)
        blurred = gaussian_blur(img, BLUR.sigma, BLUR.kernel)
        assert curve.confidences[0] == pytest.approx(float(blurred.mean()), abs=1e-6)

    def test_deletion_matches_hand_enumeration(self):
        img = rand_image(seed=5)
        order = top_k_positions(self.s, 4)
        expected = [float(img.mean())]
        work = img.copy()
        for (ci, cj) in order:
            work = work.copy()
            work[2 * ci:2 * ci + 2, 2 * cj:2 * cj + 2, :] = 0.0
            expected.append(float(work.mean()))
        curve = deletion_curve(MeanOracle(), img, self.s, GRID, True, 0)
        assert np.allclose(curve.confidences, expected, atol=1e-6)

    def test_non_cumulative_deletion_masks_one_patch(self):
        img = rand_image(seed=6)
        order = top_k_positions(self.s, 4)
        expected = [float(img.mean())]
        for (ci, cj) in order:
            work = img.copy()
            work[2 * ci:2 * ci + 2, 2 * cj:2 * cj + 2, :] = 0.0
            expected.append(float(work.mean()))
        curve = deletion_curve(MeanOracle(), img, self.s, GRID, False, 0)
        assert np.allclose(curve.confidences, expected, atol=1e-6)

    def test_insertion_matches_hand_enumeration(self):
        img = rand_image(seed=7)
        blurred = gaussian_blur(img, BLUR.sigma, BLUR.kernel)
        order = top_k_positions(self.s, 4)
        expected = [float(blurred.mean())]
        work = blurred.copy()
        for (ci, cj) in order:
            work = work.copy()
            sl = (slice(2 * ci, 2 * ci + 2), slice(2 * cj, 2 * cj + 2))
            work[sl] = img[sl]
            expected.append(float(work.mean()))
        curve = insertion_curve(MeanOracle(), img, self.s, GRID, True, 0, BLUR)
        assert np.allclose(curve.confidences, expected, atol=1e-6)

    def test_least_salient_first_order(self):
        img = rand_image(seed=8)
        most = deletion_curve(MeanOracle(), img, self.s, GRID, True, 0, "most")
        least = deletion_curve(MeanOracle(), img, self.s, GRID, True, 0, "least")
        assert most.patch_order == least.patch_order[::-1]

    def test_monotone_oracle_superset_masking_lowers_curve(self):
        # masking strictly more pixels can only lower a mean-monotone oracle
        img = rand_image(seed=9)
        curve = deletion_curve(MeanOracle(), img, self.s, GRID, True, 0)
        order = top_k_positions(self.s, 4)
        for t in range(1, 4):
            work = img.copy()
            for (ci, cj) in order[:t + 1]:  # superset: one extra patch
                work[2 * ci:2 * ci + 2, 2 * cj:2 * cj + 2, :] = 0.0
            assert curve.confidences[t] >= float(work.mean()) - 1e-9


class TestAuc:
    @staticmethod
    def curve(fractions, confidences):
        steps = len(fractions) - 1
        return Curve(np.asarray(fractions, dtype=np.float64),
                     np.asarray(confidences, dtype=np.float64),
                     [(0, i) for i in range(steps)],
                     np.zeros(steps))

    def test_flat_curve(self):
        assert auc(self.curve([0, 0.5, 1], [1.0, 1.0, 1.0])) == pytest.approx(1.0)

    def test_linear_descent(self):
        assert auc(self.curve([0, 0.5, 1], [1.0, 0.5, 0.0])) == pytest.approx(0.5)

    def test_hand_trapezoid(self):
        assert auc(self.curve([0, 0.5, 1], [1.0, 0.6, 0.2])) == pytest.approx(0.6)

    def test_two_point_curve_is_endpoint_mean(self):
        assert auc(self.curve([0, 1], [0.9, 0.1])) == pytest.approx(0.5)


class TestCorrelation:
    @staticmethod
    def curve_from(confidences, values):
        n = len(values)
        return Curve(np.linspace(0, 1, n + 1), np.asarray(confidences, dtype=np.float64),
                     [(0, i) for i in range(n)], np.asarray(values, dtype=np.float64))

    def test_proportional_deltas_give_one(self):
        values = np.array([4.0, 3.0, 2.0, 1.0])
        conf = [1.0]
        for v in values:
            conf.append(conf[-1] - 0.1 * v)
        r = correlation_score(self.curve_from(conf, values), MetricKind.DC)
        assert r.value == pytest.approx(1.0)
        assert not r.degenerate

    def test_anti_proportional_gives_minus_one(self):
        values = np.array([4.0, 3.0, 2.0, 1.0])
        conf = [0.1]
        for v in values:
            conf.append(conf[-1] + 0.05 * v)  # confidence rises on deletion
        r = correlation_score(self.curve_from(conf, values), MetricKind.DC)
        assert r.value == pytest.approx(-1.0)

    def test_hand_pearson_four_steps(self):
        deltas = np.array([0.3, 0.1, 0.4, 0.2])
        values = np.array([0.9, 0.2, 0.8, 0.1])
        da = deltas - deltas.mean()
        db = values - values.mean()
        expected = (da * db).sum() / np.sqrt((da * da).sum() * (db * db).sum())
        conf = [1.0]
        for d in deltas:
            conf.append(conf[-1] - d)
        r = correlation_score(self.curve_from(conf, values), MetricKind.DC)
        assert r.value == pytest.approx(expected, abs=1e-12)

    def test_non_cumulative_uses_start_reference(self):
        conf = [0.8, 0.5, 0.7, 0.6, 0.2]
        values = [0.9, 0.5, 0.6, 0.1]
        r = correlation_score(self.curve_from(conf, values), MetricKind.DCNC)
        deltas = 0.8 - np.array(conf[1:])
        expected = pearson(deltas, np.array(values)).value
        assert r.value == pytest.approx(expected, abs=1e-12)

    def test_constant_vector_flagged_zero(self):
        r = correlation_score(self.curve_from([0.5, 0.5, 0.5], [0.2, 0.9]),
                              MetricKind.DC)
        assert r.value == 0.0 and r.degenerate

    def test_too_few_steps(self):
        curve = Curve(np.array([0.0, 1.0]), np.array([0.5, 0.4]), [(0, 0)],
                      np.array([1.0]))
        with pytest.raises(TooFewSteps):
            correlation_score(curve, MetricKind.DC)

    def test_one_cell_grid_raises_not_silent(self):
        grid1 = PatchGrid(1, 1, 4, 4)
        img = rand_image()
        curve = deletion_curve(MeanOracle(), img, np.ones((1, 1), dtype=np.float32),
                               grid1, True, 0)
        with pytest.raises(TooFewSteps):
            correlation_score(curve, MetricKind.DC)


class TestDirections:
    def test_direction_table(self):
        assert MetricKind.AD.direction is Direction.LOWER_BETTER
        assert MetricKind.DAUC.direction is Direction.LOWER_BETTER
        for kind in (MetricKind.ADD, MetricKind.IAUC, MetricKind.DC,
                     MetricKind.IC, MetricKind.DCNC, MetricKind.ICNC):
            assert kind.direction is Direction.HIGHER_BETTER


class TestEvaluateMatrix:
    def methods(self, n, seeds):
        out = []
        for label, seed in seeds:
            r = Rng(seed)
            maps = [np.array([r.next_float() for _ in range(4)],
                             dtype=np.float32).reshape(2, 2) for _ in range(n)]
            out.append((label, maps))
        return out

    def test_single_method_matrix(self):
        images = [rand_image(seed=i) for i in range(3)]
        mat = evaluate_matrix(MeanOracle(), images, [0, 0, 0],
                              self.methods(3, [("m", 5)]), MetricKind.DAUC, GRID,
                              BLUR)
        assert mat.values.shape == (3, 1)

    def test_identical_methods_identical_columns(self):
        images = [rand_image(seed=i) for i in range(4)]
        methods = self.methods(4, [("a", 5), ("b", 5)])
        mat = evaluate_matrix(MeanOracle(), images, [0] * 4, methods,
                              MetricKind.DC, GRID, BLUR)
        assert np.array_equal(mat.values[:, 0], mat.values[:, 1])

    def test_permuting_methods_permutes_columns(self):
        images = [rand_image(seed=i) for i in range(3)]
        methods = self.methods(3, [("a", 5), ("b", 6), ("c", 7)])
        mat = evaluate_matrix(MeanOracle(), images, [0] * 3, methods,
                              MetricKind.IAUC, GRID, BLUR)
        permuted = evaluate_matrix(MeanOracle(), images, [0] * 3,
                                   [methods[2], methods[0], methods[1]],
                                   MetricKind.IAUC, GRID, BLUR)
        assert np.allclose(permuted.values[:, 1], mat.values[:, 0])
        assert np.allclose(permuted.values[:, 0], mat.values[:, 2])

    def test_cell_error_carries_context(self):
        images = [rand_image(seed=1)]
        oracle = ScriptedOracle([[0.0, 1.0], [0.5, 0.5]])
        with pytest.raises(ZeroConfidence, match="method bad"):
            evaluate_matrix(oracle, images, [0], self.methods(1, [("bad", 5)]),
                            MetricKind.AD, GRID, BLUR)

    def test_threads_do_not_change_values(self):
        images = [rand_image(seed=i) for i in range(4)]
        methods = self.methods(4, [("a", 5), ("b", 6)])
        from saliencybench.metrics import evaluate_matrices
        serial = evaluate_matrices(MeanOracle(), images, [0] * 4, methods, GRID,
                                   blur=BLUR, threads=1)
        parallel = evaluate_matrices(MeanOracle(), images, [0] * 4, methods, GRID,
                                     blur=BLUR, threads=3)
        for kind in serial:
            assert np.array_equal(serial[kind].values, parallel[kind].values)

    def test_csv_round_trip(self, tmp_path):
        images = [rand_image(seed=i) for i in range(3)]
        mat = evaluate_matrix(MeanOracle(), images, [0] * 3,
                              self.methods(3, [("a", 5), ("b", 6)]),
                              MetricKind.ICNC, GRID, BLUR)
        save_matrix_csv(mat, tmp_path / "m.csv")
        loaded = load_matrix_csv(tmp_path / "m.csv")
        assert loaded.kind is mat.kind
        assert loaded.method_labels == mat.method_labels
        assert np.array_equal(loaded.values, mat.values)

    def test_score_all_metrics_consistent_with_singles(self):
        img = rand_image(seed=11)
        s = np.array([[0.9, 0.1], [0.2, 0.7]], dtype=np.float32)
        bundle = score_all_metrics(MeanOracle(), img, s, GRID, 0, blur=BLUR)
        single_dauc = auc(deletion_curve(MeanOracle(), img, s, GRID, True, 0))
        single_iauc = auc(insertion_curve(MeanOracle(), img, s, GRID, True, 0, BLUR))
        assert bundle.values[MetricKind.DAUC] == pytest.approx(single_dauc)
        assert bundle.values[MetricKind.IAUC] == pytest.approx(single_iauc)
        assert set(bundle.values) == set(MetricKind)
