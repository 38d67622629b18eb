import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acir.errors import (
    DivergedError,
    EmptyClassError,
    LengthMismatchError,
    ZeroVarianceError,
)
from acir.loss import (
    ClassWeights,
    LossConfig,
    class_weights,
    contrastive_loss,
    optimize_embeddings,
    pearson_similarity,
    quantization_loss,
    weighted_contrastive_gradient,
    weighted_contrastive_loss,
)

CFG = LossConfig()


def random_batch(rng, b=None, k=None, n_classes=3):
    """Embeddings in (-0.9, 0.9), imbalanced labels, random symmetric H."""
    b = b or int(rng.choice([4, 8]))
    k = k or int(rng.choice([8, 16]))
    labels = rng.integers(0, n_classes, size=b)
    labels[:n_classes] = np.arange(n_classes)  # every class present
    x = rng.uniform(-0.9, 0.9, size=(b, k))
    upper = np.triu(rng.uniform(0.0, 1.0, size=(b, b)), 1)
    consistency = upper + upper.T + np.eye(b)
    return x, labels, consistency


def straight_line_loss(x, labels, consistency, weight_vec, cfg):
    """Independent per-pair transcription of the objective (loops + corrcoef)."""
    b = x.shape[0]
    total = 0.0
    for i in range(b):
        for j in range(b):
            if i == j:
                continue
            s = 1.0 if labels[i] == labels[j] else 0.0
            corr = np.corrcoef(x[i], x[j])[0, 1]
            p = min(max((1.0 + corr) / 2.0, cfg.eps), 1.0 - cfg.eps)
            pair = -consistency[i, j] * s * math.log(p) - math.exp(
                consistency[i, j]
            ) * (1.0 - s) * math.log(1.0 - p)
            total += weight_vec[labels[i]] * weight_vec[labels[j]] * pair
    total /= b * b - b
    quant = sum(math.log(cfg.lam - np.mean(np.abs(x[i]))) for i in range(b)) / b
    return total + cfg.alpha * quant


class TestPearsonSimilarity:
    def test_self_correlation(self):
        x = [0.5, -0.5, 0.5, -0.5]
        assert pearson_similarity(x, x) == 1.0

    def test_exact_negative(self):
        assert pearson_similarity([1, 2, 3], [3, 2, 1]) == -1.0

    def test_orthogonal_patterns(self):
        assert pearson_similarity([1, 0, 1, 0], [1, 1, 0, 0]) == 0.0

    def test_symmetry(self, rng):
        x, y = rng.normal(size=16), rng.normal(size=16)
        assert pearson_similarity(x, y) == pearson_similarity(y, x)

    @given(
        scale=st.floats(0.01, 100.0),
        offset=st.floats(-50.0, 50.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_positive_affine_invariance(self, scale, offset):
        rng = np.random.default_rng(99)
        x, y = rng.normal(size=12), rng.normal(size=12)
        base = pearson_similarity(x, y)
        assert pearson_similarity(scale * x + offset, y) == pytest.approx(base, abs=1e-12)

    def test_bounded(self, rng):
        for _ in range(100):
            v = pearson_similarity(rng.normal(size=8), rng.normal(size=8))
            assert -1.0 <= v <= 1.0

    def test_constant_vector_rejected(self):
        with pytest.raises(ZeroVarianceError):
            pearson_similarity([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            pearson_similarity([1.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(LengthMismatchError):
            pearson_similarity([1.0], [2.0])


class TestContrastiveLoss:
    def test_perfect_positive_pair(self):
        assert contrastive_loss(1.0, 1, eps=1e-6) == pytest.approx(1e-6, rel=1e-3)

    def test_separated_negative_pair(self):
        assert contrastive_loss(-1.0, 0, eps=1e-6) == pytest.approx(1e-6, rel=1e-3)

    def test_uninformative_positive(self):
        assert contrastive_loss(0.0, 1) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_monotone_in_similarity(self):
        grid = np.linspace(-1.0, 1.0, 101)
        pos = [contrastive_loss(s, 1) for s in grid]
        neg = [contrastive_loss(s, 0) for s in grid]
        assert all(a >= b for a, b in zip(pos, pos[1:]))
        assert all(a <= b for a, b in zip(neg, neg[1:]))

    def test_nonnegative(self, rng):
        for _ in range(200):
            s = rng.uniform(-1, 1)
            assert contrastive_loss(s, int(rng.integers(0, 2))) >= 0.0


class TestQuantizationLoss:
    def test_fully_binarised(self):
        assert quantization_loss(np.ones(8)) == 0.0
        assert quantization_loss([1.0, -1.0, 1.0, -1.0]) == 0.0

    def test_all_zero(self):
        assert quantization_loss(np.zeros(8)) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_nonnegative_and_zero_only_at_corners(self, rng):
        for _ in range(100):
            h = rng.uniform(-1, 1, 16)
            value = quantization_loss(h)
            assert value >= 0.0
            if not np.allclose(np.abs(h), 1.0):
                assert value > 0.0


class TestClassWeights:
    def test_balanced_population(self):
        cw = class_weights([0] * 20 + [1] * 20 + [2] * 20, 3)
        np.testing.assert_allclose(cw.weights, 1.0)
        np.testing.assert_allclose(cw.batch_matrix([0, 1, 2, 0]), 1.0)

    def test_imbalanced_three_classes(self):
        cw = class_weights([0] * 10 + [1] * 20 + [2] * 30, 3)
        np.testing.assert_allclose(cw.weights, [2.0, 1.0, 2.0 / 3.0])

    def test_imbalanced_two_classes(self):
        cw = class_weights([0] + [1] * 3, 2)
        np.testing.assert_allclose(cw.weights, [2.0, 2.0 / 3.0])

    def test_matrix_is_outer_product(self):
        cw = class_weights([0, 0, 1], 2)
        np.testing.assert_allclose(cw.matrix, np.outer(cw.weights, cw.weights))
        np.testing.assert_allclose(cw.matrix, cw.matrix.T)

    def test_empty_class_rejected(self):
        with pytest.raises(EmptyClassError):
            class_weights([0, 0, 2, 2], 3)

    def test_batch_expansion_uses_labels(self):
        cw = ClassWeights(weights=np.array([2.0, 0.5]))
        expanded = cw.batch_matrix([1, 0, 1])
        np.testing.assert_allclose(
            expanded, [[0.25, 1.0, 0.25], [1.0, 4.0, 1.0], [0.25, 1.0, 0.25]]
        )


class TestWeightedContrastiveLoss:
    def test_perfect_positive_pair_leaves_only_quantisation(self, rng):
        x = np.tile(rng.uniform(-0.9, 0.9, 8), (2, 1))
        labels = np.array([0, 0])
        consistency = np.ones((2, 2))
        loss = weighted_contrastive_loss(x, labels, consistency, cfg=CFG)
        quant = CFG.alpha * quantization_loss(x[0], CFG)
        assert loss == pytest.approx(quant, abs=1e-5)

    def test_separated_negatives_leave_only_quantisation(self, rng):
        base = rng.uniform(-0.9, 0.9, 8)
        x = np.stack([base, -base + 2 * base.mean()])  # exact anti-correlation
        labels = np.array([0, 1])
        consistency = np.ones((2, 2)) * 0.5 + 0.5 * np.eye(2)
        loss = weighted_contrastive_loss(x, labels, consistency, cfg=CFG)
        quant = CFG.alpha * (
            quantization_loss(x[0], CFG) + quantization_loss(x[1], CFG)
        ) / 2.0
        assert loss == pytest.approx(quant, abs=1e-4)

    def test_matches_straight_line_transcription(self, rng):
        for _ in range(50):
            x, labels, consistency = random_batch(rng)
            weights = class_weights(labels, labels.max() + 1)
            expected = straight_line_loss(x, labels, consistency, weights.weights, CFG)
            actual = weighted_contrastive_loss(x, labels, consistency, cfg=CFG)
            assert actual == pytest.approx(expected, abs=1e-10)

    def test_uniform_h_reduces_to_plain_contrastive_plus_quant(self, rng):
        """With H = 1 everywhere and uniform weights the structure-aware
        objective collapses to mean pair cross-entropy + alpha * mean quant."""
        for _ in range(50):
            b, k = int(rng.choice([4, 8])), int(rng.choice([8, 16]))
            x = rng.uniform(-0.9, 0.9, size=(b, k))
            labels = rng.integers(0, 2, size=b)
            labels[0], labels[1] = 0, 1
            consistency = np.ones((b, b))
            uniform = ClassWeights(weights=np.ones(int(labels.max()) + 1))

            loss = weighted_contrastive_loss(
                x, labels, consistency, weights=uniform, cfg=CFG
            )
            pair_terms = [
                contrastive_loss(
                    pearson_similarity(x[i], x[j]), labels[i] == labels[j], CFG.eps
                )
                for i in range(b)
                for j in range(b)
                if i != j
            ]
            neg_scale = math.e  # e^H with H = 1 scales every negative term
            expected_pairs = [
                t if labels[i] == labels[j] else t * neg_scale
                for t, (i, j) in zip(
                    pair_terms,
                    [(i, j) for i in range(b) for j in range(b) if i != j],
                )
            ]
            expected = np.mean(expected_pairs) + CFG.alpha * np.mean(
                [quantization_loss(row, CFG) for row in x]
            )
            assert loss == pytest.approx(expected, abs=1e-10)

    def test_constant_embedding_raises_without_jitter(self):
        x = np.array([[0.5, 0.5, 0.5, 0.5], [0.1, -0.2, 0.3, -0.4]])
        with pytest.raises(ZeroVarianceError):
            weighted_contrastive_loss(x, [0, 1], np.ones((2, 2)), cfg=CFG)

    def test_jitter_guards_constant_embeddings(self):
        x = np.array([[0.5, 0.5, 0.5, 0.5], [0.1, -0.2, 0.3, -0.4]])
        loss = weighted_contrastive_loss(x, [0, 1], np.ones((2, 2)), cfg=CFG, jitter=1e-8)
        assert np.isfinite(loss)


def finite_difference(x, labels, consistency, cfg, step=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        for k in range(x.shape[1]):
            plus, minus = x.copy(), x.copy()
            plus[i, k] += step
            minus[i, k] -= step
            grad[i, k] = (
                weighted_contrastive_loss(plus, labels, consistency, cfg=cfg)
                - weighted_contrastive_loss(minus, labels, consistency, cfg=cfg)
            ) / (2 * step)
    return grad


class TestGradient:
    def test_matches_finite_differences(self, rng):
        worst = 0.0
        for _ in range(20):
            x, labels, consistency = random_batch(rng)
            analytic = weighted_contrastive_gradient(x, labels, consistency, cfg=CFG)
            numeric = finite_difference(x, labels, consistency, CFG)
            mask = np.abs(analytic) > 1e-8
            rel = np.abs(analytic - numeric)[mask] / np.abs(analytic)[mask]
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-4

    def test_pair_swap_equivariance(self, rng):
        """Swapping the two positive pairs swaps the gradient rows."""
        u, v = rng.uniform(-0.8, 0.8, 8), rng.uniform(-0.8, 0.8, 8)
        labels = np.array([0, 0, 1, 1])
        consistency = np.ones((4, 4))
        x = np.stack([u, u, v, v])
        swapped = np.stack([v, v, u, u])
        g = weighted_contrastive_gradient(x, labels, consistency, cfg=CFG)
        g_swapped = weighted_contrastive_gradient(swapped, labels, consistency, cfg=CFG)
        np.testing.assert_allclose(g_swapped, g[[2, 3, 0, 1]], atol=1e-12)

    def test_negative_gradient_is_descent_direction(self, rng):
        for _ in range(100):
            x, labels, consistency = random_batch(rng)
            grad = weighted_contrastive_gradient(x, labels, consistency, cfg=CFG)
            eta = 1e-4 / max(1.0, float(np.abs(grad).max()))
            before = weighted_contrastive_loss(x, labels, consistency, cfg=CFG)
            after = weighted_contrastive_loss(x - eta * grad, labels, consistency, cfg=CFG)
            assert after < before


class TestOptimizeEmbeddings:
    def test_separates_classes(self):
        from acir.demo import run_separation_demo

        result = run_separation_demo(n_classes=4, per_class=16, nbits=16, steps=200, seed=0)
        assert result.intra_mean < result.inter_mean
        assert result.final_loss < result.initial_loss

    def test_single_class_collapses_to_one_code(self):
        from acir.codes import sign_quantize

        labels = np.zeros(6, dtype=int)
        result = optimize_embeddings(labels, np.ones((6, 6)), nbits=16, steps=300, seed=1)
        codes = [sign_quantize(e) for e in result.embeddings]
        assert all(code == codes[0] for code in codes)

    def test_deterministic_given_seed(self):
        labels = np.array([0, 0, 1, 1])
        consistency = np.ones((4, 4))
        a = optimize_embeddings(labels, consistency, nbits=8, steps=50, seed=42)
        b = optimize_embeddings(labels, consistency, nbits=8, steps=50, seed=42)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)
        np.testing.assert_array_equal(a.loss_trace, b.loss_trace)

    def test_trace_is_monotone(self):
        labels = np.array([0, 0, 0, 1, 1, 1])
        rng = np.random.default_rng(0)
        upper = np.triu(rng.uniform(0, 1, (6, 6)), 1)
        consistency = upper + upper.T + np.eye(6)
        result = optimize_embeddings(labels, consistency, nbits=8, steps=100, seed=7)
        assert np.all(np.diff(result.loss_trace) <= 1e-12)

    def test_non_finite_consistency_diverges(self):
        consistency = np.array([[1.0, np.inf], [np.inf, 1.0]])
        with pytest.raises(DivergedError):
            optimize_embeddings(np.array([0, 1]), consistency, nbits=8, steps=5, seed=0)

    def test_embeddings_stay_in_open_interval(self):
        labels = np.array([0, 0, 1, 1])
        result = optimize_embeddings(labels, np.ones((4, 4)), nbits=8, steps=100, seed=3)
        assert np.all(np.abs(result.embeddings) < 1.0)
