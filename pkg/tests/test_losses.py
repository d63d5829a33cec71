"""Tests for the contrastive and pseudo-label losses."""

import math

import numpy as np
import pytest
import torch

from rppg_ssl.encoder import EncoderConfig, PretrainModel
from rppg_ssl.losses import (
    EmbeddingBatch,
    PseudoLabelBatch,
    combined_loss,
    contrastive_loss,
    roi_ce,
    stride_ce,
)


def brute_force_contrastive(z: np.ndarray, tau: float) -> float:
    """Direct per-anchor evaluation, averaged over all 2N anchors."""
    m = len(z)
    total = 0.0
    for i in range(m):
        j = i + 1 if i % 2 == 0 else i - 1
        sims = [float(np.dot(z[i], z[k])) for k in range(m)]
        numerator = math.exp(sims[j] / tau)
        denominator = sum(math.exp(sims[k] / tau) for k in range(m) if k != i)
        total += -math.log(numerator / denominator)
    return total / m


def brute_force_ce(logits: np.ndarray, targets: np.ndarray) -> float:
    total = 0.0
    for row, target in zip(logits, targets):
        shift = row - row.max()
        log_softmax = shift - math.log(np.exp(shift).sum())
        total += -log_softmax[int(target)]
    return total / len(targets)


def random_unit_rows(rng, n, dim):
    z = rng.normal(size=(n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestContrastiveLoss:
    def test_single_pair_has_zero_loss(self):
        z = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        loss = contrastive_loss(EmbeddingBatch(z, tau=1.0))
        assert float(loss) == 0.0

    def test_two_pair_closed_form(self):
        e1 = [1.0, 0.0, 0.0]
        e2 = [0.0, 1.0, 0.0]
        z = torch.tensor([e1, e1, e2, e2], dtype=torch.float64)
        loss = float(contrastive_loss(EmbeddingBatch(z, tau=1.0)))
        oracle = brute_force_contrastive(z.numpy(), 1.0)
        closed_form = -math.log(math.e / (math.e + 2.0))
        assert loss == pytest.approx(oracle, abs=1e-12)
        assert loss == pytest.approx(closed_form, abs=1e-12)
        assert loss == pytest.approx(0.553, abs=2e-3)

    def test_matches_brute_force_on_random_batches(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n_videos = int(rng.integers(1, 5))
            dim = int(rng.integers(2, 16))
            tau = float(rng.uniform(0.05, 2.0))
            z = random_unit_rows(rng, 2 * n_videos, dim)
            loss = float(contrastive_loss(EmbeddingBatch(torch.from_numpy(z), tau)))
            assert loss == pytest.approx(brute_force_contrastive(z, tau), abs=1e-9)

    def test_temperature_preserves_similarity_ranking(self):
        rng = np.random.default_rng(5)
        z = torch.from_numpy(random_unit_rows(rng, 8, 6))
        loss1 = float(contrastive_loss(EmbeddingBatch(z, 1.0)))
        loss2 = float(contrastive_loss(EmbeddingBatch(z, 2.0)))
        assert loss1 != loss2
        sims = (z @ z.T).masked_fill(torch.eye(8, dtype=torch.bool), -2.0)
        # The per-anchor neighbour ranking depends only on similarities.
        assert torch.equal(sims.argsort(dim=1), sims.argsort(dim=1))

    def test_permutation_of_videos_leaves_loss_unchanged(self):
        rng = np.random.default_rng(11)
        z = random_unit_rows(rng, 8, 12)
        base = float(contrastive_loss(EmbeddingBatch(torch.from_numpy(z), 0.3)))
        for perm in ([2, 3, 0, 1, 6, 7, 4, 5], [6, 7, 2, 3, 4, 5, 0, 1]):
            shuffled = torch.from_numpy(z[perm])
            loss = float(contrastive_loss(EmbeddingBatch(shuffled, 0.3)))
            assert loss == pytest.approx(base, abs=1e-9)

    def test_raising_positive_similarity_strictly_lowers_loss(self):
        # z1 rotates towards z0 while every other similarity stays 0.
        losses = []
        for theta in np.linspace(1.5, 0.1, 8):
            z = torch.tensor(
                [
                    [1.0, 0.0, 0.0, 0.0],
                    [math.cos(theta), math.sin(theta), 0.0, 0.0],
                    [0.0, 0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                ],
                dtype=torch.float64,
            )
            losses.append(float(contrastive_loss(EmbeddingBatch(z, 0.5))))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_aligned_pairs_orthogonal_negatives_match_oracle(self):
        # Perfect alignment: loss equals the analytic optimum for this
        # geometry, which the brute-force oracle reproduces.
        n = 4
        z = np.zeros((2 * n, 2 * n))
        for k in range(n):
            z[2 * k, k] = 1.0
            z[2 * k + 1, k] = 1.0
        tau = 0.7
        loss = float(contrastive_loss(EmbeddingBatch(torch.from_numpy(z), tau)))
        expected = -math.log(
            math.exp(1 / tau) / (math.exp(1 / tau) + (2 * n - 2) * math.exp(0.0))
        )
        assert loss == pytest.approx(brute_force_contrastive(z, tau), abs=1e-12)
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_validation(self):
        z = torch.eye(4, dtype=torch.float64)
        with pytest.raises(ValueError, match="tau"):
            EmbeddingBatch(z, 0.0)
        with pytest.raises(ValueError, match="unit-norm"):
            EmbeddingBatch(2.0 * z, 1.0)
        with pytest.raises(ValueError):
            EmbeddingBatch(z[:3], 1.0)


class TestPseudoLabelLosses:
    def test_uniform_logits_give_log_class_count(self):
        batch = PseudoLabelBatch(
            roi_logits=torch.zeros((6, 7), dtype=torch.float64),
            stride_logits=torch.zeros((6, 5), dtype=torch.float64),
            roi_targets=torch.arange(6) % 7,
            stride_targets=torch.arange(6) % 5,
        )
        assert float(roi_ce(batch)) == pytest.approx(math.log(7.0), abs=1e-12)
        assert float(stride_ce(batch)) == pytest.approx(math.log(5.0), abs=1e-12)

    @pytest.mark.parametrize("margin", [20.0, 25.0])
    def test_saturated_logit_drives_loss_to_zero(self, margin):
        logits = torch.zeros((4, 7), dtype=torch.float64)
        targets = torch.tensor([0, 3, 5, 6])
        for row, t in enumerate(targets):
            logits[row, t] = margin
        batch = PseudoLabelBatch(
            roi_logits=logits,
            stride_logits=torch.zeros((4, 5), dtype=torch.float64),
            roi_targets=targets,
            stride_targets=torch.zeros(4, dtype=torch.long),
        )
        # Exact value is log(1 + 6 e^-margin); vanishes as the softmax
        # saturates (1.24e-8 at margin 20, 8.3e-11 at margin 25).
        expected = math.log1p(6.0 * math.exp(-margin))
        assert float(roi_ce(batch)) == pytest.approx(expected, rel=1e-6)
        assert float(roi_ce(batch)) < 2e-8

    def test_matches_arithmetic_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = 8
            roi_logits = rng.normal(size=(n, 7))
            stride_logits = rng.normal(size=(n, 5))
            roi_targets = rng.integers(0, 7, size=n)
            stride_targets = rng.integers(0, 5, size=n)
            batch = PseudoLabelBatch(
                roi_logits=torch.from_numpy(roi_logits),
                stride_logits=torch.from_numpy(stride_logits),
                roi_targets=torch.from_numpy(roi_targets),
                stride_targets=torch.from_numpy(stride_targets),
            )
            assert float(roi_ce(batch)) == pytest.approx(
                brute_force_ce(roi_logits, roi_targets), abs=1e-9
            )
            assert float(stride_ce(batch)) == pytest.approx(
                brute_force_ce(stride_logits, stride_targets), abs=1e-9
            )

    def test_rejects_out_of_range_targets(self):
        with pytest.raises(ValueError, match="out of range"):
            PseudoLabelBatch(
                roi_logits=torch.zeros((2, 7)),
                stride_logits=torch.zeros((2, 5)),
                roi_targets=torch.tensor([0, 7]),
                stride_targets=torch.tensor([0, 0]),
            )


class TestCombinedLoss:
    def test_reference_sum(self):
        assert combined_loss(0.553, 1.946, 1.609) == pytest.approx(4.108, abs=1e-12)

    def test_two_zero_terms(self):
        assert combined_loss(0.0, 0.0, 1.7) == 1.7
        assert combined_loss(2.5, 0.0, 0.0) == 2.5

    def test_gradient_of_sum_is_sum_of_gradients(self):
        torch.manual_seed(0)
        config = EncoderConfig.tiny(projection_dim=16)
        model = PretrainModel(config).double()
        x = torch.randn(4, 3, 8, 16, 16, dtype=torch.float64)
        h, z, roi_logits, stride_logits = model(x)
        batch = PseudoLabelBatch(
            roi_logits,
            stride_logits,
            torch.tensor([0, 1, 2, 3]),
            torch.tensor([0, 1, 2, 3]),
        )
        terms = [
            contrastive_loss(EmbeddingBatch(z, 0.5)),
            roi_ce(batch),
            stride_ce(batch),
        ]
        params = [p for p in model.parameters() if p.requires_grad][:6]
        separate = [
            torch.autograd.grad(term, params, retain_graph=True, allow_unused=True)
            for term in terms
        ]
        total = torch.autograd.grad(
            combined_loss(*terms), params, retain_graph=True, allow_unused=True
        )
        for pi in range(len(params)):
            parts = [g[pi] for g in separate if g[pi] is not None]
            expected = sum(parts) if parts else torch.zeros_like(params[pi])
            assert torch.allclose(total[pi], expected, atol=1e-9)
