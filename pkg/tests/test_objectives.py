import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from cardioalign.objectives import (PAPER_EXACT, STANDARD, ClipConfig, LossError, TabularTargetsBatch,
                                    bce_with_logits, clip_loss, masked_recon_loss, positive_weight,
                                    retrieval_top1, seg_loss, soft_dice, tabular_multitask_loss,
                                    weighted_bce)
from cardioalign.patching import MaskPlan, sample_mask


def brute_force_clip(zi, zt, tau, lam, mode):
    """Double loop straight from the definition, in plain floats."""
    zi, zt = np.asarray(zi, dtype=float), np.asarray(zt, dtype=float)
    B = len(zi)

    def cos(a, b):
        return float(a @ b / (math.sqrt(a @ a) * math.sqrt(b @ b)))

    def direction(a, b):
        total = 0.0
        for j in range(B):
            num = math.exp(cos(a[j], b[j]) / tau)
            den = sum(math.exp(cos(a[j], b[k]) / tau) for k in range(B)
                      if mode == STANDARD or k != j)
            total -= math.log(num / den)
        return total

    l_it, l_ti = direction(zi, zt), direction(zt, zi)
    return lam * l_it + (1 - lam) * l_ti, l_it, l_ti


class TestMaskedRecon:
    def test_exact_prediction(self):
        x = torch.rand(12, 320)
        assert float(masked_recon_loss(x, x, sample_mask(12, 50, seed=0))) == 0.0

    def test_nothing_masked(self):
        with pytest.raises(LossError, match="nothing is masked"):
            masked_recon_loss(torch.zeros(4, 5), torch.zeros(4, 5), sample_mask(4, 0, seed=0))

    def test_single_masked_patch(self):
        plan = MaskPlan(25.0, np.array([0, 1, 3]), np.array([2]))
        pred = torch.zeros(4, 5)
        pred[2] = 0.5
        assert float(masked_recon_loss(pred, torch.zeros(4, 5), plan)) == 0.25

    def test_visible_predictions_ignored(self):
        plan = sample_mask(10, 50, seed=1)
        pred, tgt = torch.rand(10, 6), torch.rand(10, 6)
        other = pred.clone()
        other[torch.as_tensor(plan.visible)] = 99.0
        assert torch.equal(masked_recon_loss(pred, tgt, plan), masked_recon_loss(other, tgt, plan))

    def test_batched(self):
        plans = [sample_mask(8, 50, seed=s) for s in (0, 1)]
        pred, tgt = torch.rand(2, 8, 3), torch.rand(2, 8, 3)
        both = masked_recon_loss(pred, tgt, plans)
        each = [masked_recon_loss(pred[b], tgt[b], plans[b]) for b in range(2)]
        torch.testing.assert_close(both, sum(each) / 2)

    def test_shape_mismatch(self):
        with pytest.raises(LossError):
            masked_recon_loss(torch.zeros(4, 5), torch.zeros(4, 6), sample_mask(4, 50, seed=0))


class TestClipLoss:
    """Bidirectional contrastive loss with the positive left out of the denominator."""

    def test_two_sample_hand_value(self):
        z = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        total, l_it, l_ti = clip_loss(z, z, ClipConfig(tau=1.0, lam=0.5))
        assert float(l_it) == -2.0
        assert float(total) == -2.0

    @pytest.mark.parametrize("B", [2, 4, 8])
    @pytest.mark.parametrize("mode", [PAPER_EXACT, STANDARD])
    def test_matches_brute_force(self, B, mode):
        rng = np.random.default_rng(B)
        for _ in range(5):
            zi, zt = rng.normal(size=(B, 16)), rng.normal(size=(B, 16))
            cfg = ClipConfig(tau=0.1, lam=0.3, mode=mode)
            got = clip_loss(torch.as_tensor(zi), torch.as_tensor(zt), cfg)
            want = brute_force_clip(zi, zt, 0.1, 0.3, mode)
            for g, w in zip(got, want):
                assert abs(float(g) - w) < 1e-6 * max(1.0, abs(w))

    def test_swap_identity(self):
        zi, zt = torch.randn(6, 8), torch.randn(6, 8)
        _, _, l_ti = clip_loss(zi, zt)
        _, l_it_swapped, _ = clip_loss(zt, zi)
        assert torch.equal(l_ti, l_it_swapped)

    @given(st.floats(1e-2, 1e2), st.floats(1e-2, 1e2))
    def test_scale_invariance(self, a, b):
        g = torch.Generator().manual_seed(0)
        zi, zt = torch.randn(5, 8, generator=g, dtype=torch.float64), torch.randn(
            5, 8, generator=g, dtype=torch.float64)
        base = clip_loss(zi, zt)[0]
        torch.testing.assert_close(clip_loss(a * zi, b * zt)[0], base, rtol=1e-7, atol=0)

    @staticmethod
    def _mean_per_sample(B, tau, dim=128, seeds=100):
        per = {PAPER_EXACT: [], STANDARD: []}
        for seed in range(seeds):
            g = torch.Generator().manual_seed(seed)
            zi, zt = torch.randn(B, dim, generator=g), torch.randn(B, dim, generator=g)
            for mode in per:
                per[mode].append(float(clip_loss(zi, zt, ClipConfig(tau=tau, mode=mode))[1]) / B)
        return {m: float(np.mean(v)) for m, v in per.items()}

    def test_random_concentration(self):
        # unit temperature: logits have spread 1/sqrt(128), so the log-sum-exp is ~ln(count)
        got = self._mean_per_sample(8, 1.0)
        assert abs(got[STANDARD] - math.log(8)) < 0.2
        assert abs(got[PAPER_EXACT] - math.log(7)) < 0.2

    def test_random_concentration_sharp_temperature(self):
        # logit variance s2 = 1 / (tau^2 dim) adds ~s2 / 2 through the log-sum-exp
        s2 = 1 / (0.1 ** 2 * 128)
        got = self._mean_per_sample(8, 0.1)
        assert abs(got[STANDARD] - (math.log(8) + s2 / 2)) < 0.1
        assert abs(got[PAPER_EXACT] - (math.log(7) + s2 / 2)) < 0.1

    def test_per_term_lower_bound(self):
        z = torch.eye(4)
        _, l_it, _ = clip_loss(z, z, ClipConfig(tau=0.1))
        assert float(l_it) / 4 >= -2 / 0.1

    @pytest.mark.parametrize("cfg", [ClipConfig(tau=0.0), ClipConfig(lam=1.5), ClipConfig(mode="x")])
    def test_bad_config(self, cfg):
        with pytest.raises(LossError):
            clip_loss(torch.randn(3, 4), torch.randn(3, 4), cfg)

    def test_batch_of_one(self):
        with pytest.raises(LossError, match="at least 2"):
            clip_loss(torch.randn(1, 4), torch.randn(1, 4))

    def test_retrieval(self):
        z = torch.randn(6, 8)
        assert retrieval_top1(z, z) == 1.0
        assert retrieval_top1(z, z.roll(1, 0)) < 1.0


class TestSegLoss:
    """Cross-entropy plus soft Dice."""

    def test_uniform_logits(self):
        labels = torch.randint(0, 6, (2, 3, 4, 4))
        ce = seg_loss(torch.zeros(2, 6, 3, 4, 4), labels, dice_weight=0.0)
        assert float(ce) == pytest.approx(math.log(6), abs=1e-6)

    def test_confident_correct(self):
        labels = torch.randint(0, 4, (2, 5, 5))
        # every class present somewhere so soft Dice can reach 1
        labels[0, 0, :4] = torch.arange(4)
        logits = 50.0 * torch.nn.functional.one_hot(labels, 4).movedim(-1, 1).float()
        assert float(seg_loss(logits, labels)) < 1e-6

    def test_class_permutation(self):
        logits = torch.randn(2, 5, 3, 4, 4)
        labels = torch.randint(0, 5, (2, 3, 4, 4))
        perm = torch.tensor([3, 0, 4, 1, 2])
        inv = torch.argsort(perm)
        torch.testing.assert_close(seg_loss(logits[:, perm], inv[labels]), seg_loss(logits, labels))

    def test_plane_layout(self):
        logits = torch.randn(2, 3, 6, 5, 4, 4)
        labels = torch.randint(0, 6, (2, 3, 5, 4, 4))
        torch.testing.assert_close(seg_loss(logits, labels),
                                   seg_loss(logits.flatten(0, 1), labels.flatten(0, 1)))

    def test_label_out_of_range(self):
        with pytest.raises(LossError):
            seg_loss(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), 3))

    def test_soft_dice_bounds(self):
        d = soft_dice(torch.randn(2, 4, 6, 6), torch.randint(0, 4, (2, 6, 6)))
        assert 0 <= float(d) <= 1


class TestBinaryLosses:
    def test_logit_zero_label_one(self):
        assert float(weighted_bce(torch.zeros(1), torch.ones(1), 2.0)) == pytest.approx(
            2 * math.log(2))

    def test_unit_weight_is_plain_bce(self):
        x, y = torch.randn(20), torch.randint(0, 2, (20,)).float()
        torch.testing.assert_close(weighted_bce(x, y, 1.0), bce_with_logits(x, y).mean())

    def test_monotone_for_positive_label(self):
        vals = [float(weighted_bce(torch.tensor([v]), torch.ones(1), 3.0)) for v in range(-5, 30)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_stable_at_extremes(self):
        out = bce_with_logits(torch.tensor([-1000.0, 1000.0]), torch.tensor([1.0, 0.0]))
        np.testing.assert_allclose(out.numpy(), [1000.0, 1000.0])

    def test_positive_weight(self):
        assert positive_weight([1, 0, 0, 0]) == 3.0
        assert positive_weight([0, 0]) == 1.0


def _targets(B=3, n_pheno=2, n_physio=2, n_bin=1, cards=(3,)):
    return TabularTargetsBatch(
        phenotype=torch.zeros(B, n_pheno), physio=torch.zeros(B, n_physio),
        physio_observed=torch.ones(B, n_physio, dtype=torch.bool),
        binary=torch.ones(B, n_bin), binary_observed=torch.ones(B, n_bin, dtype=torch.bool),
        categorical=torch.zeros(B, len(cards)),
        categorical_observed=torch.ones(B, len(cards), dtype=torch.bool))


def _outputs(B=3, n_pheno=2, n_physio=2, n_bin=1, cards=(3,)):
    return {"phenotype": torch.zeros(B, n_pheno), "physio": torch.zeros(B, n_physio),
            "binary": torch.zeros(B, n_bin), "multiclass": torch.zeros(B, sum(cards))}


class TestTabularMultitask:
    """Four heads, missing targets masked out."""

    def test_closed_forms(self):
        _, parts = tabular_multitask_loss(_outputs(), _targets(), [3])
        assert float(parts["phenotype"]) == 0 and float(parts["physio"]) == 0
        assert float(parts["binary"]) == pytest.approx(math.log(2))
        assert float(parts["multiclass"]) == pytest.approx(math.log(3))

    def test_missing_entries_masked(self):
        tgt = _targets()
        tgt.physio_observed[0, 1] = False
        out = _outputs()
        base, _ = tabular_multitask_loss(out, tgt, [3])
        out["physio"][0, 1] = 50.0
        again, _ = tabular_multitask_loss(out, tgt, [3])
        assert torch.equal(base, again)

    def test_all_missing_head(self, caplog):
        tgt = _targets()
        tgt.binary_observed[:] = False
        _, parts = tabular_multitask_loss(_outputs(), tgt, [3])
        assert float(parts["binary"]) == 0.0
        assert "no observed targets" in caplog.text

    def test_weights(self):
        total, parts = tabular_multitask_loss(_outputs(), _targets(), [3], {"multiclass": 0.0})
        assert float(total) == pytest.approx(math.log(2))

    def test_width_mismatch(self):
        with pytest.raises(LossError):
            tabular_multitask_loss(_outputs(cards=(2,)), _targets(), [3])
