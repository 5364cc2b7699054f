import math

import pytest
import torch
import torch.nn.functional as F

from protovox.disent import (
    ConditionClassifier,
    LossParts,
    PrototypeCodebook,
    SpeakerEncoder,
    classify_adv,
    classify_dys,
    combine,
    grl,
    total_loss,
    tts_loss,
)
from protovox.errors import ConfigurationError, InputError, RangeError, ShapeError

torch.manual_seed(0)


class TestGradientReversal:
    def test_forward_is_identity(self):
        x = torch.randn(5, 7, requires_grad=True)
        assert torch.equal(grl(x, 0.1), x)

    def test_backward_scales_and_negates(self):
        x = torch.randn(6, requires_grad=True)
        w = torch.randn(6)
        (grl(x, 0.1) * w).sum().backward()
        assert torch.allclose(x.grad, -0.1 * w, atol=1e-7)

    def test_matches_plain_path_negated(self):
        torch.manual_seed(4)
        net = torch.nn.Linear(6, 3)
        x = torch.randn(6, requires_grad=True)
        net(grl(x, 0.25)).pow(2).sum().backward()
        reversed_grad = x.grad.clone()
        x.grad = None
        net(x).pow(2).sum().backward()
        assert torch.allclose(reversed_grad, -0.25 * x.grad, atol=1e-6)

    def test_zero_strength_blocks_gradient(self):
        x = torch.randn(4, requires_grad=True)
        grl(x, 0.0).sum().backward()
        assert torch.equal(x.grad, torch.zeros(4))

    def test_negative_strength_rejected(self):
        with pytest.raises(ConfigurationError):
            grl(torch.randn(3), -0.1)


class TestCodebook:
    def test_shape_includes_healthy_row(self):
        cb = PrototypeCodebook(n_dysarthric=8, dim=16)
        assert cb.table.shape == (9, 16)

    def test_lookup_returns_rows(self):
        cb = PrototypeCodebook(n_dysarthric=3, dim=8)
        for k in range(4):
            assert torch.equal(cb.lookup(k), cb.table[k])

    def test_out_of_range_rejected(self):
        cb = PrototypeCodebook(n_dysarthric=3, dim=8)
        with pytest.raises(RangeError):
            cb.lookup(-1)
        with pytest.raises(RangeError):
            cb.lookup(4)

    def test_lookup_log_records_indices(self):
        cb = PrototypeCodebook(n_dysarthric=3, dim=8)
        cb.lookup(1)
        cb.lookup_log = []
        cb.lookup(0)
        cb.lookup(2)
        cb.lookup(0)
        assert cb.lookup_log == [0, 2, 0]

    def test_lookup_batch_stacks(self):
        cb = PrototypeCodebook(n_dysarthric=3, dim=8)
        got = cb.lookup_batch([2, 0, 2])
        assert torch.equal(got, cb.table[torch.tensor([2, 0, 2])])

    def test_export_rows_round_trips(self):
        cb = PrototypeCodebook(n_dysarthric=2, dim=4)
        lines = cb.export_rows().strip().split("\n")
        assert len(lines) == 3
        for i, line in enumerate(lines):
            fields = line.split("\t")
            assert int(fields[0]) == i
            back = torch.tensor([float(v) for v in fields[1:]])
            assert torch.allclose(back, cb.table[i], atol=1e-7)

    def test_needs_dysarthric_rows(self):
        with pytest.raises(ConfigurationError):
            PrototypeCodebook(n_dysarthric=0, dim=8)


class TestCombine:
    def test_elementwise_sum(self):
        got = combine(torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0]))
        assert torch.equal(got, torch.tensor([4.0, 6.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            combine(torch.zeros(3), torch.zeros(4))


class TestSpeakerEncoder:
    def test_output_shape(self):
        enc = SpeakerEncoder(speech_vocab=40, dim=16)
        assert enc(torch.randint(0, 40, (9,))).shape == (16,)

    def test_empty_prompt_rejected(self):
        enc = SpeakerEncoder(speech_vocab=40, dim=16)
        with pytest.raises(InputError):
            enc(torch.empty(0, dtype=torch.long))

    def test_batched_prompt_rejected(self):
        enc = SpeakerEncoder(speech_vocab=40, dim=16)
        with pytest.raises(ShapeError):
            enc(torch.randint(0, 40, (2, 9)))

    def test_encode_batch_matches_singles(self):
        enc = SpeakerEncoder(speech_vocab=40, dim=16)
        prompts = [torch.randint(0, 40, (n,)) for n in (5, 9, 3)]
        stacked = enc.encode_batch(prompts)
        for i, p in enumerate(prompts):
            assert torch.allclose(stacked[i], enc(p), atol=1e-6)

    def test_order_invariant_pooling(self):
        enc = SpeakerEncoder(speech_vocab=40, dim=16)
        p = torch.randint(0, 40, (8,))
        shuffled = p[torch.randperm(8)]
        assert torch.allclose(enc(p), enc(shuffled), atol=1e-6)

    def test_has_conditioner_and_perceiver_parts(self):
        enc = SpeakerEncoder(speech_vocab=40, dim=16)
        cond = list(enc.conditioner.parameters())
        perc = list(enc.perceiver.parameters())
        assert cond and perc
        assert len(cond) + len(perc) == len(list(enc.parameters()))


class TestClassifierPaths:
    def test_dys_path_gradients_reach_both_factors_equally(self):
        torch.manual_seed(1)
        clf = ConditionClassifier(dim=8)
        s = torch.randn(4, 8, requires_grad=True)
        p = torch.randn(4, 8, requires_grad=True)
        z = combine(s, p)
        target = torch.tensor([0, 1, 1, 0])
        F.cross_entropy(classify_dys(clf, z), target).backward()
        # z = s + p, so dz/ds and dz/dp are both identity.
        assert torch.allclose(s.grad, p.grad, atol=1e-7)
        assert s.grad.abs().max() > 0

    def test_adv_path_reverses_input_but_not_classifier(self):
        torch.manual_seed(2)
        clf = ConditionClassifier(dim=8)
        # eval mode: dropout would give the two passes different masks
        clf.eval()
        target = torch.tensor([1, 0, 1])
        base = torch.randn(3, 8)

        s = base.clone().requires_grad_()
        F.cross_entropy(classify_adv(clf, s, strength=0.1), target).backward()
        s_grad_reversed = s.grad.clone()
        clf_grads_reversed = [p.grad.clone() for p in clf.parameters()]

        for p in clf.parameters():
            p.grad = None
        s = base.clone().requires_grad_()
        F.cross_entropy(clf(s), target).backward()

        assert torch.allclose(s_grad_reversed, -0.1 * s.grad, atol=1e-7)
        for got, plain in zip(clf_grads_reversed, [p.grad for p in clf.parameters()]):
            assert torch.allclose(got, plain, atol=1e-7)

    def test_logit_shape(self):
        clf = ConditionClassifier(dim=8)
        assert classify_dys(clf, torch.randn(5, 8)).shape == (5, 2)


class TestTtsLoss:
    def test_uniform_logits_give_log_vocab(self):
        sp = torch.zeros(6, 41)
        tx = torch.zeros(4, 12)
        loss = tts_loss(sp, torch.randint(0, 41, (6,)), tx, torch.randint(0, 12, (4,)))
        assert loss.item() == pytest.approx(math.log(41) + math.log(12), rel=1e-6)

    def test_matches_manual_cross_entropy(self):
        torch.manual_seed(5)
        sp, tx = torch.randn(6, 10), torch.randn(3, 7)
        sp_t, tx_t = torch.randint(0, 10, (6,)), torch.randint(0, 7, (3,))
        expected = (
            -F.log_softmax(sp, dim=-1).gather(1, sp_t[:, None]).mean()
            - F.log_softmax(tx, dim=-1).gather(1, tx_t[:, None]).mean()
        )
        assert tts_loss(sp, sp_t, tx, tx_t).item() == pytest.approx(expected.item(), rel=1e-6)

    def test_empty_text_stream_allowed(self):
        sp = torch.zeros(6, 41)
        loss = tts_loss(sp, torch.randint(0, 41, (6,)),
                        torch.zeros(0, 12), torch.zeros(0, dtype=torch.long))
        assert loss.item() == pytest.approx(math.log(41), rel=1e-6)

    def test_empty_speech_stream_rejected(self):
        with pytest.raises(InputError):
            tts_loss(torch.zeros(0, 41), torch.zeros(0, dtype=torch.long),
                     torch.zeros(1, 12), torch.zeros(1, dtype=torch.long))

    def test_oov_target_rejected(self):
        sp = torch.zeros(3, 41)
        tx = torch.zeros(2, 12)
        with pytest.raises(InputError):
            tts_loss(sp, torch.tensor([0, 41, 1]), tx, torch.zeros(2, dtype=torch.long))
        with pytest.raises(InputError):
            tts_loss(sp, torch.zeros(3, dtype=torch.long), tx, torch.tensor([-1, 3]))

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            tts_loss(torch.zeros(3, 41), torch.zeros(4, dtype=torch.long),
                     torch.zeros(1, 12), torch.zeros(1, dtype=torch.long))


class TestTotalLoss:
    def test_unit_weights(self):
        parts = LossParts(l_tts=2.0, l_dys=0.5, l_adv=0.3)
        assert total_loss(parts) == pytest.approx(2.8)

    def test_custom_weights(self):
        parts = LossParts(l_tts=2.0, l_dys=0.5, l_adv=0.3, alpha=2.0, beta=0.5)
        assert total_loss(parts) == pytest.approx(3.15)

    def test_tensor_parts_stay_differentiable(self):
        l_tts = torch.tensor(1.0, requires_grad=True)
        total = total_loss(LossParts(l_tts=l_tts, l_dys=torch.tensor(0.2),
                                     l_adv=torch.tensor(0.1)))
        total.backward()
        assert l_tts.grad.item() == pytest.approx(1.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            total_loss(LossParts(l_tts=1.0, l_dys=0.0, l_adv=0.0, alpha=-1.0))
        with pytest.raises(ConfigurationError):
            total_loss(LossParts(l_tts=1.0, l_dys=0.0, l_adv=0.0, beta=-0.5))
