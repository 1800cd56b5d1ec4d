"""Tokenizer, temporal batch norm, folding and the spiking embedding."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import tbn_train_reference, tokenize_loops
from pasnet.errors import ConfigurationError, InputError, InvalidStateError
from pasnet.frontend import (SpikingEmbedding, TemporalBatchNorm, channel_project, fold_tbn_into_conv,
                             tokenize)
from pasnet.neurons import LifConfig


class TestTokenize:
    def test_table_shape(self):
        x = torch.randn(200, 6, 3)
        assert tokenize(x, 4).shape == (50, 24, 3)

    def test_batched_shape_and_drop_tail(self):
        assert tokenize(torch.randn(2, 103, 3, 5), 4).shape == (2, 25, 12, 5)

    def test_zero_window(self):
        assert torch.count_nonzero(tokenize(torch.zeros(40, 6, 3), 4)) == 0

    def test_pythagorean_magnitude(self):
        x = torch.zeros(1, 3, 1, dtype=torch.float64)
        x[0, :, 0] = torch.tensor([3.0, 4.0, 0.0])
        tok = tokenize(x, 1)
        # magnitude mean and max both equal 5 for a one-sample patch, variance 0
        assert tok[0, 9:12, 0].tolist() == [5.0, 5.0, 0.0]

    @given(arrays(np.float64, (12, 6, 2), elements=st.floats(-20, 20)), st.sampled_from([1, 2, 3, 4, 5]))
    @settings(max_examples=40, deadline=None)
    def test_matches_loop_oracle(self, window, stride):
        got = tokenize(torch.from_numpy(window), stride).numpy()
        np.testing.assert_allclose(got, tokenize_loops(window, stride), rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_rejected(self, bad):
        x = torch.zeros(8, 3, 1)
        x[3, 1, 0] = bad
        with pytest.raises(InputError):
            tokenize(x, 2)

    def test_short_window_and_bad_stride(self):
        with pytest.raises(ConfigurationError):
            tokenize(torch.zeros(3, 3, 1), 4)
        with pytest.raises(ConfigurationError):
            tokenize(torch.zeros(8, 3, 1), 0)
        with pytest.raises(ConfigurationError):
            tokenize(torch.zeros(8, 4, 1), 2)


class TestTemporalBatchNorm:
    def test_training_matches_reference_and_updates_stats(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.0, 3.0, size=(4, 10, 5, 3))
        bn = TemporalBatchNorm(5).double()
        with torch.no_grad():
            bn.gamma.copy_(torch.from_numpy(rng.uniform(0.5, 2, 5)))
            bn.beta.copy_(torch.from_numpy(rng.normal(size=5)))
        y = bn(torch.from_numpy(x)).detach().numpy()
        ref, mean, var = tbn_train_reference(x, bn.gamma.detach().numpy(), bn.beta.detach().numpy())
        np.testing.assert_allclose(y, ref, rtol=1e-10, atol=1e-10)
        n = 4 * 10 * 3
        np.testing.assert_allclose(bn.running_mean.numpy(), 0.1 * mean, rtol=1e-12)
        np.testing.assert_allclose(bn.running_var.numpy(), 0.9 + 0.1 * var * n / (n - 1), rtol=1e-12)

    def test_constant_input_gives_beta(self):
        bn = TemporalBatchNorm(3).double()
        with torch.no_grad():
            bn.beta.copy_(torch.tensor([0.1, -2.0, 7.0]))
        x = torch.ones(2, 5, 3, 4, dtype=torch.float64) * torch.tensor([3.0, -1.0, 0.5]).view(1, 1, 3, 1)
        y = bn(x)
        assert torch.equal(y, bn.beta.detach().view(1, 1, 3, 1).expand_as(y))

    def test_balanced_plus_minus_one(self):
        bn = TemporalBatchNorm(1, eps=1e-12).double()
        x = torch.tensor([-1.0, 1.0] * 8, dtype=torch.float64).view(2, 8, 1, 1)
        np.testing.assert_allclose(bn(x).detach().numpy(), x.numpy(), atol=1e-9)

    @given(st.floats(0.01, 100))
    @settings(max_examples=25, deadline=None)
    def test_scale_invariance(self, lam):
        x = torch.from_numpy(np.random.default_rng(5).normal(size=(3, 6, 2, 2)))
        a = TemporalBatchNorm(2, eps=1e-12).double()(x)
        b = TemporalBatchNorm(2, eps=1e-12).double()(lam * x)
        np.testing.assert_allclose(a.detach().numpy(), b.detach().numpy(), atol=1e-6)

    def test_non_finite_rejected(self):
        bn = TemporalBatchNorm(1)
        with pytest.raises(InputError):
            bn(torch.tensor([[[[float("nan")]]]]))

    def test_mode(self):
        bn = TemporalBatchNorm(2)
        assert bn.mode == "training"
        assert bn.eval().mode == "frozen"


class TestFolding:
    def test_identity_fold(self):
        bn = TemporalBatchNorm(4).double().eval()
        with torch.no_grad():
            bn.running_var.fill_(1 - bn.eps)
        w = torch.randn(4, 3, dtype=torch.float64)
        b = torch.randn(4, dtype=torch.float64)
        wf, bf = fold_tbn_into_conv(w, b, bn)
        torch.testing.assert_close(wf, w, rtol=1e-15, atol=0)
        torch.testing.assert_close(bf, b, rtol=1e-15, atol=0)

    def test_random_equivalence(self):
        g = torch.Generator().manual_seed(0)
        w = torch.randn(6, 5, generator=g)
        b = torch.randn(6, generator=g)
        bn = TemporalBatchNorm(6)
        with torch.no_grad():
            bn.gamma.copy_(torch.rand(6, generator=g) + 0.5)
            bn.beta.copy_(torch.randn(6, generator=g))
            bn.running_mean.copy_(torch.randn(6, generator=g))
            bn.running_var.copy_(torch.rand(6, generator=g) + 0.1)
        bn.eval()
        wf, bf = fold_tbn_into_conv(w, b, bn)
        worst = 0.0
        for _ in range(100):
            x = torch.randn(1, 4, 5, 3, generator=g)
            two = bn(channel_project(x, w, b))
            one = channel_project(x, wf, bf)
            worst = max(worst, (two - one).abs().max().item())
        assert worst <= 1e-5

    def test_zero_weights_give_shift(self):
        bn = TemporalBatchNorm(2).double()
        with torch.no_grad():
            bn.beta.fill_(0.3)
            bn.running_mean.copy_(torch.tensor([1.0, -2.0]))
            bn.running_var.copy_(torch.tensor([4.0, 0.25]))
        bn.eval()
        _, bf = fold_tbn_into_conv(torch.zeros(2, 3, dtype=torch.float64), None, bn)
        scale = 1 / torch.sqrt(bn.running_var + bn.eps)
        torch.testing.assert_close(bf, 0.3 - scale * bn.running_mean)

    def test_requires_frozen(self):
        with pytest.raises(InvalidStateError):
            fold_tbn_into_conv(torch.zeros(2, 2), None, TemporalBatchNorm(2))

    def test_rejects_negative_variance(self):
        bn = TemporalBatchNorm(1).eval()
        with torch.no_grad():
            bn.running_var.fill_(-1.0)
        with pytest.raises(InvalidStateError):
            fold_tbn_into_conv(torch.ones(1, 1), None, bn)


class TestSpikingEmbedding:
    def test_pamap2_shape(self):
        emb = SpikingEmbedding(24, 256, LifConfig())
        assert emb(torch.randn(2, 50, 24, 3)).shape == (2, 50, 256, 3)

    def test_silent_on_zero_tokens(self):
        emb = SpikingEmbedding(12, 16, LifConfig())
        with torch.no_grad():
            emb.bias.zero_()
        assert emb(torch.zeros(2, 10, 12, 3)).sum() == 0

    def test_binary_output(self):
        emb = SpikingEmbedding(12, 16, LifConfig(), stem_gated=True)
        s = emb(torch.randn(3, 20, 12, 2) * 5)
        assert set(s.unique().tolist()) <= {0.0, 1.0}

    def test_rejects_wrong_token_width(self):
        with pytest.raises(ConfigurationError):
            SpikingEmbedding(12, 16, LifConfig())(torch.zeros(1, 5, 11, 3))
