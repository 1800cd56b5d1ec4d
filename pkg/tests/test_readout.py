"""Spatial pooling, the temporal spike error loss and early exit."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pasnet.errors import ConfigurationError, InputError
from pasnet.profiler import energy_saved_by_exit
from pasnet.readout import (ExitPolicy, accuracy_curve, cumulative_accuracy_curve, early_exit_decide,
                            first_exit, read_exit_trace, relative_peak_exit, spatial_pool, tse_loss,
                            tse_reduce, tse_weights, warmup_steps, write_exit_trace, TseConfig)


class TestPool:
    def test_single_node(self):
        x = torch.randn(3, 4, 1)
        torch.testing.assert_close(spatial_pool(x), 2 * x[..., 0])

    def test_hand_example(self):
        assert spatial_pool(torch.tensor([[0.0, 1.0, 0.0]])).item() == pytest.approx(4 / 3)

    def test_constant(self):
        assert torch.equal(spatial_pool(torch.full((2, 5), 0.25)), torch.full((2,), 0.5))


class TestTse:
    def test_perfect_prediction_zero_loss(self):
        logits = torch.full((2, 6, 3), -1e4, dtype=torch.float64)
        logits[0, :, 1] = 1e4
        logits[1, :, 2] = 1e4
        loss = tse_loss(logits, [1, 2], TseConfig(label_smoothing=0.0))
        assert loss.item() == 0.0

    def test_warmup_masking(self):
        assert tse_reduce(torch.tensor([10.0, 1.0, 1.0, 1.0]), t_warm=1).item() == 1.0

    def test_linear_weights_constant_loss(self):
        assert tse_reduce(torch.tensor([3.0, 3.0, 3.0]), 0, "linear").item() == pytest.approx(3.0)

    @given(st.lists(st.floats(0, 50), min_size=2, max_size=20), st.floats(0.01, 1e3), st.data())
    @settings(max_examples=50, deadline=None)
    def test_scaling_weights_does_not_change_loss(self, ce, lam, data):
        t_warm = data.draw(st.integers(0, len(ce) - 1))
        ce = torch.tensor(ce, dtype=torch.float64)
        for weighting in ("uniform", "linear"):
            w = tse_weights(len(ce), t_warm, weighting, torch.float64)
            ref = (ce * lam * w).sum() / (lam * w).sum()
            assert tse_reduce(ce, t_warm, weighting).item() == pytest.approx(ref.item(), rel=1e-12)

    def test_linear_ramp(self):
        w = tse_weights(6, 2, "linear", torch.float64)
        assert w.tolist() == [0, 0, 0.25, 0.5, 0.75, 1.0]

    def test_warmup_steps(self):
        assert warmup_steps(50, 0.2) == 10
        assert warmup_steps(4, 1.0) == 3
        assert warmup_steps(32, 0.0) == 0

    def test_warmup_too_long(self):
        with pytest.raises(ConfigurationError):
            tse_weights(4, 4)

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            TseConfig(weighting="exp")
        with pytest.raises(ConfigurationError):
            TseConfig(warmup_ratio=1.5)


class TestExit:
    def _logits_with_confidence(self, p, K=4):
        # softmax whose top class has probability p
        rest = (1 - p) / (K - 1)
        return torch.log(torch.tensor([p] + [rest] * (K - 1), dtype=torch.float64))

    def test_confident_first_step(self):
        d = early_exit_decide(self._logits_with_confidence(0.95), ExitPolicy(0.9), t=1, t_warm=0, seq_len=50)
        assert d.exit and d.predicted == 0
        assert round(100 * energy_saved_by_exit(50, 1), 1) == 98.0

    def test_late_confidence(self):
        seq = torch.stack([self._logits_with_confidence(0.5)] * 48
                          + [self._logits_with_confidence(0.97)] * 2)
        t, d = first_exit(seq, ExitPolicy(0.9), t_warm=0)
        assert t == 49
        assert round(100 * energy_saved_by_exit(50, t), 1) == 2.0

    def test_never_exits_during_warmup(self):
        seq = torch.stack([self._logits_with_confidence(0.99)] * 10)
        assert first_exit(seq, ExitPolicy(0.9), t_warm=3)[0] == 4

    def test_vacuous_threshold_exits_after_warmup(self):
        seq = torch.stack([self._logits_with_confidence(0.3)] * 10)
        assert first_exit(seq, ExitPolicy(1e-9), t_warm=2)[0] == 3

    def test_forced_exit_at_end(self):
        seq = torch.stack([self._logits_with_confidence(0.3)] * 7)
        t, d = first_exit(seq, ExitPolicy(0.9), t_warm=0)
        assert t == 7 and d.exit

    def test_softmax_confidence_in_range(self):
        d = early_exit_decide(torch.randn(5), ExitPolicy(), 1, 0, 3)
        assert 0.2 <= d.confidence <= 1.0

    def test_policy_validation(self):
        with pytest.raises(ConfigurationError):
            ExitPolicy(0.0)
        with pytest.raises(ConfigurationError):
            ExitPolicy(0.9, metric="entropy")
        with pytest.raises(ConfigurationError):
            early_exit_decide(torch.zeros(2), ExitPolicy(), 0, 0, 3)


class TestOfflineExit:
    def test_relative_peak(self):
        curve = np.array([0.2, 0.5, 0.966, 0.97, 0.965])
        assert relative_peak_exit(curve) == 3

    def test_reference_rows(self):
        assert round(100 * energy_saved_by_exit(32, 1), 1) == 96.9
        assert round(100 * energy_saved_by_exit(31, 4), 1) == 87.1

    def test_constant_model_flat_curve(self):
        class Constant(torch.nn.Module):
            def __init__(self):
                super().__init__()
                self.w = torch.nn.Parameter(torch.zeros(1))

            def forward(self, x):
                out = torch.zeros(x.shape[0], 5, 3)
                out[..., 1] = 1.0
                return out

        curve, exit_step = cumulative_accuracy_curve(Constant(), torch.zeros(6, 20, 3, 1), [1, 1, 0, 1, 2, 1])
        assert np.all(curve == curve[0])
        assert exit_step == 1

    def test_empty_dataset(self):
        with pytest.raises(InputError):
            cumulative_accuracy_curve(None, torch.zeros(0, 4, 3, 1), [])

    def test_accuracy_curve(self):
        logits = torch.zeros(2, 3, 2)
        logits[0, :, 1] = 1
        logits[1, 2, 1] = 1
        assert accuracy_curve(logits, [1, 1]).tolist() == [0.5, 0.5, 1.0]


def test_exit_trace_roundtrip(tmp_path):
    rows = [dict(sample_id=0, exit_step=3, predicted_class=1, true_class=1, confidence_at_exit=0.93,
                 energy_saved_fraction=energy_saved_by_exit(10, 3))]
    path = tmp_path / "trace.csv"
    write_exit_trace(path, rows)
    back = read_exit_trace(path)
    assert list(back[0]) == ["sample_id", "exit_step", "predicted_class", "true_class",
                             "confidence_at_exit", "energy_saved_fraction"]
    assert back[0]["exit_step"] == "3" and float(back[0]["energy_saved_fraction"]) == pytest.approx(0.7)
