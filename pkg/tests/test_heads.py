import math

import numpy as np
import pytest
import torch

from childadult.heads import (
    AttentionProjector,
    HeadConfig,
    SegmentLogit,
    bce_loss,
    bce_oracle,
    build_head,
    classify,
)

from helpers import head_gradient_errors


def stack(batch=3, layers=4, frames=20, dim=64, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(batch, layers, frames, dim, generator=g, dtype=dtype)


def small_config(kind, dim=6, layers=3, hidden=5):
    return HeadConfig(kind=kind, input_dim=dim, n_layers=layers, hidden_dim=hidden,
                      conv_channels=(4, 4, 3), conv_kernels=(3, 2, 2))


class TestAttentionProjector:
    def test_single_frame(self):
        proj = AttentionProjector(8)
        x = torch.randn(1, 1, 8)
        assert torch.allclose(proj(x), proj.v(x)[:, 0])

    def test_constant_frames(self):
        proj = AttentionProjector(8)
        v = torch.randn(8)
        x = v.expand(1, 12, 8)
        assert torch.allclose(proj(x), proj.v(v)[None], atol=1e-6)

    def test_permutation_invariant(self):
        torch.manual_seed(0)
        proj = AttentionProjector(64)
        x = torch.randn(1, 50, 64)
        perm = torch.randperm(50)
        assert torch.allclose(proj(x), proj(x[:, perm]), atol=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            AttentionProjector(4)(torch.zeros(1, 0, 4))


@pytest.mark.parametrize("kind", ["rnn", "cnn"])
class TestHeads:
    def test_inference_deterministic(self, kind):
        torch.manual_seed(0)
        head = build_head(HeadConfig(kind=kind))
        x = stack()
        a = classify(head, x)
        b = classify(head, x)
        assert a == b and len(a) == 3
        for s in a:
            assert 0 < s.probability < 1
            assert s.label == ("child" if s.probability > 0.5 else "adult")

    def test_one_logit_per_segment(self, kind):
        head = build_head(HeadConfig(kind=kind)).eval()
        assert head(stack(batch=5)).shape == (5,)

    def test_width_mismatch(self, kind):
        head = build_head(HeadConfig(kind=kind))
        with pytest.raises(ValueError, match="input_dim"):
            head(stack(dim=32))

    def test_dropout_active_only_in_training(self, kind):
        torch.manual_seed(0)
        head = build_head(HeadConfig(kind=kind))
        x = stack()
        head.train()
        assert not torch.equal(head(x), head(x))
        head.eval()
        assert torch.equal(head(x), head(x))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_check(self, kind, seed):
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        cfg = small_config(kind)
        head = build_head(cfg)
        if kind == "cnn":
            with torch.no_grad():
                head.layer_weights.normal_()
        x = stack(batch=3, layers=cfg.n_layers, frames=int(rng.integers(8, 12)), dim=cfg.input_dim, seed=seed)
        y = rng.integers(0, 2, 3)
        errors = head_gradient_errors(head, x, y)
        if kind == "cnn":
            assert "layer_weights" in errors
        assert max(errors.values()) < 1e-3, errors


def test_rnn_single_frame():
    head = build_head(HeadConfig(kind="rnn")).eval()
    out = head(stack(batch=2, frames=1))
    assert torch.isfinite(out).all()


def test_cnn_too_short():
    cfg = HeadConfig(kind="cnn")
    assert cfg.min_frames == 13
    head = build_head(cfg)
    with pytest.raises(ValueError, match="13 frames"):
        head(stack(frames=12))
    assert torch.isfinite(head.eval()(stack(frames=13))).all()


def test_cnn_layer_count_mismatch():
    head = build_head(HeadConfig(kind="cnn"))
    with pytest.raises(ValueError, match="encoder layers"):
        head(stack(layers=3))


def test_config_invariants():
    with pytest.raises(ValueError):
        HeadConfig(dropout=0.5)
    with pytest.raises(ValueError):
        HeadConfig(kind="gru")
    cfg = HeadConfig(kind="cnn")
    assert HeadConfig.from_dict(cfg.to_dict()) == cfg


def test_inverted_dropout_statistics():
    head = build_head(HeadConfig()).train()
    torch.manual_seed(1)
    out = head.drop(torch.ones(200_000))
    zero_frac = (out == 0).float().mean().item()
    assert abs(zero_frac - 0.3) < 4 * math.sqrt(0.3 * 0.7 / 200_000)
    assert torch.allclose(out[out != 0], torch.tensor(1 / 0.7))


def test_segment_logit():
    s = SegmentLogit.from_logit(0.0)
    assert s.probability == 0.5 and s.label == "adult"
    assert SegmentLogit.from_logit(3.0).label == "child"
    assert SegmentLogit.from_logit(-30.0).probability == pytest.approx(math.exp(-30) / (1 + math.exp(-30)))


class TestBCE:
    @pytest.mark.parametrize("label", [0, 1])
    def test_zero_logit(self, label):
        assert bce_loss(torch.tensor([0.0]), torch.tensor([label])).item() == pytest.approx(math.log(2))

    def test_large_logit_stable(self):
        loss = bce_loss(torch.tensor([20.0], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64))
        assert loss.item() == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)
        assert loss.item() == pytest.approx(2.06e-9, rel=1e-2)
        huge = bce_loss(torch.tensor([800.0, -800.0], dtype=torch.float64), torch.tensor([0.0, 1.0], dtype=torch.float64))
        assert huge.item() == pytest.approx(800.0)

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(scale=5, size=64)
        labels = rng.integers(0, 2, 64)
        got = bce_loss(torch.from_numpy(logits), torch.from_numpy(labels)).item()
        assert abs(got - bce_oracle(logits, labels)) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(torch.zeros(3), torch.zeros(2))
