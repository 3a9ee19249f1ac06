import numpy as np
import pytest
import torch

from childadult.encoder import (
    BASE_CONFIG,
    EncoderConfig,
    EncoderOutput,
    count_trainable,
    encode,
    init_encoder,
    layer_param_count,
    layer_weighted_sum,
    pool,
    set_freeze_policy,
    trainable_count_for,
)


def frames_by_loop(n, blocks):
    for _, kernel, stride in blocks:
        n = (n - kernel) // stride + 1
    return n


@pytest.fixture(scope="module")
def model():
    return init_encoder(0)


class TestEncode:
    def test_frame_count(self, model):
        # 32000 -> 6399 -> 1598 -> 398
        assert frames_by_loop(32000, model.config.conv_blocks) == 398
        out = encode(model, np.random.default_rng(0).uniform(-1, 1, 32000))
        assert out.z.shape == (398, 64)
        assert len(out.layers) == 4 and all(c.shape == (398, 64) for c in out.layers)
        assert out.final is out.layers[-1]

    @pytest.mark.parametrize("n", [185, 1000, 4567, 16000])
    def test_frame_count_other_lengths(self, model, n):
        assert encode(model, np.zeros(n)).n_frames == frames_by_loop(n, model.config.conv_blocks)

    def test_too_short(self, model):
        with pytest.raises(ValueError, match="185 samples"):
            encode(model, np.zeros(184))

    def test_zero_waveform_finite(self, model):
        out = encode(model, np.zeros(32000))
        assert torch.isfinite(out.z).all() and all(torch.isfinite(c).all() for c in out.layers)

    def test_pure(self, model):
        x = np.random.default_rng(1).uniform(-1, 1, 20000)
        a, b = encode(model, x), encode(model, x)
        for u, v in zip(a.layers, b.layers):
            assert torch.equal(u, v)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_for_bounded_input(self, model, seed):
        rng = np.random.default_rng(seed)
        x = np.sign(rng.normal(size=8000)) * rng.uniform(0.0, 1.0, 8000) ** rng.uniform(0.1, 3)
        out = encode(model, x)
        assert all(torch.isfinite(c).all() for c in out.layers)

    def test_same_seed_same_weights(self):
        a, b = init_encoder(3), init_encoder(3)
        for (n1, p1), (n2, p2) in zip(a.state_dict().items(), b.state_dict().items()):
            assert n1 == n2 and torch.equal(p1, p2)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            EncoderConfig(model_dim=66, n_heads=4)
        with pytest.raises(ValueError):
            EncoderConfig(n_layers=0)


class TestPool:
    def test_constant(self):
        v = torch.tensor([0.3, -1.2, 5.0])
        assert torch.allclose(pool(v.repeat(7, 1)), v)

    def test_two_point(self):
        assert torch.equal(pool(torch.tensor([[1.0, 0.0], [0.0, 1.0]])), torch.tensor([0.5, 0.5]))

    def test_loop_oracle(self):
        frames = np.random.default_rng(0).normal(size=(398, 64))
        expected = [sum(frames[t, j] for t in range(398)) / 398 for j in range(64)]
        np.testing.assert_allclose(pool(torch.from_numpy(frames)).numpy(), expected, atol=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            pool(torch.zeros(0, 4))


class TestFreezePolicy:
    def test_k_zero(self):
        m = init_encoder(0)
        set_freeze_policy(m, 0)
        assert count_trainable(m) == 0

    def test_out_of_range(self):
        m = init_encoder(0)
        for k in (-1, 5):
            with pytest.raises(ValueError):
                set_freeze_policy(m, k)

    def test_per_layer_delta_matches_formula(self):
        d, ffn = 64, 256
        # q, k, v, out weights + biases; two FFN matrices + biases; two layer norms
        analytic = 4 * d * d + 4 * d + 2 * d * ffn + ffn + d + 2 * 2 * d
        assert layer_param_count(d, ffn) == analytic
        counts = [trainable_count_for(EncoderConfig(), k) for k in range(5)]
        assert [b - a for a, b in zip(counts, counts[1:])] == [analytic] * 4

    def test_monotone_and_total(self):
        m = init_encoder(0)
        counts = []
        for k in range(5):
            set_freeze_policy(m, k)
            counts.append(count_trainable(m))
        assert all(b > a for a, b in zip(counts, counts[1:]))
        assert counts[-1] == sum(p.numel() for p in m.layers.parameters())

    def test_top_layers_only(self):
        m = init_encoder(0)
        set_freeze_policy(m, 2)
        trainable = {n.split(".")[1] for n, p in m.named_parameters() if p.requires_grad}
        assert trainable == {"2", "3"}
        assert not any(p.requires_grad for p in m.feature_encoder.parameters())

    def test_full_scale_table(self):
        published = [6.2e6, 13.5e6, 20.8e6, 27.1e6, 33.8e6]
        for k, ref in enumerate(published, start=1):
            got = trainable_count_for(BASE_CONFIG, k)
            assert abs(got - ref) / ref <= 0.15, (k, got)

    @pytest.mark.parametrize("k", range(5))
    def test_gradient_masking(self, k):
        m = init_encoder(0)
        set_freeze_policy(m, k)
        before = {n: p.detach().clone() for n, p in m.named_parameters()}
        # every parameter handed to the optimizer, including frozen ones
        opt = torch.optim.Adam(m.parameters(), lr=1e-2, weight_decay=1e-4)
        x = torch.from_numpy(np.random.default_rng(k).uniform(-1, 1, (2, 4000)).astype(np.float32))
        for _ in range(10):
            loss = m(x).final.pow(2).mean()
            opt.zero_grad()
            if loss.requires_grad:
                loss.backward()
            opt.step()
        for n, p in m.named_parameters():
            if p.requires_grad:
                continue
            assert torch.equal(p, before[n]), n
        if k:
            assert any(not torch.equal(p, before[n]) for n, p in m.named_parameters() if p.requires_grad)


class TestLayerWeightedSum:
    @pytest.fixture
    def output(self):
        g = torch.Generator().manual_seed(0)
        layers = [torch.randn(20, 8, generator=g, dtype=torch.float64) for _ in range(4)]
        return EncoderOutput(z=layers[0], layers=layers)

    def test_saturated(self, output):
        w = torch.tensor([0.0, 0.0, 20.0, 0.0])
        assert torch.allclose(layer_weighted_sum(output, w), output.layers[2], atol=1e-6)

    def test_uniform(self, output):
        got = layer_weighted_sum(output, torch.full((4,), 0.7))
        assert torch.allclose(got, sum(output.layers) / 4)

    def test_loop_oracle(self, output):
        w = np.random.default_rng(1).normal(size=4)
        e = np.exp(w - w.max())
        soft = e / e.sum()
        assert abs(soft.sum() - 1) < 1e-12 and ((soft > 0) & (soft < 1)).all()
        layers = [c.numpy() for c in output.layers]
        expected = np.zeros_like(layers[0])
        for t in range(expected.shape[0]):
            for j in range(expected.shape[1]):
                expected[t, j] = sum(soft[l] * layers[l][t, j] for l in range(4))
        np.testing.assert_allclose(layer_weighted_sum(output, torch.from_numpy(w)).numpy(), expected, atol=1e-6)

    def test_length_mismatch(self, output):
        with pytest.raises(ValueError):
            layer_weighted_sum(output, torch.zeros(3))
