import pytest
import torch

from duetmotion.denoiser_net import (
    MotionDenoiser,
    NetConfig,
    build_denoiser,
    gradient_check,
    timestep_embedding,
)

TINY = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16, num_layers=1, num_heads=2)


def randomize_(net: MotionDenoiser, seed: int) -> MotionDenoiser:
    # perturb every weight so the zero-init paths carry signal
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=g))
    return net


def make_inputs(cfg: NetConfig, b=2, n=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, cfg.num_persons, n, cfg.token_dim, generator=g)
    t = torch.randint(0, 1000, (b,), generator=g)
    c = torch.randn(b, cfg.cond_dim, generator=g)
    return x, t, c


class TestTimestepEmbedding:
    def test_shape_and_range(self):
        emb = timestep_embedding(torch.tensor([0, 1, 999]), 16)
        assert emb.shape == (3, 16)
        assert float(emb.abs().max()) <= 1.0

    def test_t_zero_is_cos_one_sin_zero(self):
        emb = timestep_embedding(torch.tensor([0]), 8)
        assert torch.equal(emb[0, :4], torch.ones(4, dtype=torch.float64))
        assert torch.equal(emb[0, 4:], torch.zeros(4, dtype=torch.float64))

    def test_distinct_timesteps_distinct_codes(self):
        emb = timestep_embedding(torch.arange(100), 32)
        assert len({tuple(row.tolist()) for row in emb}) == 100


class TestBuildDenoiser:
    def test_untrained_output_is_exactly_zero(self):
        net = build_denoiser(TINY, torch.Generator().manual_seed(0))
        x, t, c = make_inputs(TINY)
        out = net(x, t, c)
        assert out.shape == (2, 2, 4, TINY.out_dim)
        assert torch.equal(out, torch.zeros_like(out))

    def test_init_is_seed_deterministic(self):
        a = build_denoiser(TINY, torch.Generator().manual_seed(7))
        b = build_denoiser(TINY, torch.Generator().manual_seed(7))
        c = build_denoiser(TINY, torch.Generator().manual_seed(8))
        names = [n for n, _ in a.named_parameters()]
        pa, pb, pc = (dict(m.named_parameters()) for m in (a, b, c))
        assert all(torch.equal(pa[n], pb[n]) for n in names)
        assert any(not torch.equal(pa[n], pc[n]) for n in names)

    def test_person_embedding_is_drawn(self):
        net = build_denoiser(TINY, torch.Generator().manual_seed(1))
        pe = net.person_embed.detach()
        assert not torch.equal(pe, torch.zeros_like(pe))
        assert float(pe.abs().max()) < 0.2

    def test_single_frame_works(self):
        cfg = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16,
                        num_layers=1, num_heads=2, temporal=False)
        net = build_denoiser(cfg, torch.Generator().manual_seed(2))
        x = torch.randn(3, 2, 1, 6)
        out = net(x, torch.zeros(3, dtype=torch.long), torch.zeros(3, 4))
        assert out.shape == (3, 2, 1, 5)

    def test_rejects_bad_shapes(self):
        net = build_denoiser(TINY, torch.Generator().manual_seed(3))
        with pytest.raises(ValueError, match="persons"):
            net(torch.zeros(2, 3, 4, 6), torch.zeros(2, dtype=torch.long), torch.zeros(2, 4))
        with pytest.raises(ValueError, match="feature dim"):
            net(torch.zeros(2, 2, 4, 7), torch.zeros(2, dtype=torch.long), torch.zeros(2, 4))

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=15, num_heads=2)
        with pytest.raises(ValueError):
            NetConfig(token_dim=0, out_dim=5, cond_dim=4)
        with pytest.raises(ValueError):
            NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16, num_heads=2,
                      temporal=False, cond_token=True)

    def test_cond_token_keeps_frame_count_and_zero_init(self):
        cfg = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16,
                        num_layers=1, num_heads=2, cond_token=True)
        net = build_denoiser(cfg, torch.Generator().manual_seed(0))
        x, t, c = make_inputs(cfg)
        out = net(x, t, c)
        assert out.shape == (2, 2, 4, cfg.out_dim)
        assert torch.equal(out, torch.zeros_like(out))


class TestInformationFlow:
    def test_no_temporal_mixing_when_disabled(self):
        cfg = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16,
                        num_layers=2, num_heads=2, temporal=False)
        net = randomize_(build_denoiser(cfg, torch.Generator().manual_seed(4)), 40)
        x, t, c = make_inputs(cfg, b=1, n=5)
        base = net(x, t, c)
        x2 = x.clone()
        x2[:, :, 2, :] += 1.0
        out = net(x2, t, c)
        assert not torch.equal(out[:, :, 2], base[:, :, 2])
        keep = [0, 1, 3, 4]
        assert torch.equal(out[:, :, keep], base[:, :, keep])

    def test_temporal_mixing_when_enabled(self):
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(5)), 50)
        x, t, c = make_inputs(TINY, b=1, n=5)
        base = net(x, t, c)
        x2 = x.clone()
        x2[:, :, 2, :] += 1.0
        out = net(x2, t, c)
        assert not torch.equal(out[:, :, 0], base[:, :, 0])

    def test_persons_see_each_other(self):
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(6)), 60)
        x, t, c = make_inputs(TINY, b=1, n=3)
        base = net(x, t, c)
        x2 = x.clone()
        x2[:, 1] += 1.0
        out = net(x2, t, c)
        assert not torch.equal(out[:, 0], base[:, 0])

    def test_batch_elements_independent(self):
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(7)), 70)
        x, t, c = make_inputs(TINY, b=3, n=4)
        full = net(x, t, c)
        x2 = x.clone()
        x2[1] += 1.0
        out = net(x2, t, c)
        assert not torch.equal(out[1], full[1])
        assert torch.equal(out[0], full[0])
        assert torch.equal(out[2], full[2])

    def test_batch_concat_matches_per_element_within_tol(self):
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(12)), 120)
        x, t, c = make_inputs(TINY, b=4, n=4)
        full = net(x, t, c)
        for i in range(4):
            one = net(x[i : i + 1], t[i : i + 1], c[i : i + 1])
            assert float((full[i : i + 1] - one).detach().abs().max()) < 1e-6

    def test_person_identity_breaks_swap_symmetry(self):
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(8)), 80)
        x, t, c = make_inputs(TINY, b=1, n=3)
        swapped = net(x.flip(1), t, c).flip(1)
        assert not torch.allclose(net(x, t, c), swapped)

    def test_swap_equivariance_with_swapped_person_embeddings(self):
        # the only person-asymmetric parameter is the embedding, so swapping
        # its rows together with the input persons must swap the outputs
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(11)), 110)
        x, t, c = make_inputs(TINY, b=2, n=3)
        base = net(x, t, c)
        with torch.no_grad():
            net.person_embed.copy_(net.person_embed.flip(0))
        swapped = net(x.flip(1), t, c)
        assert float((swapped - base.flip(1)).detach().abs().max()) < 1e-6

    def test_timestep_and_condition_sensitivity(self):
        net = randomize_(build_denoiser(TINY, torch.Generator().manual_seed(9)), 90)
        x, t, c = make_inputs(TINY, b=2, n=3)
        base = net(x, t, c)
        assert not torch.equal(net(x, t + 1, c), base)
        assert not torch.equal(net(x, t, c + 1.0), base)

    def test_cond_token_feeds_every_frame(self):
        cfg = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16,
                        num_layers=1, num_heads=2, cond_token=True)
        net = randomize_(build_denoiser(cfg, torch.Generator().manual_seed(12)), 120)
        x, t, c = make_inputs(cfg, b=1, n=5)
        delta = (net(x, t, c + 1.0) - net(x, t, c)).abs()
        assert bool((delta.amax(dim=(0, 1, 3)) > 0).all())


class TestGradientCheck:
    def _double_net(self, temporal: bool, seed: int) -> MotionDenoiser:
        cfg = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16,
                        num_layers=1, num_heads=2, temporal=temporal)
        net = randomize_(build_denoiser(cfg, torch.Generator().manual_seed(seed)), seed + 1)
        return net.double()

    def test_autograd_matches_central_differences(self):
        net = self._double_net(temporal=True, seed=10)
        g = torch.Generator().manual_seed(11)
        x = torch.randn(2, 2, 3, 6, generator=g, dtype=torch.float64)
        t = torch.tensor([17, 903])
        c = torch.randn(2, 4, generator=g, dtype=torch.float64)
        target = torch.randn(2, 2, 3, 5, generator=g, dtype=torch.float64)
        report = gradient_check(
            lambda: ((net(x, t, c) - target) ** 2).mean(),
            net,
            torch.Generator().manual_seed(12),
            num_coords=24,
        )
        assert len(report["records"]) >= 20
        assert len({r["param"] for r in report["records"]}) > 5
        assert report["max_rel_dev"] < 1e-3

    def test_constant_loss_gives_zero_gradients(self):
        net = self._double_net(temporal=False, seed=14)
        report = gradient_check(
            lambda: (net.head.weight * 0.0).sum(),
            net,
            torch.Generator().manual_seed(15),
            num_coords=20,
        )
        assert report["max_rel_dev"] == 0.0
        assert all(r["analytic"] == 0.0 and r["numeric"] == 0.0 for r in report["records"])
        assert report["passed"]

    def test_report_is_seed_deterministic(self):
        net = self._double_net(temporal=False, seed=16)
        g = torch.Generator().manual_seed(17)
        x = torch.randn(1, 2, 2, 6, generator=g, dtype=torch.float64)
        t = torch.tensor([5])
        c = torch.randn(1, 4, generator=g, dtype=torch.float64)
        loss = lambda: (net(x, t, c) ** 2).mean()
        a = gradient_check(loss, net, torch.Generator().manual_seed(18), num_coords=20)
        b = gradient_check(loss, net, torch.Generator().manual_seed(18), num_coords=20)
        assert a == b

    def test_rejects_float32_module(self):
        cfg = NetConfig(token_dim=6, out_dim=5, cond_dim=4, latent_dim=16,
                        num_layers=1, num_heads=2)
        net = build_denoiser(cfg, torch.Generator().manual_seed(13))
        with pytest.raises(ValueError, match="float64"):
            gradient_check(lambda: net.head.weight.sum(), net, torch.Generator())
