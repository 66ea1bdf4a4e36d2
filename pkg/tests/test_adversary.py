import numpy as np
import pytest
import torch

from bpcodec.adversary import (Discriminators, MultiScaleMelLoss, MultiScaleWaveDiscriminator,
                               STFTDiscriminator, adv_losses, feature_matching, mel_filterbank,
                               spectral_recon_loss, stft_discriminate, wave_discriminate)
from bpcodec.errors import ConfigurationError, ContractError


def zero_biases(module):
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    return module


def test_wave_scales_shrink():
    out = wave_discriminate(torch.randn(1, 1, 16000), MultiScaleWaveDiscriminator())
    lengths = [l.shape[-1] for l in out.logits]
    assert len(lengths) == 3
    assert lengths[0] > lengths[1] > lengths[2]
    assert all(len(f) > 0 for f in out.features)


def test_wave_zero_input_zero_logits():
    disc = zero_biases(MultiScaleWaveDiscriminator())
    out = disc(torch.zeros(1, 1, 4000))
    assert all(not l.any() for l in out.logits)


def test_wave_not_shift_invariant():
    torch.manual_seed(0)
    disc = MultiScaleWaveDiscriminator()
    x = torch.randn(1, 1, 4000)
    shifted = torch.roll(x, 4, dims=-1)
    a, b = disc(x), disc(shifted)
    assert not torch.allclose(a.logits[0], b.logits[0])


def test_stft_frames_for_one_second():
    disc = STFTDiscriminator()
    spec = disc.stft_input(torch.randn(1, 1, 16000))
    assert spec.shape == (1, 2, 63, 513)
    out = stft_discriminate(torch.randn(1, 1, 16000), disc)
    assert len(out.logits) == 1 and len(out.features[0]) > 0


def test_stft_dc_lands_in_bin_zero():
    spec = STFTDiscriminator().stft_input(torch.full((1, 1, 4096), 0.25))
    energy = spec.pow(2).sum(dim=(0, 1, 2))
    assert energy[0] > 0
    assert energy[1:].max() <= 1e-9 * energy[0]


def test_stft_zero_input_zero_logits():
    disc = zero_biases(STFTDiscriminator())
    assert not disc(torch.zeros(1, 1, 2048)).logits[0].any()


def test_stft_too_short():
    with pytest.raises(ConfigurationError):
        STFTDiscriminator()(torch.zeros(1, 1, 1000))


def test_combined_discriminator_structure():
    out = Discriminators()(torch.randn(2, 1, 3200))
    assert len(out.logits) == len(out.features) == 4


def test_hinge_saturation_and_origin():
    real = [torch.full((2, 5), 1.5), torch.ones(3)]
    fake = [torch.full((2, 5), -2.0), -torch.ones(3)]
    adv_d, _ = adv_losses(real, fake)
    assert float(adv_d) == 0.0
    zeros = [torch.zeros(4), torch.zeros(2, 2)]
    adv_d, adv_g = adv_losses(zeros, zeros)
    assert float(adv_d) == 2.0
    assert float(adv_g) == 1.0


def test_hinge_matches_loop(rng):
    real = [torch.as_tensor(rng.normal(size=n)) for n in (7, 3, 11)]
    fake = [torch.as_tensor(rng.normal(size=n)) for n in (7, 3, 11)]
    adv_d, adv_g = adv_losses(real, fake)
    d_terms, g_terms = [], []
    for r, f in zip(real, fake):
        d_terms.append(sum(max(0.0, 1 - v) for v in r.tolist()) / len(r)
                       + sum(max(0.0, 1 + v) for v in f.tolist()) / len(f))
        g_terms.append(sum(max(0.0, 1 - v) for v in f.tolist()) / len(f))
    assert float(adv_d) == pytest.approx(np.mean(d_terms), abs=1e-6)
    assert float(adv_g) == pytest.approx(np.mean(g_terms), abs=1e-6)


def test_feature_matching_identity_and_offset(rng):
    real = [[torch.as_tensor(rng.normal(size=(1, 3, 8))) for _ in range(2)],
            [torch.as_tensor(rng.normal(size=(1, 2, 4)))]]
    assert float(feature_matching(real, real)) == 0.0
    fake = [[real[0][0], real[0][1] + 0.3], [real[1][0]]]
    expected = 0.3 / real[0][1].abs().mean().item() / 3
    assert float(feature_matching(real, fake)) == pytest.approx(expected, rel=1e-9)


def test_feature_matching_contracts():
    with pytest.raises(ContractError):
        feature_matching([], [])
    with pytest.raises(ContractError):
        feature_matching([torch.ones(3)], [torch.ones(3), torch.ones(3)])


def test_mel_filterbank_shape():
    fb = mel_filterbank(1024, 64)
    assert fb.shape == (64, 513)
    assert fb.min() >= 0 and fb.max() <= 1
    assert (fb.sum(axis=1) > 0).all()


def test_recon_loss_properties():
    t = torch.arange(8000) / 16000
    sine = (0.5 * torch.sin(2 * torch.pi * 440 * t))[None, None]
    silence = torch.zeros_like(sine)
    assert float(spectral_recon_loss(sine, sine)) == 0.0
    assert float(spectral_recon_loss(sine, silence)) > 0
    noisy = sine + 0.05 * torch.randn_like(sine)
    loss = MultiScaleMelLoss()
    l1_ab = sum((loss.mel(sine, w) - loss.mel(noisy, w)).abs().mean() for w in loss.windows)
    l1_ba = sum((loss.mel(noisy, w) - loss.mel(sine, w)).abs().mean() for w in loss.windows)
    assert float(l1_ab) == pytest.approx(float(l1_ba), rel=1e-12)
    assert float(loss(sine, noisy)) == pytest.approx(float(loss(noisy, sine)), rel=1e-5)
    with pytest.raises(ContractError):
        spectral_recon_loss(sine, sine[..., :-1])


def test_recon_loss_gradient_finite_at_equality():
    x = torch.randn(1, 1, 4000) * 0.1
    y = x.clone().requires_grad_(True)
    spectral_recon_loss(x, y).backward()
    assert torch.isfinite(y.grad).all()


def test_discriminator_training_lowers_hinge():
    torch.manual_seed(0)
    disc = Discriminators(wave_channels=4, stft_channels=8)
    opt = torch.optim.Adam(disc.parameters(), lr=1e-4, betas=(0.5, 0.9))
    g = torch.Generator().manual_seed(1)
    real = torch.sin(torch.arange(2048) * 0.05)[None, None].repeat(2, 1, 1) * 0.5
    fake = 0.3 * torch.randn(2, 1, 2048, generator=g)
    history = []
    for _ in range(200):
        opt.zero_grad()
        adv_d, _ = adv_losses(disc(real).logits, disc(fake).logits)
        adv_d.backward()
        opt.step()
        history.append(adv_d.item())
    assert np.mean(history[-20:]) < np.mean(history[:20])
