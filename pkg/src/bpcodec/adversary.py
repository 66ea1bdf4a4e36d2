"""Waveform and STFT discriminators plus the adversarial, feature-matching
and multi-scale mel reconstruction losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ContractError

SAMPLE_RATE = 16000


@dataclass
class DiscriminatorOutput:
    logits: list
    features: list  # one list of feature maps per scale

    def __add__(self, other: "DiscriminatorOutput") -> "DiscriminatorOutput":
        return DiscriminatorOutput(self.logits + other.logits, self.features + other.features)


@dataclass
class LossBundle:
    adv_g: float = 0.0
    adv_d: float = 0.0
    feat_match: float = 0.0
    recon_spectral: float = 0.0
    commitment: float = 0.0
    total_g: float = 0.0

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


class WaveDiscriminator(nn.Module):
    """Strided grouped-conv stack in the MelGAN style, for one waveform scale."""

    def __init__(self, channels=16, max_channels=256):
        super().__init__()
        c1 = channels
        c2 = min(c1 * 4, max_channels)
        c3 = min(c2 * 4, max_channels)
        c4 = min(c3 * 4, max_channels)
        self.layers = nn.ModuleList([
            nn.Conv1d(1, c1, 15, padding=7),
            nn.Conv1d(c1, c2, 41, stride=4, padding=20, groups=4),
            nn.Conv1d(c2, c3, 41, stride=4, padding=20, groups=16),
            nn.Conv1d(c3, c4, 41, stride=4, padding=20, groups=64 if c3 % 64 == 0 else 1),
            nn.Conv1d(c4, c4, 5, padding=2),
        ])
        self.head = nn.Conv1d(c4, 1, 3, padding=1)

    def forward(self, x):
        feats = []
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
            feats.append(x)
        return self.head(x), feats


class MultiScaleWaveDiscriminator(nn.Module):
    def __init__(self, scales=3, channels=16, max_channels=256):
        super().__init__()
        self.discriminators = nn.ModuleList(
            [WaveDiscriminator(channels, max_channels) for _ in range(scales)])
        self.pool = nn.AvgPool1d(4, stride=2, padding=2, count_include_pad=False)

    def forward(self, x) -> DiscriminatorOutput:
        out = DiscriminatorOutput([], [])
        for i, disc in enumerate(self.discriminators):
            if i:
                x = self.pool(x)
            logits, feats = disc(x)
            out.logits.append(logits)
            out.features.append(feats)
        return out


class STFTDiscriminator(nn.Module):
    """2-D conv stack over the complex STFT (real/imag as two channels).

    Uses a rectangular 1024-sample window, hop 256 and centered framing, so
    a 1 s input produces 63 frames and a constant input lands in bin 0 only.
    """

    def __init__(self, n_fft=1024, hop=256, channels=32):
        super().__init__()
        self.n_fft, self.hop = n_fft, hop
        self.register_buffer("window", torch.ones(n_fft), persistent=False)
        self.layers = nn.ModuleList([
            nn.Conv2d(2, channels, (7, 7), padding=(3, 3)),
            nn.Conv2d(channels, channels, (3, 3), stride=(1, 2), padding=(1, 1)),
            nn.Conv2d(channels, channels, (3, 3), stride=(1, 2), padding=(1, 1)),
            nn.Conv2d(channels, channels, (3, 3), stride=(2, 2), padding=(1, 1)),
        ])
        self.head = nn.Conv2d(channels, 1, (3, 3), padding=(1, 1))

    def stft_input(self, x):
        """(batch, 1, samples) -> (batch, 2, frames, n_fft // 2 + 1)."""
        if x.shape[-1] < self.n_fft:
            raise ConfigurationError(
                f"STFT discriminator needs at least {self.n_fft} samples, got {x.shape[-1]}")
        spec = torch.stft(x.reshape(-1, x.shape[-1]), self.n_fft, self.hop, window=self.window,
                          center=True, pad_mode="reflect", return_complex=True)
        return torch.stack([spec.real, spec.imag], dim=1).transpose(2, 3)

    def forward(self, x) -> DiscriminatorOutput:
        h = self.stft_input(x)
        feats = []
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.2)
            feats.append(h)
        return DiscriminatorOutput([self.head(h)], [feats])


class Discriminators(nn.Module):
    def __init__(self, wave_channels=16, stft_channels=32, max_channels=256):
        super().__init__()
        self.wave = MultiScaleWaveDiscriminator(3, wave_channels, max_channels)
        self.stft = STFTDiscriminator(channels=stft_channels)

    def forward(self, x) -> DiscriminatorOutput:
        return self.wave(x) + self.stft(x)


def wave_discriminate(x, disc: MultiScaleWaveDiscriminator) -> DiscriminatorOutput:
    return disc(x)


def stft_discriminate(x, disc: STFTDiscriminator) -> DiscriminatorOutput:
    return disc(x)


def adv_losses(real_logits, fake_logits):
    """Hinge losses averaged over scales; returns ``(adv_d, adv_g)``.

    ``adv_g`` is computed from ``fake_logits`` as given, so pass logits
    that still carry generator gradients when training the generator.
    """
    if len(real_logits) != len(fake_logits) or not real_logits:
        raise ContractError("real and fake outputs must have the same non-zero number of scales")
    adv_d = sum(F.relu(1 - r).mean() + F.relu(1 + f).mean()
                for r, f in zip(real_logits, fake_logits)) / len(real_logits)
    adv_g = sum(F.relu(1 - f).mean() for f in fake_logits) / len(fake_logits)
    return adv_d, adv_g


def feature_matching(real_feats, fake_feats, eps=1e-8):
    """Mean over all layers of L1(real, fake) / mean|real|.

    Accepts either flat lists of tensors or one list per scale.
    """
    real = _flatten_feats(real_feats)
    fake = _flatten_feats(fake_feats)
    if not real or len(real) != len(fake):
        raise ContractError(f"feature lists differ or are empty ({len(real)} vs {len(fake)})")
    terms = []
    for r, f in zip(real, fake):
        if r.shape != f.shape:
            raise ContractError(f"feature shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
        r = r.detach()
        terms.append((r - f).abs().mean() / r.abs().mean().clamp_min(eps))
    return torch.stack(terms).mean()


def _flatten_feats(feats):
    out = []
    for item in feats:
        if isinstance(item, (list, tuple)):
            out.extend(item)
        else:
            out.append(item)
    return out


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_fft: int, n_mels: int = 64, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    bins = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins[None] - lo) / (mid - lo)
    down = (hi - bins[None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down)).astype(np.float32)


class MultiScaleMelLoss(nn.Module):
    """Sum over window sizes 2^6..2^11 of L1 on mel magnitudes plus
    ``sqrt(w / 2)`` times the per-frame L2 norm of the log-mel difference."""

    def __init__(self, n_mels=64, sample_rate=SAMPLE_RATE, exponents=range(6, 12), eps=1e-5):
        super().__init__()
        self.windows = [2 ** i for i in exponents]
        self.eps = eps
        for w in self.windows:
            self.register_buffer(f"fb_{w}", torch.from_numpy(mel_filterbank(w, n_mels, sample_rate)),
                                 persistent=False)
            self.register_buffer(f"win_{w}", torch.hann_window(w), persistent=False)

    def mel(self, x, w):
        x = x.reshape(-1, x.shape[-1])
        spec = torch.stft(x, w, w // 4, window=getattr(self, f"win_{w}").to(x.dtype), center=True,
                          pad_mode="reflect", return_complex=True).abs()
        return getattr(self, f"fb_{w}").to(x.dtype) @ spec

    def forward(self, x, x_hat):
        if x.shape != x_hat.shape:
            raise ContractError(f"length mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
        total = x.new_zeros(())
        for w in self.windows:
            mx, my = self.mel(x, w), self.mel(x_hat, w)
            l1 = (mx - my).abs().mean()
            log_diff = torch.log(mx + self.eps) - torch.log(my + self.eps)
            l2 = torch.linalg.vector_norm(log_diff, dim=-2).mean()
            total = total + l1 + math.sqrt(w / 2) * l2
        return total


_default_mel_loss = None


def spectral_recon_loss(x, x_hat):
    global _default_mel_loss
    if _default_mel_loss is None:
        _default_mel_loss = MultiScaleMelLoss()
    return _default_mel_loss.to(x.device)(x, x_hat)
