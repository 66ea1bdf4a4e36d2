"""Encoder/decoder assembly, ablation variants and parameter accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import AudioBuffer
from .blocks import SDBP, SUBP, BackProjectionSpec, CausalConv1d, CausalConvTranspose1d
from .errors import ConfigurationError, ShapeError

SAMPLE_RATE = 16000


@dataclass
class CodecConfig:
    sample_rate: int = SAMPLE_RATE
    strides: tuple = (2, 4, 5, 8)
    base_channels: int = 32
    embedding_dim: int = 256
    ablate_sdbp: bool = False
    ablate_subp: bool = False
    input_kernel: int = 7
    output_kernel: int = 3
    # resampling conv kernel = kernel_factor * stride
    kernel_factor: int = 1

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigurationError(f"only {SAMPLE_RATE} Hz is supported, got {self.sample_rate}")
        if self.strides and math.prod(self.strides) != 320:
            raise ConfigurationError(f"stride product must be 320 (50 Hz frames), got {self.strides}")
        if self.base_channels < 1 or self.embedding_dim < 1 or self.kernel_factor < 1:
            raise ConfigurationError("channel counts and kernel_factor must be positive")

    @property
    def hop_length(self) -> int:
        return math.prod(self.strides)

    @property
    def channels(self) -> list:
        return [self.base_channels * 2 ** i for i in range(len(self.strides) + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        return d


class Encoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.conv_in = CausalConv1d(1, ch[0], cfg.input_kernel)
        stages = []
        for i, s in enumerate(cfg.strides):
            k = cfg.kernel_factor * s
            if cfg.ablate_sdbp:
                stages.append(CausalConv1d(ch[i], ch[i + 1], k, stride=s))
            else:
                stages.append(SDBP(BackProjectionSpec(s, ch[i], ch[i + 1], "down", k)))
        self.stages = nn.ModuleList(stages)
        self.conv_out = CausalConv1d(ch[-1], cfg.embedding_dim, cfg.output_kernel)

    def forward(self, x):
        """(batch, 1, samples) -> (batch, embedding_dim, ceil(samples / hop))."""
        h = self.conv_in(x)
        for stage in self.stages:
            h = stage(F.elu(h))
        return self.conv_out(F.elu(h))


class Decoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels[::-1]
        strides = cfg.strides[::-1]
        self.conv_in = CausalConv1d(cfg.embedding_dim, ch[0], cfg.output_kernel)
        stages = []
        for i, s in enumerate(strides):
            k = cfg.kernel_factor * s
            if cfg.ablate_subp:
                stages.append(CausalConvTranspose1d(ch[i], ch[i + 1], k, s))
            else:
                stages.append(SUBP(BackProjectionSpec(s, ch[i], ch[i + 1], "up", k)))
        self.stages = nn.ModuleList(stages)
        self.conv_out = CausalConv1d(ch[-1], 1, cfg.input_kernel)

    def forward(self, e):
        """(batch, embedding_dim, frames) -> (batch, 1, frames * hop) in [-1, 1]."""
        if e.dim() != 3 or e.shape[1] != self.cfg.embedding_dim:
            raise ShapeError(f"expected (batch, {self.cfg.embedding_dim}, frames), got {tuple(e.shape)}")
        h = self.conv_in(e)
        for stage in self.stages:
            h = stage(F.elu(h))
        return torch.tanh(self.conv_out(F.elu(h)))


def build_codec(config: CodecConfig, seed: int = 0):
    """Create an (encoder, decoder) pair whose weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        enc = Encoder(config)
        dec = Decoder(config)
    return enc, dec


def pad_to_hop(x: torch.Tensor, hop: int = 320) -> torch.Tensor:
    rem = (-x.shape[-1]) % hop
    if x.shape[-1] == 0:
        rem = hop
    return F.pad(x, (0, rem)) if rem else x


def audio_to_tensor(x: AudioBuffer, sample_rate: int = SAMPLE_RATE) -> torch.Tensor:
    if x.sample_rate != sample_rate:
        raise ConfigurationError(f"codec expects {sample_rate} Hz audio, got {x.sample_rate} Hz")
    return torch.from_numpy(np.ascontiguousarray(x.samples, dtype=np.float32))[None, None]


def encode_features(x: AudioBuffer, enc: Encoder) -> torch.Tensor:
    """Encode a buffer into (1, embedding_dim, ceil(T / 320)) features."""
    wav = pad_to_hop(audio_to_tensor(x, enc.cfg.sample_rate), enc.cfg.hop_length)
    return enc(wav)


def decode_features(e_hat: torch.Tensor, dec: Decoder, original_length: int) -> AudioBuffer:
    if e_hat.dim() == 2:
        e_hat = e_hat[None]
    if e_hat.shape[1] != dec.cfg.embedding_dim:
        raise ShapeError(f"expected {dec.cfg.embedding_dim} feature channels, got {e_hat.shape[1]}")
    wav = dec(e_hat)[0, 0, :original_length].clamp(-1.0, 1.0)
    return AudioBuffer(wav.detach().cpu().numpy(), dec.cfg.sample_rate)


def count_parameters(module: nn.Module | None) -> int:
    if module is None:
        return 0
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def param_count(enc=None, dec=None, quantizer=None, discriminators=None) -> dict:
    """Trainable scalars per component plus a ``total``.

    ``total`` covers the codec (encoder, quantizer, decoder). Discriminator
    weights are reported but left out of it. EMA codebooks are buffers,
    so the quantizer contributes no trainable scalars.
    """
    counts = {
        "encoder": count_parameters(enc),
        "quantizer": count_parameters(quantizer),
        "decoder": count_parameters(dec),
    }
    counts["total"] = sum(counts.values())
    if discriminators is not None:
        counts["discriminators"] = count_parameters(discriminators)
    return counts


def has_fusion(module: nn.Module) -> bool:
    from .blocks import SelectiveFusion

    return any(isinstance(m, SelectiveFusion) for m in module.modules())
