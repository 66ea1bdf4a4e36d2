"""Causal convolutions, residual units, selective fusion and back-projection blocks.

All tensors are laid out as ``(batch, channels, frames)``. Every block is
causal: an output frame ``j`` of a stride-``s`` block only depends on input
frames ``<= j * s`` (downsampling) or ``<= j // s`` (upsampling).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    causal: bool = True
    transposed: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.dilation < 1:
            raise ConfigurationError(f"kernel, stride and dilation must be >= 1: {self}")
        if self.transposed and self.dilation != 1:
            raise ConfigurationError("transposed convolutions do not support dilation")
        if not self.causal:
            raise ConfigurationError("only causal convolutions are supported")


@dataclass(frozen=True)
class BackProjectionSpec:
    stride: int
    channels_in: int
    channels_out: int
    direction: Literal["down", "up"]
    kernel: int | None = None

    def __post_init__(self):
        if self.direction not in ("down", "up"):
            raise ConfigurationError(f"direction must be 'down' or 'up', got {self.direction!r}")
        if self.stride < 1:
            raise ConfigurationError("stride must be >= 1")

    @property
    def resample_kernel(self) -> int:
        return self.kernel if self.kernel is not None else self.stride


def _check_channels(x: torch.Tensor, expected: int, who: str):
    if x.dim() != 3 or x.shape[1] != expected:
        raise ShapeError(f"{who}: expected (batch, {expected}, frames), got {tuple(x.shape)}")


class CausalConv1d(nn.Module):
    """Strided/dilated 1-D convolution, left-padded by ``(kernel - 1) * dilation``.

    Output length is ``ceil(frames / stride)``.
    """

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, dilation=1, bias=True):
        super().__init__()
        ConvSpec(in_channels, out_channels, kernel, stride, dilation)
        self.in_channels = in_channels
        self.pad = (kernel - 1) * dilation
        self.conv = nn.Conv1d(in_channels, out_channels, kernel, stride=stride,
                              dilation=dilation, bias=bias)
        if bias:
            nn.init.zeros_(self.conv.bias)

    @classmethod
    def from_spec(cls, spec: ConvSpec) -> "CausalConv1d":
        if spec.transposed:
            raise ConfigurationError("use CausalConvTranspose1d for transposed specs")
        return cls(spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.dilation)

    @property
    def stride(self) -> int:
        return self.conv.stride[0]

    def forward(self, x):
        _check_channels(x, self.in_channels, "CausalConv1d")
        return self.conv(F.pad(x, (self.pad, 0)))


class CausalConvTranspose1d(nn.Module):
    """Transposed convolution whose right-side overhang is trimmed.

    Output length is exactly ``frames * stride``.
    """

    def __init__(self, in_channels, out_channels, kernel, stride, bias=True):
        super().__init__()
        ConvSpec(in_channels, out_channels, kernel, stride, transposed=True)
        self.in_channels = in_channels
        self.conv = nn.ConvTranspose1d(in_channels, out_channels, kernel, stride=stride, bias=bias)
        if bias:
            nn.init.zeros_(self.conv.bias)

    @classmethod
    def from_spec(cls, spec: ConvSpec) -> "CausalConvTranspose1d":
        if not spec.transposed:
            raise ConfigurationError("spec is not transposed")
        return cls(spec.in_channels, spec.out_channels, spec.kernel, spec.stride)

    @property
    def stride(self) -> int:
        return self.conv.stride[0]

    def forward(self, x):
        _check_channels(x, self.in_channels, "CausalConvTranspose1d")
        frames = x.shape[-1] * self.stride
        y = self.conv(x)
        if y.shape[-1] < frames:
            y = F.pad(y, (0, frames - y.shape[-1]))
        return y[..., :frames]


class ResidualUnit(nn.Module):
    """x + conv1x1(elu(conv_d3(elu(conv_d1(x)))))."""

    def __init__(self, channels, kernel=3, dilations=(1, 3)):
        super().__init__()
        self.channels = channels
        self.conv1 = CausalConv1d(channels, channels, kernel, dilation=dilations[0])
        self.conv2 = CausalConv1d(channels, channels, kernel, dilation=dilations[1])
        self.proj = CausalConv1d(channels, channels, 1)

    def forward(self, x):
        _check_channels(x, self.channels, "ResidualUnit")
        h = F.elu(self.conv1(x))
        h = F.elu(self.conv2(h))
        return x + self.proj(h)


class SelectiveFusion(nn.Module):
    """Two-branch attention fusion ``U = s1 * Z1 + s2 * Z2``.

    The branch sum is average-pooled over time, mapped by two parallel
    pointwise convolutions to per-channel descriptors, and a softmax over
    the branch axis yields the gates. ``pooling="global"`` pools the whole
    sequence (one gate pair per channel); ``pooling="causal"`` uses the
    running mean up to each frame so the block never looks ahead.
    """

    def __init__(self, channels, pooling: Literal["global", "causal"] = "global"):
        super().__init__()
        if pooling not in ("global", "causal"):
            raise ConfigurationError(f"unknown pooling {pooling!r}")
        self.channels = channels
        self.pooling = pooling
        self.fc1 = nn.Conv1d(channels, channels, 1)
        self.fc2 = nn.Conv1d(channels, channels, 1)
        nn.init.zeros_(self.fc1.bias)
        nn.init.zeros_(self.fc2.bias)

    def pool(self, z):
        if self.pooling == "global":
            return z.mean(dim=-1, keepdim=True)
        counts = torch.arange(1, z.shape[-1] + 1, device=z.device, dtype=z.dtype)
        return z.cumsum(dim=-1) / counts

    def gates(self, z1, z2):
        s = self.pool(z1 + z2)
        v = torch.stack([self.fc1(s), self.fc2(s)])
        g = torch.softmax(v, dim=0)
        return g[0], g[1]

    def forward(self, z1, z2, return_gates=False):
        if z1.shape != z2.shape:
            raise ShapeError(f"fusion inputs differ in shape: {tuple(z1.shape)} vs {tuple(z2.shape)}")
        _check_channels(z1, self.channels, "SelectiveFusion")
        s1, s2 = self.gates(z1, z2)
        # s1 * z1 + s2 * z2 with s2 = 1 - s1; this form returns z1 exactly when z1 == z2
        u = z2 + s1 * (z1 - z2)
        if return_gates:
            return u, (s1, s2)
        return u


class SDBP(nn.Module):
    """Selective down-sampling back-projection.

    ``y2 = down(y1)`` is projected back up, refined and compared with the
    input at its own resolution; the fused correction is downsampled again
    and added to ``y2``.
    """

    def __init__(self, spec: BackProjectionSpec, pooling="causal"):
        super().__init__()
        if spec.direction != "down":
            raise ConfigurationError("SDBP needs a 'down' spec")
        self.spec = spec
        cin, cout, s, k = spec.channels_in, spec.channels_out, spec.stride, spec.resample_kernel
        self.down = CausalConv1d(cin, cout, k, stride=s)
        self.up = CausalConvTranspose1d(cout, cin, k, s)
        self.r1 = ResidualUnit(cin)
        self.r2 = ResidualUnit(cin)
        self.fusion = SelectiveFusion(cin, pooling)
        self.down2 = CausalConv1d(cin, cout, k, stride=s)

    def forward(self, y1):
        _check_channels(y1, self.spec.channels_in, "SDBP")
        y2 = self.down(y1)
        y3 = self.r2(self.up(y2)[..., : y1.shape[-1]])
        fused = self.fusion(self.r1(y1), y3)
        return y2 + self.down2(fused)


class SUBP(nn.Module):
    """Selective up-sampling back-projection (mirror of :class:`SDBP`)."""

    def __init__(self, spec: BackProjectionSpec, pooling="causal"):
        super().__init__()
        if spec.direction != "up":
            raise ConfigurationError("SUBP needs an 'up' spec")
        self.spec = spec
        cin, cout, s, k = spec.channels_in, spec.channels_out, spec.stride, spec.resample_kernel
        self.up = CausalConvTranspose1d(cin, cout, k, s)
        self.down = CausalConv1d(cout, cin, k, stride=s)
        self.r1 = ResidualUnit(cin)
        self.r2 = ResidualUnit(cin)
        self.fusion = SelectiveFusion(cin, pooling)
        self.up2 = CausalConvTranspose1d(cin, cout, k, s)

    def forward(self, y1):
        _check_channels(y1, self.spec.channels_in, "SUBP")
        y2 = self.up(y1)
        y3 = self.r2(self.down(y2))
        fused = self.fusion(self.r1(y1), y3)
        return y2 + self.up2(fused)


def back_projection(spec: BackProjectionSpec, pooling="causal") -> nn.Module:
    return SDBP(spec, pooling) if spec.direction == "down" else SUBP(spec, pooling)
