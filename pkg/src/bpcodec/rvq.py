"""Residual vector quantizer with EMA codebooks and straight-through gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, CorruptionError, ShapeError

FRAME_RATE = 50


@dataclass
class RVQConfig:
    num_stages: int = 4
    codebook_size: int = 1024
    dim: int = 256
    ema_decay: float = 0.99
    commitment_weight: float = 0.25
    dead_code_threshold: float = 2.0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.num_stages < 0:
            raise ConfigurationError("num_stages must be >= 0")
        if self.codebook_size < 1 or self.dim < 1:
            raise ConfigurationError("codebook_size and dim must be positive")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ConfigurationError("ema_decay must lie in (0, 1]")
        if self.commitment_weight < 0:
            raise ConfigurationError("commitment_weight must be >= 0")

    @property
    def codebook_bits(self) -> int:
        return int(math.ceil(math.log2(self.codebook_size)))


def bitrate(cfg: RVQConfig, frame_rate: int = FRAME_RATE) -> float:
    """Payload bits per second: frame_rate * stages * log2(codebook_size)."""
    return frame_rate * cfg.num_stages * math.log2(cfg.codebook_size)


class ResidualVQ(nn.Module):
    """Multi-stage quantizer; stage ``i`` encodes what stages ``< i`` left over.

    Codebooks are EMA-learned buffers rather than gradient parameters, so
    they never appear in ``parameters()``.
    """

    def __init__(self, cfg: RVQConfig):
        super().__init__()
        self.cfg = cfg
        nq, k, d = cfg.num_stages, cfg.codebook_size, cfg.dim
        self.register_buffer("codebooks", torch.randn(nq, k, d) / math.sqrt(d))
        self.register_buffer("cluster_size", torch.full((nq, k), self._init_count))
        self.register_buffer("embed_sum", torch.zeros(nq, k, d))
        self.register_buffer("initialized", torch.tensor(False))
        self._sync_sums()

    @property
    def _init_count(self) -> float:
        return max(self.cfg.dead_code_threshold, 1.0)

    def _smoothed_counts(self, counts):
        eps, k = self.cfg.epsilon, self.cfg.codebook_size
        n = counts.sum(dim=-1, keepdim=True)
        return (counts + eps) / (n + k * eps) * n

    def _sync_sums(self):
        self.embed_sum.copy_(self.codebooks * self._smoothed_counts(self.cluster_size)[..., None])

    def set_codebooks(self, books: torch.Tensor):
        """Install explicit codewords (stages, K, dim) and reset EMA statistics."""
        if books.shape != self.codebooks.shape:
            raise ShapeError(f"expected codebooks {tuple(self.codebooks.shape)}, got {tuple(books.shape)}")
        self.codebooks.copy_(books)
        self.cluster_size.fill_(self._init_count)
        self._sync_sums()
        self.initialized.fill_(True)

    @staticmethod
    def _flatten(e):
        # (B, D, T) -> (B*T, D)
        return e.transpose(1, 2).reshape(-1, e.shape[1])

    @staticmethod
    def nearest(r: torch.Tensor, book: torch.Tensor) -> torch.Tensor:
        """Index of the closest codeword per row; ties go to the lowest index."""
        dist = (r.pow(2).sum(-1, keepdim=True) - 2 * r @ book.t()
                + book.pow(2).sum(-1)[None, :])
        return dist.argmin(dim=-1)

    def quantize(self, e: torch.Tensor, num_stages: int | None = None):
        """Quantize features ``e`` of shape (batch, dim, frames).

        Returns:
            codes: long tensor (batch, frames, stages).
            e_hat: sum of chosen codewords, wired so gradients pass straight
                through to ``e``.
            commitment: mean squared distance between ``e`` and the detached
                reconstruction.
        """
        if e.dim() != 3 or e.shape[1] != self.cfg.dim:
            raise ShapeError(f"expected (batch, {self.cfg.dim}, frames), got {tuple(e.shape)}")
        nq = self.cfg.num_stages if num_stages is None else num_stages
        b, d, t = e.shape
        flat = self._flatten(e.detach())
        books = self.codebooks.to(flat.dtype)
        residual = flat
        quantized = torch.zeros_like(flat)
        codes = []
        for i in range(nq):
            idx = self.nearest(residual, books[i])
            chosen = books[i][idx]
            quantized = quantized + chosen
            residual = residual - chosen
            codes.append(idx)
        if codes:
            codes = torch.stack(codes, dim=-1).reshape(b, t, nq)
        else:
            codes = torch.zeros(b, t, 0, dtype=torch.long, device=e.device)
        q = quantized.reshape(b, t, d).transpose(1, 2)
        commitment = (e - q.detach()).pow(2).mean() if e.numel() else e.sum() * 0
        e_hat = e + (q - e).detach()
        return codes, e_hat, commitment

    def forward(self, e):
        return self.quantize(e)

    def dequantize(self, codes: torch.Tensor) -> torch.Tensor:
        """Sum the selected codewords of each stage; (batch, frames, m) -> (batch, dim, frames).

        ``m`` may be any prefix length up to the number of stages.
        """
        if codes.dim() == 2:
            codes = codes[None]
        b, t, m = codes.shape
        if m > self.cfg.num_stages:
            raise CorruptionError(f"codes carry {m} stages, quantizer has {self.cfg.num_stages}")
        if codes.numel() and (codes.min() < 0 or codes.max() >= self.cfg.codebook_size):
            raise CorruptionError(f"code index outside [0, {self.cfg.codebook_size})")
        out = torch.zeros(b, t, self.cfg.dim, dtype=self.codebooks.dtype, device=codes.device)
        for i in range(m):
            out = out + self.codebooks[i][codes[..., i]]
        return out.transpose(1, 2)

    def stage_inputs(self, e: torch.Tensor, codes: torch.Tensor) -> list:
        """Residual fed to each stage, flattened to (batch*frames, dim)."""
        flat = self._flatten(e.detach())
        codes = codes.reshape(-1, codes.shape[-1])
        inputs, residual = [], flat
        for i in range(codes.shape[-1]):
            inputs.append(residual)
            residual = residual - self.codebooks[i][codes[:, i]]
        return inputs

    @torch.no_grad()
    def init_from_batch(self, e: torch.Tensor, generator: torch.Generator | None = None):
        """Seed each stage's codebook with residual vectors sampled from ``e``."""
        flat = self._flatten(e.detach()).to(self.codebooks.dtype)
        residual = flat
        k = self.cfg.codebook_size
        for i in range(self.cfg.num_stages):
            pick = torch.randint(0, residual.shape[0], (k,), generator=generator)
            self.codebooks[i].copy_(residual[pick])
            residual = residual - self.codebooks[i][self.nearest(residual, self.codebooks[i])]
        self.cluster_size.fill_(self._init_count)
        self._sync_sums()
        self.initialized.fill_(True)

    @torch.no_grad()
    def ema_update(self, e: torch.Tensor, codes: torch.Tensor,
                   generator: torch.Generator | None = None) -> int:
        """Move codewords toward the mean of the residuals assigned to them.

        Codewords whose EMA count falls below ``dead_code_threshold`` are
        re-seeded from random residuals of this batch. Returns the number
        of re-seeded codewords.
        """
        cfg = self.cfg
        gamma = cfg.ema_decay
        reseeded = 0
        inputs = self.stage_inputs(e.to(self.codebooks.dtype), codes)
        flat_codes = codes.reshape(-1, codes.shape[-1])
        for i, r in enumerate(inputs):
            idx = flat_codes[:, i]
            counts = torch.bincount(idx, minlength=cfg.codebook_size).to(r.dtype)
            sums = torch.zeros_like(self.embed_sum[i]).index_add_(0, idx, r)
            self.cluster_size[i].mul_(gamma).add_(counts, alpha=1 - gamma)
            self.embed_sum[i].mul_(gamma).add_(sums, alpha=1 - gamma)
            smoothed = self._smoothed_counts(self.cluster_size[i])
            self.codebooks[i].copy_(self.embed_sum[i] / smoothed[:, None])

            dead = self.cluster_size[i] < cfg.dead_code_threshold
            n_dead = int(dead.sum())
            if n_dead and r.shape[0]:
                pick = torch.randint(0, r.shape[0], (n_dead,), generator=generator)
                self.codebooks[i][dead] = r[pick]
                self.cluster_size[i][dead] = self._init_count
                smoothed = self._smoothed_counts(self.cluster_size[i])
                self.embed_sum[i][dead] = r[pick] * smoothed[dead][:, None]
                reseeded += n_dead
        return reseeded
