"""End-to-end codec: encoder, residual quantizer, decoder and ``.spc`` I/O."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch
from torch import nn

from .audio import AudioBuffer
from .bitstream import BitstreamBlob, BitstreamHeader, pack, unpack
from .checkpoint import load_archive, save_archive
from .errors import ContractError, CorruptionError, IncompatibilityError
from .model import (CodecConfig, audio_to_tensor, build_codec, decode_features, encode_features,
                    param_count)
from .rvq import ResidualVQ, RVQConfig, bitrate


class Codec(nn.Module):
    def __init__(self, config: CodecConfig | None = None, rvq: RVQConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or CodecConfig()
        rvq = rvq or RVQConfig(dim=self.config.embedding_dim)
        if rvq.dim != self.config.embedding_dim:
            raise ContractError("quantizer dim must equal the encoder embedding dim")
        self.encoder, self.decoder = build_codec(self.config, seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed + 1)
            self.quantizer = ResidualVQ(rvq)

    @property
    def rvq_config(self) -> RVQConfig:
        return self.quantizer.cfg

    @property
    def num_stages(self) -> int:
        return self.quantizer.cfg.num_stages

    def forward(self, wav):
        """Training path on (batch, 1, samples) with samples a multiple of the hop.

        Returns ``(x_hat, e, codes, commitment)``.
        """
        e = self.encoder(wav)
        codes, e_hat, commitment = self.quantizer.quantize(e)
        return self.decoder(e_hat), e, codes, commitment

    @torch.no_grad()
    def encode_codes(self, buffer: AudioBuffer) -> np.ndarray:
        e = encode_features(buffer, self.encoder)
        codes, _, _ = self.quantizer.quantize(e)
        return codes[0].cpu().numpy()

    @torch.no_grad()
    def decode_codes(self, codes, original_length: int) -> AudioBuffer:
        codes = torch.as_tensor(np.asarray(codes), dtype=torch.long)
        e_hat = self.quantizer.dequantize(codes[None])
        return decode_features(e_hat, self.decoder, original_length)

    def encode(self, buffer: AudioBuffer) -> BitstreamBlob:
        if len(buffer) == 0:
            raise ContractError("cannot encode zero-length audio")
        codes = self.encode_codes(buffer)
        header = BitstreamHeader(num_stages=self.num_stages, frame_count=codes.shape[0],
                                 original_length=len(buffer), sample_rate=self.config.sample_rate)
        return pack(codes, header)

    def decode(self, blob: BitstreamBlob) -> AudioBuffer:
        header, codes = unpack(blob)
        if header.num_stages != self.num_stages:
            raise IncompatibilityError(
                f"bitstream has {header.num_stages} quantizer stages, model has {self.num_stages}")
        if header.sample_rate != self.config.sample_rate:
            raise IncompatibilityError(
                f"bitstream is {header.sample_rate} Hz, model is {self.config.sample_rate} Hz")
        return self.decode_codes(codes, header.original_length)

    def bitrate(self) -> float:
        return bitrate(self.rvq_config)

    def param_count(self, discriminators=None) -> dict:
        return param_count(self.encoder, self.decoder, self.quantizer, discriminators)

    def archive_payload(self) -> dict:
        return {
            "codec_config": self.config.to_dict(),
            "rvq_config": asdict(self.rvq_config),
            "generator": {k: v for k, v in self.state_dict().items()
                          if not k.startswith("quantizer.")},
            "quantizer": self.quantizer.state_dict(),
        }

    def save(self, path):
        return save_archive(self.archive_payload(), path)

    @classmethod
    def from_payload(cls, payload: dict) -> "Codec":
        codec = cls(CodecConfig(**payload["codec_config"]), RVQConfig(**payload["rvq_config"]))
        result = codec.load_state_dict(payload["generator"], strict=False)
        missing = [k for k in result.missing_keys if not k.startswith("quantizer.")]
        if missing or result.unexpected_keys:
            raise CorruptionError(f"checkpoint parameters do not match the config: "
                                  f"missing={missing[:3]} unexpected={result.unexpected_keys[:3]}")
        codec.quantizer.load_state_dict(payload["quantizer"])
        return codec.eval()

    @classmethod
    def load(cls, path) -> "Codec":
        return cls.from_payload(load_archive(path))


class BypassCodec:
    """Identity stand-in with the codec's encode/decode surface; used for eval baselines."""

    num_stages = 0

    def encode(self, buffer: AudioBuffer):
        return buffer

    def decode(self, payload) -> AudioBuffer:
        return payload

    def bitrate(self) -> float:
        return float("nan")
