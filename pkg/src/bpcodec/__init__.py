"""Low-bitrate neural speech codec with back-projection resampling and selective feature fusion."""

from .audio import AudioBuffer, load_wav, resample, save_wav
from .bitstream import BitstreamBlob, BitstreamHeader, pack, read_spc, unpack, write_spc
from .codec import BypassCodec, Codec
from .metrics import MetricReport, snr, stoi
from .model import CodecConfig
from .rvq import ResidualVQ, RVQConfig, bitrate

__all__ = [
    "AudioBuffer", "BitstreamBlob", "BitstreamHeader", "BypassCodec", "Codec", "CodecConfig",
    "MetricReport", "RVQConfig", "ResidualVQ", "bitrate", "load_wav", "pack", "read_spc",
    "resample", "save_wav", "snr", "stoi", "unpack", "write_spc",
]

__version__ = "0.1.0"
