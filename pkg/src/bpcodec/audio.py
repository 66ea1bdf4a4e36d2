"""WAV loading/saving, resampling and corpus segmentation for 16 kHz mono speech."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import ConfigurationError, ContractError, FormatError, UnsupportedError

SAMPLE_RATE = 16000
HOP_PRODUCT = 320
_PCM_SCALE = 32768.0


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ContractError("audio contains non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ContractError("audio samples must lie in [-1, 1]")

    def __len__(self):
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class ExcerptDataset:
    excerpts: list
    excerpt_length: int
    manifest: list = field(default_factory=list)

    def __len__(self):
        return len(self.excerpts)

    def as_array(self) -> np.ndarray:
        if not self.excerpts:
            return np.zeros((0, self.excerpt_length), dtype=np.float32)
        return np.stack([e.samples for e in self.excerpts])


def load_wav(path) -> AudioBuffer:
    """Read a PCM16 mono RIFF/WAVE file.

    Samples are scaled by 1/32768, so -32768 maps to -1.0 and 32767 to
    32767/32768.

    Raises:
        FormatError: the file is not 16-bit PCM mono WAVE.
        OSError: the file is missing or its data chunk is truncated.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            if wf.getcomptype() != "NONE":
                raise FormatError(f"{path}: compressed WAVE is not supported")
            if width != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
            if channels != 1:
                raise FormatError(f"{path}: expected mono, got {channels} channels")
            raw = wf.readframes(nframes)
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise OSError(f"{path}: truncated WAVE header") from exc
    if len(raw) != 2 * nframes:
        raise OSError(f"{path}: truncated data chunk ({len(raw)} of {2 * nframes} bytes)")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float32) / _PCM_SCALE, rate)


def save_wav(buffer: AudioBuffer, path) -> None:
    pcm = np.clip(np.round(buffer.samples.astype(np.float64) * _PCM_SCALE), -32768, 32767)
    path = Path(path)
    with open(path, "wb") as fh, wave.open(fh, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(buffer.sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


def resample(buffer: AudioBuffer, target_rate: int, taps_per_phase: int = 64,
             kaiser_beta: float = 8.6) -> AudioBuffer:
    """Downsample with a polyphase Kaiser-windowed sinc low-pass.

    The cutoff sits at 0.9 of the target Nyquist frequency and the output
    has ``round(T * target / source)`` samples.
    """
    source_rate = buffer.sample_rate
    target_rate = int(target_rate)
    if target_rate > source_rate:
        raise UnsupportedError(f"upsampling {source_rate} -> {target_rate} Hz is not supported")
    if target_rate == source_rate:
        return AudioBuffer(buffer.samples.copy(), source_rate)
    g = math.gcd(source_rate, target_rate)
    up, down = target_rate // g, source_rate // g
    n_out = int(round(len(buffer) * target_rate / source_rate))
    if len(buffer) == 0:
        return AudioBuffer(np.zeros(0, dtype=np.float32), target_rate)
    # phases of the slower side of the rational ratio, so the transition band stays narrow
    numtaps = taps_per_phase * max(up, down)
    if numtaps % 2 == 0:
        numtaps += 1
    # unit DC gain; resample_poly applies the factor ``up`` itself
    h = signal.firwin(numtaps, 0.9 / max(up, down), window=("kaiser", kaiser_beta))
    out = signal.resample_poly(buffer.samples.astype(np.float64), up, down, window=h)
    if out.shape[0] >= n_out:
        out = out[:n_out]
    else:
        out = np.pad(out, (0, n_out - out.shape[0]))
    return AudioBuffer(np.clip(out, -1.0, 1.0), target_rate)


def find_wavs(root) -> list:
    return sorted(p for p in Path(root).rglob("*") if p.suffix.lower() == ".wav" and p.is_file())


def segment_corpus(root, excerpt_length: int, seed: int, num_excerpts: int | None = None,
                   sample_rate: int = SAMPLE_RATE) -> ExcerptDataset:
    """Cut fixed-length excerpts at seeded random offsets from every WAV under ``root``.

    Without ``num_excerpts`` each file yields ``max(1, len // excerpt_length)``
    excerpts. With it, files are visited round-robin in a seeded order, so
    every file appears at least once whenever ``num_excerpts`` is at least
    the number of files. Files shorter than an excerpt are zero-padded at
    the tail. Files at another sample rate are downsampled first.
    """
    if excerpt_length <= 0 or excerpt_length % HOP_PRODUCT:
        raise ConfigurationError(f"excerpt_length must be a positive multiple of {HOP_PRODUCT}")
    paths = find_wavs(root)
    if not paths:
        raise ConfigurationError(f"no .wav files under {root}")
    rng = np.random.default_rng(seed)
    audio = []
    for p in paths:
        buf = load_wav(p)
        if buf.sample_rate != sample_rate:
            buf = resample(buf, sample_rate)
        audio.append(buf.samples)

    if num_excerpts is None:
        plan = [i for i, a in enumerate(audio) for _ in range(max(1, len(a) // excerpt_length))]
    else:
        order = rng.permutation(len(paths))
        plan = [int(order[k % len(paths)]) for k in range(num_excerpts)]

    excerpts, manifest = [], []
    for i in plan:
        a = audio[i]
        if len(a) <= excerpt_length:
            offset = 0
            chunk = np.pad(a, (0, excerpt_length - len(a)))
        else:
            offset = int(rng.integers(0, len(a) - excerpt_length + 1))
            chunk = a[offset:offset + excerpt_length]
        excerpts.append(AudioBuffer(chunk, sample_rate))
        manifest.append((str(paths[i]), offset))
    return ExcerptDataset(excerpts, excerpt_length, manifest)
