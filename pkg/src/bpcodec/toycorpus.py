"""Synthetic speech-like corpus for desk-scale training and tests.

Utterances are chains of syllables: a voiced nucleus (glottal
pulse train with a drifting pitch, shaped by three formant resonators)
optionally preceded by a noise fricative, separated by short pauses.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioBuffer, save_wav

SAMPLE_RATE = 16000

# rough (F1, F2, F3) targets in Hz
VOWELS = np.array([
    (730, 1090, 2440),  # a
    (270, 2290, 3010),  # i
    (300, 870, 2240),   # u
    (530, 1840, 2480),  # e
    (570, 840, 2410),   # o
    (660, 1720, 2410),  # ae
])


def _resonator(x, freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return signal.lfilter([1 - r], a, x)


def _voiced(rng, n, f0_start, f0_end, formants, fs):
    f0 = np.linspace(f0_start, f0_end, n) * (1 + 0.01 * rng.standard_normal())
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    src = signal.lfilter([1.0], [1.0, -0.95], pulses)
    src += 0.02 * rng.standard_normal(n)
    out = np.zeros(n)
    for f, bw in zip(formants, (80, 110, 160)):
        out += _resonator(src, f, bw, fs)
    return out


def _fricative(rng, n, fs):
    noise = rng.standard_normal(n)
    lo = rng.uniform(2500, 4000)
    sos = signal.butter(4, [lo, min(lo + 2500, fs / 2 - 200)], btype="band", fs=fs, output="sos")
    return signal.sosfilt(sos, noise) * 0.3


def synth_utterance(rng, seconds: float, fs: int = SAMPLE_RATE) -> np.ndarray:
    total = int(seconds * fs)
    pitch = rng.uniform(90, 240)
    formant_scale = rng.uniform(0.9, 1.15)
    out = np.zeros(total)
    pos = int(rng.uniform(0.05, 0.2) * fs)
    while pos < total:
        if rng.random() < 0.4:
            n = int(rng.uniform(0.04, 0.12) * fs)
            seg = _fricative(rng, n, fs) * np.hanning(n)
            out[pos:pos + n] += seg[: max(0, total - pos)]
            pos += n
        n = int(rng.uniform(0.12, 0.3) * fs)
        formants = VOWELS[rng.integers(len(VOWELS))] * formant_scale
        drift = pitch * rng.uniform(0.85, 1.15)
        seg = _voiced(rng, n, drift, drift * rng.uniform(0.85, 1.1), formants, fs)
        env = np.hanning(n) ** 0.5
        seg = seg * env * rng.uniform(0.5, 1.0) / (np.abs(seg).max() + 1e-9)
        out[pos:pos + n] += seg[: max(0, total - pos)]
        pos += n + int(rng.uniform(0.02, 0.25) * fs)
    peak = np.abs(out).max()
    return (0.7 * out / peak if peak else out).astype(np.float32)


def make_toy_corpus(root, minutes: float = 10.0, seconds_per_file: float = 6.0,
                    seed: int = 0) -> list:
    """Write ``minutes`` of synthetic 16 kHz speech-like WAVs under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_files = max(1, int(round(minutes * 60 / seconds_per_file)))
    paths = []
    for i in range(n_files):
        path = root / f"utt_{i:04d}.wav"
        save_wav(AudioBuffer(synth_utterance(rng, seconds_per_file)), path)
        paths.append(path)
    return paths
