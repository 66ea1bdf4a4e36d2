"""Objective metrics: STOI, SNR and real-time factor, plus CSV report I/O."""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .audio import AudioBuffer
from .errors import ContractError, UndefinedMetricError

STOI_RATE = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames per 384 ms analysis segment
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

SNR_CAP_DB = 99.0

REPORT_COLUMNS = ("file", "stoi", "snr_db", "bitrate_bps", "rtf_encode", "rtf_decode")


@dataclass
class MetricReport:
    file: str = ""
    stoi: float = float("nan")
    snr_db: float = float("nan")
    bitrate_bps: float = float("nan")
    rtf_encode: float = float("nan")
    rtf_decode: float = float("nan")


def _as_array(x, sample_rate=None):
    if isinstance(x, AudioBuffer):
        return x.samples.astype(np.float64), x.sample_rate
    return np.asarray(x, dtype=np.float64).reshape(-1), sample_rate


def _hann(n):
    # symmetric Hann without the zero end points
    return np.hanning(n + 2)[1:-1]


def _frames(x, frame, hop):
    """Frames starting at 0, hop, ... strictly before ``len(x) - frame``."""
    n = max(0, -(-(len(x) - frame) // hop))
    if n == 0:
        return np.zeros((0, frame))
    return sliding_window_view(x, frame)[::hop][:n]


def _remove_silent_frames(x, y, dyn_range, frame, hop):
    """Drop frames whose reference energy is more than ``dyn_range`` dB
    below the loudest frame, then overlap-add the survivors."""
    w = _hann(frame)
    xf = _frames(x, frame, hop) * w
    yf = _frames(y, frame, hop) * w
    if len(xf) == 0:
        return x[:0], y[:0]
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = energy > energy.max() - dyn_range
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    out_len = (n - 1) * hop + frame if n else 0
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for i in range(n):
        xs[i * hop:i * hop + frame] += xf[i]
        ys[i * hop:i * hop + frame] += yf[i]
    return xs, ys


def _resample_10k(x, fs):
    """Kaiser-windowed sinc resampler with 60 dB rejection and a 10 % roll-off
    band, the design used by the classic MATLAB/Octave ``resample``."""
    g = math.gcd(int(fs), STOI_RATE)
    up, down = STOI_RATE // g, int(fs) // g
    cutoff = 1.0 / (2 * max(up, down))
    rejection_db = 60.0
    half = int(math.ceil((rejection_db - 8) / (28.714 * cutoff / 10)))
    h = signal.firwin(2 * half + 1, 2 * cutoff, window=("kaiser", 0.1102 * (rejection_db - 8.7)))
    return signal.resample_poly(x, up, down, window=h)


def third_octave_bands(fs=STOI_RATE, nfft=STOI_NFFT, num_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """Binary (num_bands, nfft // 2 + 1) matrix grouping FFT bins into 1/3-octave bands."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(f)))
    for i in range(num_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1
    return obm


def _band_envelopes(x):
    frames = _frames(x, STOI_FRAME, STOI_FRAME // 2) * _hann(STOI_FRAME)
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    return np.sqrt(third_octave_bands() @ (np.abs(spec) ** 2).T)


def stoi(ref, deg, sample_rate: int | None = None) -> float:
    """Short-time objective intelligibility of ``deg`` against ``ref``.

    Both signals are resampled to 10 kHz, silent reference frames are
    removed, and clipped normalized correlations of 1/3-octave band
    envelopes over 30-frame segments are averaged.
    """
    x, fs_x = _as_array(ref, sample_rate)
    y, fs_y = _as_array(deg, sample_rate)
    if x.shape != y.shape:
        raise ContractError(f"stoi needs equal lengths, got {len(x)} and {len(y)}")
    if fs_x is None or fs_x != fs_y:
        raise ContractError("stoi needs both signals at the same known sample rate")
    if not np.any(x):
        raise UndefinedMetricError("stoi is undefined for a silent reference")
    if fs_x != STOI_RATE:
        x = _resample_10k(x, fs_x)
        y = _resample_10k(y, fs_x)
    x, y = _remove_silent_frames(x, y, STOI_DYN_RANGE_DB, STOI_FRAME, STOI_FRAME // 2)
    xe, ye = _band_envelopes(x), _band_envelopes(y)
    if xe.shape[1] < STOI_SEGMENT:
        raise UndefinedMetricError(
            f"need at least {STOI_SEGMENT} non-silent frames, got {xe.shape[1]}")

    # (segments, bands, N)
    xs = sliding_window_view(xe, STOI_SEGMENT, axis=1).transpose(1, 0, 2)
    ys = sliding_window_view(ye, STOI_SEGMENT, axis=1).transpose(1, 0, 2)
    eps = np.finfo(float).eps
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + eps)
    clip = 1 + 10 ** (-STOI_BETA_DB / 20)
    yp = np.minimum(ys * scale, xs * clip)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs / (np.linalg.norm(xs, axis=2, keepdims=True) + eps)
    yp = yp / (np.linalg.norm(yp, axis=2, keepdims=True) + eps)
    return float(np.sum(xs * yp) / (xs.shape[0] * xs.shape[1]))


def snr(ref, deg) -> float:
    """10 log10(sum ref^2 / sum (ref - deg)^2), capped at 99 dB."""
    x, _ = _as_array(ref)
    y, _ = _as_array(deg)
    if x.shape != y.shape:
        raise ContractError(f"snr needs equal lengths, got {len(x)} and {len(y)}")
    signal_energy = float(np.sum(x ** 2))
    if signal_energy == 0.0:
        raise UndefinedMetricError("snr is undefined for a zero-energy reference")
    noise_energy = float(np.sum((x - y) ** 2))
    if noise_energy == 0.0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10 * math.log10(signal_energy / noise_energy))


def measure_rtf(codec, buffer: AudioBuffer, repetitions: int = 3):
    """Median wall-clock time per direction divided by the audio duration.

    ``codec`` needs ``encode(buffer) -> payload`` and ``decode(payload)``.
    One untimed warm-up pass runs first. Run single-threaded for stable
    numbers.
    """
    if repetitions < 3:
        raise ContractError("measure_rtf needs at least 3 repetitions")
    duration = buffer.duration
    if duration <= 0:
        raise ContractError("cannot time an empty buffer")
    codec.decode(codec.encode(buffer))
    enc_times, dec_times = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        payload = codec.encode(buffer)
        t1 = time.perf_counter()
        codec.decode(payload)
        t2 = time.perf_counter()
        enc_times.append(t1 - t0)
        dec_times.append(t2 - t1)
    return statistics.median(enc_times) / duration, statistics.median(dec_times) / duration


def write_report(rows, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def read_report(path) -> list:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ContractError(f"unexpected report columns {reader.fieldnames}")
        return [MetricReport(r["file"], *(float(r[c]) for c in REPORT_COLUMNS[1:])) for r in reader]


def aggregate(rows, label="MEAN") -> MetricReport:
    out = MetricReport(file=label)
    for f in fields(MetricReport)[1:]:
        vals = [getattr(r, f.name) for r in rows if np.isfinite(getattr(r, f.name))]
        setattr(out, f.name, float(np.mean(vals)) if vals else float("nan"))
    return out


def ingest_external_scores(path) -> dict:
    """Read ``path,score`` rows written by an external scorer (ViSQOL, WARP-Q).

    A header row is optional. Returns ``{path: score}``.
    """
    scores = {}
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise ContractError(f"malformed external score row: {row}")
            try:
                scores[row[0]] = float(row[1])
            except ValueError:
                if scores:
                    raise ContractError(f"non-numeric score in row {row}") from None
    return scores


def evaluate_codec(codec, buffers, with_rtf: bool = False, repetitions: int = 3) -> list:
    """Round-trip each buffer through ``codec`` and score it against the input."""
    rows = []
    for i, buf in enumerate(buffers):
        payload = codec.encode(buf)
        out = codec.decode(payload)
        row = MetricReport(file=str(i), stoi=stoi(buf, out), snr_db=snr(buf, out))
        if hasattr(codec, "bitrate"):
            row.bitrate_bps = float(codec.bitrate())
        if with_rtf:
            row.rtf_encode, row.rtf_decode = measure_rtf(codec, buf, repetitions)
        rows.append(row)
    return rows
