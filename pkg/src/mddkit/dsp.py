"""Audio to model features: log-mel filterbank + energy, CMVN, frame stacking.

The front end mirrors the usual fbank toolchain: 25 ms Hamming windows at a
10 ms hop over 16 kHz PCM, 80 triangular mel filters spanning 20 Hz to
Nyquist plus a log frame energy appended as dimension 81, global cepstral
mean/variance normalization from training-set statistics, then stacking of
left/center/right frames into the model's 243-dimensional input rows.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-8


class AudioError(ValueError):
    """Raised for unreadable or unsupported audio inputs."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1], mono
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class FbankConfig:
    sample_rate_hz: int = 16000
    frame_length_s: float = 0.025
    frame_shift_s: float = 0.010
    num_filters: int = 80
    low_freq_hz: float = 20.0
    high_freq_hz: float | None = None  # None -> Nyquist

    @property
    def window_samples(self) -> int:
        return int(round(self.frame_length_s * self.sample_rate_hz))

    @property
    def hop_samples(self) -> int:
        return int(round(self.frame_shift_s * self.sample_rate_hz))

    @property
    def fft_size(self) -> int:
        n = 1
        while n < self.window_samples:
            n *= 2
        return n

    @property
    def feature_dim(self) -> int:
        return self.num_filters + 1


# ---------------------------------------------------------------------------
# audio I/O

def load_wav(path) -> Waveform:
    """Read a 16-bit PCM mono RIFF/WAVE file into normalized samples.

    Command-pipe wav.scp entries (containing '|') are rejected here: SPHERE
    conversion pipelines are not supported, audio must be plain PCM WAV.
    """
    path = str(path)
    if "|" in path:
        raise AudioError(
            f"wav spec {path!r} is a command pipe; convert to PCM WAV first "
            "(SPHERE piping is not supported)"
        )
    try:
        with wave.open(path, "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, OSError) as exc:
        raise AudioError(f"cannot read {path!r}: {exc}") from exc
    if channels != 1:
        raise AudioError(f"{path!r} has {channels} channels; mono required")
    if width != 2:
        raise AudioError(f"{path!r} has {8 * width}-bit samples; 16-bit PCM required")
    if len(raw) < 2 * n:
        raise AudioError(f"{path!r} is truncated ({len(raw)} bytes for {n} frames)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def save_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def crop_segment(w: Waveform, start_s: float, end_s: float) -> Waveform:
    a = int(round(start_s * w.sample_rate_hz))
    b = int(round(end_s * w.sample_rate_hz))
    return Waveform(w.samples[a:b], w.sample_rate_hz)


def resample(w: Waveform, target_hz: int, taps: int = 32) -> Waveform:
    """Windowed-sinc resampling; output length is round(n * target / source).

    Same-rate input is returned unchanged (bit-identical). Downsampling
    lowpasses at the target Nyquist; `taps` is the one-sided kernel width
    in output-rate units.
    """
    if target_hz <= 0:
        raise AudioError(f"bad target rate {target_hz}")
    if target_hz == w.sample_rate_hz:
        return w
    n_in = len(w.samples)
    ratio = target_hz / w.sample_rate_hz
    n_out = int(round(n_in * ratio))
    if n_in == 0 or n_out == 0:
        return Waveform(np.zeros(0), target_hz)

    # cutoff relative to the input rate; scale keeps unity passband gain
    cutoff = min(1.0, ratio)
    half = int(np.ceil(taps / cutoff))
    out = np.empty(n_out)
    positions = np.arange(n_out) / ratio  # fractional input-sample positions
    offsets = np.arange(-half, half + 1)
    chunk = 4096
    for lo in range(0, n_out, chunk):
        pos = positions[lo : lo + chunk]
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        frac = pos[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * frac)
        kernel *= np.hanning(2 * half + 1)[None, :]
        idx = np.clip(idx, 0, n_in - 1)
        valid = (base[:, None] + offsets[None, :] >= 0) & (
            base[:, None] + offsets[None, :] < n_in
        )
        out[lo : lo + chunk] = np.sum(np.where(valid, w.samples[idx] * kernel, 0.0), axis=1)
    return Waveform(out, target_hz)


# ---------------------------------------------------------------------------
# filterbank

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(cfg: FbankConfig) -> np.ndarray:
    """Center frequencies (Hz) of the triangular mel filters."""
    high = cfg.high_freq_hz if cfg.high_freq_hz is not None else cfg.sample_rate_hz / 2.0
    mels = np.linspace(hz_to_mel(cfg.low_freq_hz), hz_to_mel(high), cfg.num_filters + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(cfg: FbankConfig) -> np.ndarray:
    """(num_filters, fft_size//2 + 1) triangular weights on the power spectrum."""
    high = cfg.high_freq_hz if cfg.high_freq_hz is not None else cfg.sample_rate_hz / 2.0
    n_bins = cfg.fft_size // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.low_freq_hz), hz_to_mel(high), cfg.num_filters + 2)
    )
    weights = np.zeros((cfg.num_filters, n_bins))
    for k in range(cfg.num_filters):
        lo, center, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        weights[k] = np.maximum(0.0, np.minimum(up, down))
    return weights


def frame_count(n_samples: int, cfg: FbankConfig) -> int:
    if n_samples < cfg.window_samples:
        return 0
    return 1 + (n_samples - cfg.window_samples) // cfg.hop_samples


def compute_fbank(w: Waveform, cfg: FbankConfig) -> np.ndarray:
    """(T, 81) features: 80 log-mel filterbank energies + log frame energy.

    The energy (dimension 81) is the log of the raw pre-window sum of
    squares, floored like the filterbank outputs. No pre-emphasis or dither
    is applied, keeping extraction fully deterministic.
    """
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise AudioError(
            f"waveform rate {w.sample_rate_hz} != config rate {cfg.sample_rate_hz}; resample first"
        )
    win, hop = cfg.window_samples, cfg.hop_samples
    T = frame_count(len(w.samples), cfg)
    if T == 0:
        raise AudioError(
            f"audio of {len(w.samples)} samples is shorter than one window ({win})"
        )
    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    frames = w.samples[idx]

    energy = np.log(np.maximum(np.sum(frames * frames, axis=1), LOG_FLOOR))

    window = np.hamming(win)
    spectrum = np.fft.rfft(frames * window[None, :], n=cfg.fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(cfg).T
    fbank = np.log(np.maximum(mel, LOG_FLOOR))

    return np.concatenate([fbank, energy[:, None]], axis=1)


# ---------------------------------------------------------------------------
# CMVN

@dataclass
class CmvnStats:
    count: int
    sum: np.ndarray
    sum_sq: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "CmvnStats":
        return cls(0, np.zeros(dim), np.zeros(dim))

    def add(self, feats: np.ndarray) -> "CmvnStats":
        if feats.shape[1] != self.sum.shape[0]:
            raise ValueError(f"dimension mismatch: {feats.shape[1]} != {self.sum.shape[0]}")
        self.count += feats.shape[0]
        self.sum += feats.sum(axis=0)
        self.sum_sq += (feats * feats).sum(axis=0)
        return self

    def merge(self, other: "CmvnStats") -> "CmvnStats":
        """Associative combine of partial statistics (parallel reduction)."""
        if other.sum.shape != self.sum.shape:
            raise ValueError("dimension mismatch in CMVN merge")
        return CmvnStats(self.count + other.count, self.sum + other.sum, self.sum_sq + other.sum_sq)

    def mean(self) -> np.ndarray:
        return self.sum / self.count

    def var(self) -> np.ndarray:
        m = self.mean()
        return np.maximum(self.sum_sq / self.count - m * m, 0.0)


def accumulate_cmvn(feature_matrices) -> CmvnStats:
    """Global count/sum/sum-of-squares over all frames of all matrices."""
    stats = None
    for feats in feature_matrices:
        if stats is None:
            stats = CmvnStats.zeros(feats.shape[1])
        stats.add(feats)
    if stats is None:
        stats = CmvnStats.zeros(0)
    return stats


def apply_cmvn(feats: np.ndarray, stats: CmvnStats, norm_vars: bool = True) -> np.ndarray:
    if stats.count <= 0:
        raise ValueError("CMVN statistics are empty (count == 0)")
    out = feats - stats.mean()[None, :]
    if norm_vars:
        out = out / np.sqrt(np.maximum(stats.var(), VAR_FLOOR))[None, :]
    return out


def save_cmvn(stats: CmvnStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"count {stats.count}\n")
        fh.write("sum " + " ".join(repr(float(x)) for x in stats.sum) + "\n")
        fh.write("sum_sq " + " ".join(repr(float(x)) for x in stats.sum_sq) + "\n")


def load_cmvn(path) -> CmvnStats:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    fields = dict(line.split(" ", 1) for line in lines if line)
    count = int(fields["count"])
    s = np.array([float(x) for x in fields["sum"].split()])
    ss = np.array([float(x) for x in fields["sum_sq"].split()])
    return CmvnStats(count, s, ss)


# ---------------------------------------------------------------------------
# stacking

def stack_frames(feats: np.ndarray) -> np.ndarray:
    """Concatenate each frame with its left/right neighbors (edge-replicated).

    (T, D) -> (T, 3D); row t is [frame[t-1], frame[t], frame[t+1]].
    """
    if feats.shape[0] < 1:
        raise ValueError("cannot stack an empty feature matrix")
    left = np.vstack([feats[:1], feats[:-1]])
    right = np.vstack([feats[1:], feats[-1:]])
    return np.concatenate([left, feats, right], axis=1)


# ---------------------------------------------------------------------------
# feature archive (magic "MDDF1"): binary records + plain-text byte-offset index

ARCHIVE_MAGIC = b"MDDF1"


class FeatureArchiveWriter:
    """Writes {utterance_id, T, D, row-major float32 LE} records."""

    def __init__(self, archive_path, index_path):
        self.archive_path = str(archive_path)
        self.index_path = str(index_path)
        self._fh = open(self.archive_path, "wb")
        self._fh.write(ARCHIVE_MAGIC)
        self._index: list[tuple[str, int]] = []

    def write(self, utterance_id: str, feats: np.ndarray) -> None:
        offset = self._fh.tell()
        uid = utterance_id.encode("utf-8")
        T, D = feats.shape
        self._fh.write(struct.pack("<I", len(uid)))
        self._fh.write(uid)
        self._fh.write(struct.pack("<II", T, D))
        self._fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
        self._index.append((utterance_id, offset))

    def close(self) -> None:
        self._fh.close()
        with open(self.index_path, "w", encoding="utf-8", newline="\n") as fh:
            for uid, offset in self._index:
                fh.write(f"{uid} {offset}\n")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class FeatureArchiveReader:
    def __init__(self, archive_path, index_path):
        self.archive_path = str(archive_path)
        with open(self.archive_path, "rb") as fh:
            magic = fh.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{archive_path}: bad magic {magic!r}, expected {ARCHIVE_MAGIC!r}")
        self.index: dict[str, int] = {}
        with open(index_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    uid, offset = line.split()
                    self.index[uid] = int(offset)

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self.index

    def utterance_ids(self) -> list[str]:
        return list(self.index)

    def read(self, utterance_id: str) -> np.ndarray:
        offset = self.index[utterance_id]
        with open(self.archive_path, "rb") as fh:
            fh.seek(offset)
            (uid_len,) = struct.unpack("<I", fh.read(4))
            uid = fh.read(uid_len).decode("utf-8")
            if uid != utterance_id:
                raise ValueError(f"index points at {uid!r}, expected {utterance_id!r}")
            T, D = struct.unpack("<II", fh.read(8))
            data = np.frombuffer(fh.read(4 * T * D), dtype="<f4")
        if data.size != T * D:
            raise ValueError(f"truncated record for {utterance_id!r}")
        return data.reshape(T, D).astype(np.float64)
