"""Signal-processing kernels: resampling, framed RMS energy in dBFS, log-mel features.

All audio is handled as mono float64 in [-1, 1]. Full scale is 1.0, so an
RMS of 1.0 is 0 dBFS.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .errors import InvalidAudio, InvalidClipLength

TARGET_RATE = 22050

ENERGY_FRAME = 2048
ENERGY_HOP = 512
FLOOR_DB = -120.0

MEL_N_FFT = 2048
MEL_HOP = 220
MEL_BINS = 256
MEL_AMIN = 1e-10  # log-power floor: 10*log10(1e-10) = -100 dB
CLIP_SECONDS = 5
CLIP_SAMPLES = CLIP_SECONDS * TARGET_RATE


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono audio. 2-D input is taken as (frames, channels) and averaged."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        data = np.asarray(self.samples, dtype=np.float64)
        if data.ndim == 2:
            data = data.mean(axis=1)
        elif data.ndim != 1:
            raise InvalidAudio(f"expected 1-D or (frames, channels) audio, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidAudio("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidAudio(f"sample rate must be positive, got {self.sample_rate}")
        data = np.clip(data, -1.0, 1.0)
        data.flags.writeable = False
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate

    def slice(self, start: int, stop: int) -> "AudioBuffer":
        return AudioBuffer(self.samples[start:stop], self.sample_rate)

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)


@dataclass(frozen=True, eq=False)
class EnergyEnvelope:
    frame_db: np.ndarray
    hop_seconds: float
    floor_db: float = FLOOR_DB

    def __len__(self) -> int:
        return self.frame_db.shape[0]


@dataclass(frozen=True, eq=False)
class MelFeatures:
    values: np.ndarray  # (MEL_BINS, T), dB
    frame_hop_seconds: float = MEL_HOP / TARGET_RATE

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def resample(audio: AudioBuffer, target_rate: int = TARGET_RATE) -> AudioBuffer:
    """Linear-interpolation resampler.

    Adequate for energy thresholding and classifier input; swap in a
    band-limited resampler if the output is ever used for synthesis.
    """
    if len(audio) == 0:
        raise InvalidAudio("cannot resample empty audio")
    if target_rate <= 0:
        raise InvalidAudio(f"target rate must be positive, got {target_rate}")
    if target_rate == audio.sample_rate:
        return audio
    n_out = max(1, int(round(len(audio) * target_rate / audio.sample_rate)))
    positions = np.arange(n_out) * (audio.sample_rate / target_rate)
    out = np.interp(positions, np.arange(len(audio)), audio.samples)
    return AudioBuffer(out, target_rate)


def frame_signal(samples: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    """Non-centered framing; frame i is samples[i*hop : i*hop + frame_length].

    Inputs shorter than one frame are zero-padded to a single frame.
    """
    if samples.shape[0] < frame_length:
        samples = np.pad(samples, (0, frame_length - samples.shape[0]))
    return sliding_window_view(samples, frame_length)[::hop]


def rms_dbfs_envelope(
    audio: AudioBuffer,
    frame_length: int = ENERGY_FRAME,
    hop: int = ENERGY_HOP,
    floor_db: float = FLOOR_DB,
) -> EnergyEnvelope:
    """Per-frame RMS of the raw (unwindowed) signal, in dBFS, clamped to ``[floor_db, 0]``."""
    if len(audio) == 0:
        raise InvalidAudio("cannot compute energy of empty audio")
    frames = frame_signal(audio.samples, frame_length, hop)
    mean_square = np.einsum("ij,ij->i", frames, frames) / frame_length
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(mean_square)
    db = np.clip(db, floor_db, 0.0)
    return EnergyEnvelope(db, hop / audio.sample_rate, floor_db)


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(
        freq >= min_log_hz,
        min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep,
        freq / f_sp,
    )


def mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(
        mels >= min_log_mel,
        min_log_hz * np.exp(logstep * (mels - min_log_mel)),
        f_sp * mels,
    )


def mel_filterbank(
    sample_rate: int = TARGET_RATE,
    n_fft: int = MEL_N_FFT,
    n_mels: int = MEL_BINS,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular, area-normalized mel filters, shape (n_mels, n_fft // 2 + 1)."""
    if fmax is None:
        fmax = sample_rate / 2
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


_FILTERBANK = None


def _default_filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def hann_window(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_mel_frames(n_samples: int = CLIP_SAMPLES, hop: int = MEL_HOP) -> int:
    """Frame count under center padding (n_fft // 2 zeros on each side)."""
    return n_samples // hop + 1


def power_spectrogram(samples: np.ndarray, n_fft: int = MEL_N_FFT, hop: int = MEL_HOP) -> np.ndarray:
    """Center-padded (zeros), Hann-windowed |STFT|^2, shape (n_fft // 2 + 1, T)."""
    padded = np.pad(samples, (n_fft // 2, n_fft // 2))
    frames = sliding_window_view(padded, n_fft)[::hop] * hann_window(n_fft)
    return (np.abs(np.fft.rfft(frames, axis=1)) ** 2).T


def mel_spectrogram(audio: AudioBuffer) -> MelFeatures:
    """Classifier input: 256-bin log-mel power of one 5 s clip at 22,050 Hz.

    Short clips are right-padded with zeros; the output always has
    ``num_mel_frames()`` == 502 frames. Values are ``10*log10(max(P, 1e-10))``.
    """
    if audio.sample_rate != TARGET_RATE:
        raise InvalidAudio(f"mel features expect {TARGET_RATE} Hz audio, got {audio.sample_rate}")
    n = len(audio)
    if n > CLIP_SAMPLES:
        raise InvalidClipLength(f"clip has {n} samples, limit is {CLIP_SAMPLES} ({CLIP_SECONDS} s)")
    samples = np.pad(audio.samples, (0, CLIP_SAMPLES - n))
    mel_power = _default_filterbank() @ power_spectrogram(samples)
    return MelFeatures(10.0 * np.log10(np.maximum(mel_power, MEL_AMIN)))


def load_wav(path: str | Path, target_rate: int | None = TARGET_RATE) -> AudioBuffer:
    """Read 8/16/32-bit integer or float WAV as mono float, resampled to ``target_rate``."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        data = data.astype(np.float64)
    audio = AudioBuffer(data, rate)
    if target_rate is not None and len(audio) and audio.sample_rate != target_rate:
        audio = resample(audio, target_rate)
    return audio


def write_wav(path: str | Path, audio: AudioBuffer, dtype: str = "int16") -> None:
    if dtype == "int16":
        data = np.round(audio.samples * 32767).astype(np.int16)
    elif dtype == "float32":
        data = audio.samples.astype(np.float32)
    else:
        raise ValueError(f"unsupported WAV sample type {dtype!r}")
    wavfile.write(str(path), audio.sample_rate, data)
