"""Video/audio loading and waveform <-> mel-spectrogram conversion.

Preprocessing contract: video is resampled to 4 fps and resized to
224x224; audio is mono 16 kHz. Mel spectrograms use a 1024-sample Hann
window, 128 mel bands over 0-8000 Hz, natural-log magnitude with a floor
at ln(1e-5), and exactly ceil(n_samples / hop) frames. 16 kHz is the one
sample rate at which a 4-second clip at hop 250 yields 256 frames, so it
is fixed as the default.

Video decode goes through OpenCV (any container it can open); audio
decode supports RIFF/WAVE PCM. Output audio is written as 16-bit PCM
mono WAV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import DecodeError, EmptyMediaError, ShapeMismatchError

DEFAULT_FPS = 4.0
DEFAULT_SIDE = 224
DEFAULT_SAMPLE_RATE = 16000
HOP_OCAV = 250
HOP_LDM = 256
N_MELS = 128
WIN_LENGTH = 1024
FMIN = 0.0
FMAX = 8000.0
AMP_FLOOR = 1e-5
LOG_FLOOR = math.log(AMP_FLOOR)
# 8.2 s of audio at hop 256 spans 513 frames; the generator works on the
# 512-frame crop so the latent grid divides evenly by the autoencoder factor.
LDM_MEL_FRAMES = 512


@dataclass
class VideoClip:
    """Frame stack [T, H, W, 3] (uint8, 0-255) at a fixed frame rate."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ShapeMismatchError(f"frames must be [T,H,W,3], got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise EmptyMediaError("video has no frames")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def t(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration(self) -> float:
        return self.t / self.fps


@dataclass
class AudioWave:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-magnitude mel matrix [T', n_mels]."""

    values: np.ndarray
    hop: int
    n_mels: int = N_MELS
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.n_mels:
            raise ShapeMismatchError(f"mel must be [T',{self.n_mels}], got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def load_video(path: str, target_fps: float = DEFAULT_FPS, side: int = DEFAULT_SIDE) -> VideoClip:
    """Decode a video, resample it to ``target_fps`` and resize to ``side`` square."""
    if target_fps <= 0 or side <= 0:
        raise ValueError("target_fps and side must be positive")
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video: {path}")
    src_fps = cap.get(cv2.CAP_PROP_FPS)
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1])  # BGR -> RGB
    cap.release()
    if not frames:
        raise EmptyMediaError(f"video decodes to zero frames: {path}")
    if not src_fps or src_fps <= 0:
        src_fps = target_fps
    src = np.stack(frames)
    n_out = max(1, round(src.shape[0] * target_fps / src_fps))
    idx = np.floor(np.arange(n_out) * src_fps / target_fps).astype(int)
    idx = np.clip(idx, 0, src.shape[0] - 1)
    out = np.empty((n_out, side, side, 3), dtype=np.uint8)
    for i, j in enumerate(idx):
        out[i] = cv2.resize(src[j], (side, side), interpolation=cv2.INTER_AREA)
    return VideoClip(out, float(target_fps))


def save_video(clip: VideoClip, path: str, codec: str = "FFV1") -> None:
    """Write a clip to disk; FFV1 keeps frames bit-exact through a roundtrip."""
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*codec), clip.fps, (clip.width, clip.height)
    )
    if not writer.isOpened():
        raise DecodeError(f"cannot open video writer for {path} (codec {codec})")
    for frame in clip.frames:
        writer.write(frame[:, :, ::-1])
    writer.release()


def load_audio(path: str, sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioWave:
    """Decode a WAV file to a mono waveform at ``sample_rate``."""
    try:
        src_rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise DecodeError(f"cannot decode audio: {path} ({exc})") from exc
    data = np.asarray(data)
    if data.size == 0:
        raise EmptyMediaError(f"audio decodes to zero samples: {path}")
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 127.0
    elif np.issubdtype(data.dtype, np.integer):
        x = data.astype(np.float64) / np.iinfo(data.dtype).max
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if src_rate != sample_rate:
        g = math.gcd(int(sample_rate), int(src_rate))
        x = resample_poly(x, sample_rate // g, src_rate // g)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioWave(x, sample_rate)


def write_wav(wave: AudioWave, path: str) -> None:
    """Write 16-bit PCM mono."""
    x = np.clip(wave.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype(np.int16)
    wavfile.write(str(path), wave.sample_rate, pcm)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    n_fft: int = WIN_LENGTH,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Triangular mel filters [n_mels, n_fft // 2 + 1]."""
    pts = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, center, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / np.maximum(center - lo, 1e-12)
    down = (hi - freqs[None, :]) / np.maximum(hi - center, 1e-12)
    return np.clip(np.minimum(up, down), 0.0, None)


def _frame_signal(x: np.ndarray, hop: int, win: int) -> np.ndarray:
    """[T', win] frames with T' = ceil(len / hop); the tail is zero-padded."""
    n_frames = max(1, math.ceil(len(x) / hop))
    padded = np.zeros((n_frames - 1) * hop + win, dtype=np.float64)
    padded[: len(x)] = x
    return sliding_window_view(padded, win)[::hop][:n_frames]


def stft_magnitude(x: np.ndarray, hop: int, win: int = WIN_LENGTH) -> np.ndarray:
    frames = _frame_signal(np.asarray(x, dtype=np.float64), hop, win)
    window = np.hanning(win)
    return np.abs(np.fft.rfft(frames * window, axis=1))


def mel_spectrogram(
    wave: AudioWave,
    hop: int = HOP_OCAV,
    n_mels: int = N_MELS,
    win: int = WIN_LENGTH,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> MelSpectrogram:
    """Log-magnitude mel matrix with ceil(n_samples / hop) rows."""
    if wave.n_samples == 0:
        raise EmptyMediaError("cannot compute a spectrogram of an empty wave")
    if hop <= 0:
        raise ValueError("hop must be positive")
    mag = stft_magnitude(wave.samples, hop, win)
    fb = mel_filterbank(wave.sample_rate, win, n_mels, fmin, fmax)
    mel = mag @ fb.T
    values = np.log(np.maximum(mel, AMP_FLOOR))
    return MelSpectrogram(values, hop=hop, n_mels=n_mels)


def ldm_mel(wave: AudioWave, hop: int = HOP_LDM, n_mels: int = N_MELS) -> MelSpectrogram:
    """Generator-facing mel: hop 256, cropped/padded to exactly 512 frames."""
    mel = mel_spectrogram(wave, hop=hop, n_mels=n_mels)
    values = mel.values[:LDM_MEL_FRAMES]
    if values.shape[0] < LDM_MEL_FRAMES:
        pad = np.full((LDM_MEL_FRAMES - values.shape[0], n_mels), LOG_FLOOR)
        values = np.concatenate([values, pad], axis=0)
    return MelSpectrogram(values, hop=hop, n_mels=n_mels)


def _overlap_add(spec: np.ndarray, hop: int, win: int) -> np.ndarray:
    """Inverse STFT of a complex spectrum [T', win//2+1] with Hann synthesis."""
    frames = np.fft.irfft(spec, n=win, axis=1)
    window = np.hanning(win)
    n_frames = frames.shape[0]
    length = (n_frames - 1) * hop + win
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = window * window
    for k in range(n_frames):
        sl = slice(k * hop, k * hop + win)
        out[sl] += frames[k] * window
        norm[sl] += wsq
    # Clamp the window-power normalization: near the signal edges the Hann
    # envelope vanishes and exact division would blow up reconstruction noise.
    return out / np.maximum(norm, 1e-2)


def inverse_mel(mel: MelSpectrogram, iterations: int = 32, win: int = WIN_LENGTH) -> AudioWave:
    """Phase reconstruction from a log-mel matrix (Griffin-Lim style).

    The output holds exactly n_frames * hop samples with peak <= 1.
    """
    amp = np.exp(mel.values)
    amp = np.where(amp <= AMP_FLOOR * (1.0 + 1e-9), 0.0, amp)
    fb = mel_filterbank(n_fft=win, n_mels=mel.n_mels)
    pinv = np.linalg.pinv(fb)
    target = np.clip(amp @ pinv.T, 0.0, None)  # [T', win//2+1]
    spec = target.astype(np.complex128)  # zero initial phase
    x = _overlap_add(spec, mel.hop, win)
    window = np.hanning(win)
    for _ in range(max(0, iterations)):
        cur = np.fft.rfft(_frame_signal(x, mel.hop, win) * window, axis=1)
        cur = cur[: target.shape[0]]
        unit = cur / np.maximum(np.abs(cur), 1e-12)
        x = _overlap_add(target * unit, mel.hop, win)
    n_out = mel.n_frames * mel.hop
    if len(x) < n_out:
        x = np.pad(x, (0, n_out - len(x)))
    x = x[:n_out]
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioWave(x, DEFAULT_SAMPLE_RATE)
