"""Signal processing for vibrotactile textures.

Waveforms are mono float64 sample arrays at a fixed rate. Spectrograms are
magnitude STFT grids (frequency rows x time columns), optionally min-max
normalized into [-1, 1] for model consumption. Griffin-Lim phase retrieval
turns magnitude grids back into playable waveforms.

All operations are pure functions of their inputs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 44100
GRIFFIN_LIM_ITERATIONS = 50

_EPS = 1e-12


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples, nominal amplitude range [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters shared by the STFT and Griffin-Lim pipelines.

    The hop defaults to one tenth of the frame length (floor rounding) and
    the window is always Hann.
    """

    frame_length: int = 2048
    hop_length: int | None = None

    def __post_init__(self):
        if self.hop_length is None:
            object.__setattr__(self, "hop_length", int(0.1 * self.frame_length))
        if self.frame_length < 2:
            raise ValueError(f"frame_length must be >= 2, got {self.frame_length}")
        if not 0 < self.hop_length <= self.frame_length:
            raise ValueError(
                f"hop_length must be in (0, frame_length], got {self.hop_length}"
            )

    @property
    def n_freq(self) -> int:
        return self.frame_length // 2 + 1

    def window(self) -> np.ndarray:
        return sps.get_window("hann", self.frame_length, fftbins=True)


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude time-frequency grid, shape (n_freq, n_time).

    When ``normalized`` is False all magnitudes are nonnegative; when True
    the values live in [-1, 1].
    """

    magnitudes: np.ndarray
    freq_resolution: float
    time_resolution: float
    normalized: bool = False

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if mags.ndim != 2:
            raise ValueError(f"magnitudes must be 2-D, got shape {mags.shape}")
        if not np.all(np.isfinite(mags)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "magnitudes", mags)

    @property
    def n_freq(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_time(self) -> int:
        return self.magnitudes.shape[1]


@dataclass(frozen=True)
class NormStats:
    """Corpus-global min/max used for the [-1, 1] affine normalization."""

    min_value: float
    max_value: float

    def __post_init__(self):
        if not self.min_value < self.max_value:
            raise ValueError(
                f"degenerate stats: min {self.min_value} >= max {self.max_value}"
            )


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    """Number of full analysis frames; trailing partial frames are dropped."""
    if n_samples < cfg.frame_length:
        return 0
    return (n_samples - cfg.frame_length) // cfg.hop_length + 1


def apply_bandpass(
    w: Waveform, low_hz: float, high_hz: float, order: int = 3
) -> Waveform:
    """Butterworth bandpass, causal, realized as cascaded second-order sections."""
    nyquist = w.sample_rate / 2
    if not 0 < low_hz < high_hz < nyquist:
        raise ValueError(
            f"band edges must satisfy 0 < low < high < {nyquist}, "
            f"got ({low_hz}, {high_hz})"
        )
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if len(w) == 0:
        raise ValueError("empty waveform")
    sos = sps.butter(order, [low_hz, high_hz], btype="bandpass", output="sos", fs=w.sample_rate)
    return Waveform(sps.sosfilt(sos, w.samples), w.sample_rate)


def bandpass_response(
    freq_hz: float, low_hz: float, high_hz: float, order: int, sample_rate: int
) -> float:
    """Expected magnitude response of :func:`apply_bandpass` at one frequency.

    Computed independently of the filter coefficients: the digital filter is
    the bilinear transform of an analog Butterworth bandpass with pre-warped
    edges, so its response at f equals the analog prototype response at the
    pre-warped frequency.
    """
    warp = lambda f: 2.0 * sample_rate * np.tan(np.pi * f / sample_rate)
    w, wl, wh = warp(freq_hz), warp(low_hz), warp(high_hz)
    if w == 0.0:
        return 0.0
    q = (w * w - wl * wh) / (w * (wh - wl))
    return float(1.0 / np.sqrt(1.0 + q ** (2 * order)))


def stft_complex(w: Waveform, cfg: StftConfig) -> np.ndarray:
    """Complex STFT frames, shape (n_freq, n_time), Hann analysis window."""
    n_time = frame_count(len(w), cfg)
    if n_time < 1:
        raise ValueError(
            f"waveform of {len(w)} samples is shorter than one frame "
            f"({cfg.frame_length})"
        )
    idx = np.arange(cfg.frame_length)[None, :] + cfg.hop_length * np.arange(n_time)[:, None]
    frames = w.samples[idx] * cfg.window()[None, :]
    return np.fft.rfft(frames, axis=1).T


def stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    """Magnitude spectrogram of ``w``; see :func:`stft_complex` for phases."""
    mags = np.abs(stft_complex(w, cfg))
    return Spectrogram(
        magnitudes=mags,
        freq_resolution=w.sample_rate / cfg.frame_length,
        time_resolution=cfg.hop_length / w.sample_rate,
        normalized=False,
    )


def istft_true_phase(
    complex_frames: np.ndarray, cfg: StftConfig, sample_rate: int = DEFAULT_SAMPLE_RATE
) -> Waveform:
    """Least-squares overlap-add inverse of :func:`stft_complex`.

    Windowed overlap-add normalized by the squared-window envelope; interior
    samples of a round trip reproduce the original signal to machine
    precision.
    """
    frames = np.asarray(complex_frames)
    if frames.ndim != 2 or frames.shape[0] != cfg.n_freq:
        raise ValueError(
            f"expected frames of shape ({cfg.n_freq}, n_time), got {frames.shape}"
        )
    n_time = frames.shape[1]
    window = cfg.window()
    segments = np.fft.irfft(frames, n=cfg.frame_length, axis=0)
    total = (n_time - 1) * cfg.hop_length + cfg.frame_length
    acc = np.zeros(total)
    envelope = np.zeros(total)
    for t in range(n_time):
        lo = t * cfg.hop_length
        acc[lo : lo + cfg.frame_length] += window * segments[:, t]
        envelope[lo : lo + cfg.frame_length] += window * window
    out = np.where(envelope > _EPS, acc / np.maximum(envelope, _EPS), 0.0)
    return Waveform(out, sample_rate)


def _dominant_tone_phase(target: np.ndarray, cfg: StftConfig, sample_rate: int) -> np.ndarray:
    """Initial phase estimate from a single-carrier sinusoidal model.

    Estimates the dominant frequency of every frame (parabolic refinement of
    the magnitude peak), integrates it into a coherent carrier, and returns
    the carrier's STFT phases. Deterministic; near-exact for tonal targets
    and neutral for noise-like ones.
    """
    n_freq, n_time = target.shape
    peaks = np.argmax(target, axis=0)
    f_hat = np.empty(n_time)
    for m in range(n_time):
        p = peaks[m]
        delta = 0.0
        if 0 < p < n_freq - 1:
            left, center, right = target[p - 1, m], target[p, m], target[p + 1, m]
            den = left - 2.0 * center + right
            if den != 0.0:
                delta = float(np.clip(0.5 * (left - right) / den, -0.5, 0.5))
        f_hat[m] = (p + delta) * sample_rate / cfg.frame_length
    n_samples = (n_time - 1) * cfg.hop_length + cfg.frame_length
    centers = cfg.hop_length * np.arange(n_time) + cfg.frame_length / 2
    f_per_sample = np.interp(np.arange(n_samples), centers, f_hat)
    carrier = np.cos(2.0 * np.pi * np.cumsum(f_per_sample) / sample_rate)
    return np.angle(stft_complex(Waveform(carrier, sample_rate), cfg))


def griffin_lim_trace(
    s: Spectrogram,
    iterations: int = GRIFFIN_LIM_ITERATIONS,
    cfg: StftConfig = StftConfig(),
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    init: str = "tonal",
    seed: int | None = None,
    momentum: float = 0.99,
) -> tuple[Waveform, np.ndarray]:
    """Griffin-Lim phase retrieval, returning the per-iteration distances.

    The i-th entry of the trace is the spectral-convergence distance
    ``|| |STFT(x_i)| - s ||_F / ||s||_F`` of the iterate held after
    iteration i. Accelerated steps (momentum > 0) that would worsen the
    distance are rejected and the search restarts from the best iterate, so
    the trace is non-increasing by construction.

    ``init`` selects the starting phase: "tonal" (default, deterministic
    sinusoidal-model estimate), "zero", or "random" (uniform, seeded).
    """
    if s.normalized:
        raise ValueError("griffin_lim requires a raw (non-normalized) spectrogram")
    if np.any(s.magnitudes < 0):
        raise ValueError("griffin_lim requires nonnegative magnitudes")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if s.magnitudes.size == 0:
        raise ValueError("zero-size spectrogram")
    if s.n_freq != cfg.n_freq:
        raise ValueError(
            f"spectrogram has {s.n_freq} frequency rows, config expects {cfg.n_freq}"
        )
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")

    target = s.magnitudes
    target_norm = np.linalg.norm(target)
    if target_norm == 0.0:
        n_samples = (s.n_time - 1) * cfg.hop_length + cfg.frame_length
        return Waveform(np.zeros(n_samples), sample_rate), np.zeros(iterations)

    if init == "tonal":
        phase = _dominant_tone_phase(target, cfg, sample_rate)
    elif init == "zero":
        phase = np.zeros_like(target)
    elif init == "random":
        rng = np.random.default_rng(seed)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=target.shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    frames = target * np.exp(1j * phase)

    distances = np.empty(iterations)
    best_dist = np.inf
    best_wave = None
    best_frames = None
    prev_projected = None
    for i in range(iterations):
        wave = istft_true_phase(frames, cfg, sample_rate)
        rebuilt = stft_complex(wave, cfg)
        dist = np.linalg.norm(np.abs(rebuilt) - target) / target_norm
        projected = target * rebuilt / np.maximum(np.abs(rebuilt), _EPS)
        if dist <= best_dist:
            best_dist, best_wave, best_frames = dist, wave, projected
            if prev_projected is not None and momentum > 0.0:
                frames = projected + momentum * (projected - prev_projected)
            else:
                frames = projected
            prev_projected = projected
        else:
            # overshoot from the accelerated step: restart from the best point
            frames = best_frames
            prev_projected = best_frames
        distances[i] = best_dist
    return best_wave, distances


def griffin_lim(
    s: Spectrogram,
    iterations: int = GRIFFIN_LIM_ITERATIONS,
    cfg: StftConfig = StftConfig(),
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    init: str = "tonal",
    seed: int | None = None,
    momentum: float = 0.99,
) -> Waveform:
    """Waveform whose STFT magnitude approximates ``s``."""
    wave, _ = griffin_lim_trace(s, iterations, cfg, sample_rate, init, seed, momentum)
    return wave


def segment(
    s: Spectrogram, win_f: int = 48, win_t: int = 320, stride_t: int = 5
) -> list[Spectrogram]:
    """Sliding-window segments over time, keeping the bottom ``win_f`` rows.

    Offsets run 0, stride_t, 2*stride_t, ...; the count is
    floor((n_time - win_t) / stride_t) + 1.
    """
    if win_f < 1 or win_t < 1 or stride_t < 1:
        raise ValueError("window and stride must be positive")
    if s.n_freq < win_f or s.n_time < win_t:
        raise ValueError(
            f"spectrogram {s.magnitudes.shape} smaller than window ({win_f}, {win_t})"
        )
    count = (s.n_time - win_t) // stride_t + 1
    return [
        Spectrogram(
            magnitudes=s.magnitudes[:win_f, k * stride_t : k * stride_t + win_t].copy(),
            freq_resolution=s.freq_resolution,
            time_resolution=s.time_resolution,
            normalized=s.normalized,
        )
        for k in range(count)
    ]


def normalize(s: Spectrogram, stats: NormStats) -> Spectrogram:
    """Affine map of [min, max] onto [-1, 1]; out-of-range values clamp."""
    span = stats.max_value - stats.min_value
    scaled = 2.0 * (s.magnitudes - stats.min_value) / span - 1.0
    return Spectrogram(
        magnitudes=np.clip(scaled, -1.0, 1.0),
        freq_resolution=s.freq_resolution,
        time_resolution=s.time_resolution,
        normalized=True,
    )


def denormalize(s: Spectrogram, stats: NormStats) -> Spectrogram:
    """Inverse of :func:`normalize` for in-range inputs."""
    if not s.normalized:
        raise ValueError("denormalize expects a normalized spectrogram")
    span = stats.max_value - stats.min_value
    raw = (s.magnitudes + 1.0) / 2.0 * span + stats.min_value
    return Spectrogram(
        magnitudes=raw,
        freq_resolution=s.freq_resolution,
        time_resolution=s.time_resolution,
        normalized=False,
    )


def spectral_distance(a: Spectrogram, b: Spectrogram) -> float:
    """Normalized Frobenius distance, symmetric, in [0, 1]."""
    if a.magnitudes.shape != b.magnitudes.shape:
        raise ValueError(
            f"shape mismatch: {a.magnitudes.shape} vs {b.magnitudes.shape}"
        )
    if a.normalized != b.normalized:
        raise ValueError("normalization flags differ")
    num = np.linalg.norm(a.magnitudes - b.magnitudes)
    den = np.linalg.norm(a.magnitudes) + np.linalg.norm(b.magnitudes)
    return float(num / max(den, _EPS))


def embed_lowband(s: Spectrogram, n_freq_full: int) -> Spectrogram:
    """Place a low-band segment into a full-height grid, zeros above."""
    if s.normalized:
        raise ValueError("embed_lowband expects raw magnitudes")
    if n_freq_full < s.n_freq:
        raise ValueError(f"target height {n_freq_full} smaller than segment {s.n_freq}")
    full = np.zeros((n_freq_full, s.n_time))
    full[: s.n_freq, :] = s.magnitudes
    return Spectrogram(
        magnitudes=full,
        freq_resolution=s.freq_resolution,
        time_resolution=s.time_resolution,
        normalized=False,
    )


# ---------------------------------------------------------------------------
# WAV I/O: mono, 16-bit PCM or 32-bit float, fixed sample rate
# ---------------------------------------------------------------------------


def read_wav(path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Load a mono WAV file; rejects unsupported rates and formats."""
    rate, data = wavfile.read(path)
    if rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} != required {expected_rate}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValueError(
            f"{path}: unsupported sample format {data.dtype}; "
            "use 16-bit PCM or 32-bit float"
        )
    return Waveform(samples, rate)


def wav_bytes(w: Waveform, fmt: str = "float32") -> bytes:
    """Serialize a waveform as an in-memory WAV file."""
    buf = io.BytesIO()
    if fmt == "float32":
        wavfile.write(buf, w.sample_rate, w.samples.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(w.samples, -1.0, 1.0)
        wavfile.write(buf, w.sample_rate, (clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    return buf.getvalue()


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    with open(path, "wb") as fh:
        fh.write(wav_bytes(w, fmt))
