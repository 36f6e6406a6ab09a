"""Training-corpus construction.

Two sources: user-supplied labeled WAV files laid out as
``root/<class_name>/*.wav``, or a procedural synthetic corpus whose five
default classes mimic common texture archetypes (smooth mid-low rumble,
fine high-frequency hiss, and so on) at desk scale.

The pipeline to a trainable dataset is: bandpass -> STFT -> keep the low
frequency rows -> sliding-window segmentation -> corpus-global min-max
normalization into [-1, 1].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import NormStats, Spectrogram, StftConfig, Waveform

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TextureClassSpec:
    """Recipe for one synthetic texture class.

    ``spectral_envelope`` lists (center_hz, bandwidth_hz, gain) noise bands;
    ``pulse_rate`` > 0 adds an amplitude-pulse train at that many pulses per
    second with relative strength ``pulse_strength``. ``center_drift`` > 0
    sweeps the band centers slowly over time (fractional excursion), the way
    recorded surface interactions drift with contact speed, so segments cut
    from one recording differ in instantaneous spectrum.
    """

    name: str
    spectral_envelope: tuple[tuple[float, float, float], ...]
    pulse_rate: float = 0.0
    pulse_strength: float = 0.0
    amplitude: float = 0.8
    center_drift: float = 0.0
    amp_drift: float = 0.0

    def __post_init__(self):
        if len(self.spectral_envelope) == 0:
            raise ValueError(f"{self.name}: needs at least one envelope band")
        if any(gain < 0 for _, _, gain in self.spectral_envelope):
            raise ValueError(f"{self.name}: band gains must be nonnegative")
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError(f"{self.name}: amplitude must be in (0, 1]")
        if self.pulse_rate < 0 or self.pulse_strength < 0:
            raise ValueError(f"{self.name}: pulse parameters must be nonnegative")
        if not 0.0 <= self.center_drift < 1.0:
            raise ValueError(f"{self.name}: center_drift must be in [0, 1)")
        if not 0.0 <= self.amp_drift < 1.0:
            raise ValueError(f"{self.name}: amp_drift must be in [0, 1)")


def toy_class_specs() -> list[TextureClassSpec]:
    """Five spectrally distinct desk-scale texture archetypes."""
    return [
        TextureClassSpec(
            name="smooth_midlow",
            spectral_envelope=((160.0, 110.0, 1.0),),
            amplitude=0.6,
            center_drift=0.4,
            amp_drift=0.45,
        ),
        TextureClassSpec(
            name="fine_high",
            spectral_envelope=((820.0, 150.0, 1.0),),
            amplitude=0.35,
            center_drift=0.18,
            amp_drift=0.4,
        ),
        TextureClassSpec(
            name="bright_strong",
            spectral_envelope=((540.0, 130.0, 1.0),),
            amplitude=0.95,
            center_drift=0.25,
            amp_drift=0.45,
        ),
        TextureClassSpec(
            name="pulsed_low",
            spectral_envelope=((90.0, 70.0, 1.0),),
            pulse_rate=6.0,
            pulse_strength=2.5,
            amplitude=0.85,
            center_drift=0.35,
            amp_drift=0.4,
        ),
        TextureClassSpec(
            name="coarse_mixed",
            spectral_envelope=((130.0, 80.0, 1.0), (400.0, 120.0, 0.7)),
            pulse_rate=13.0,
            pulse_strength=0.9,
            amplitude=0.8,
            center_drift=0.3,
            amp_drift=0.45,
        ),
    ]


def synth_texture(
    spec: TextureClassSpec,
    seed: int,
    duration_s: float = 5.0,
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Deterministic band-shaped noise texture with an optional pulse train."""
    if duration_s < 2.0:
        raise ValueError(f"duration must be >= 2 s, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(duration_s * sample_rate)
    noise = rng.standard_normal(n)

    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spectrum = np.fft.rfft(noise)

    def band_shape(scale: float) -> np.ndarray:
        envelope = np.zeros_like(freqs)
        for center, bandwidth, gain in spec.spectral_envelope:
            sigma = max(bandwidth / 2.0, 1.0)
            envelope += gain * np.exp(-0.5 * ((freqs - center * scale) / sigma) ** 2)
        return np.fft.irfft(spectrum * envelope, n)

    if spec.center_drift == 0.0:
        shaped = band_shape(1.0)
    else:
        # three fixed spectral variants mixed by a slowly wandering weight:
        # the instantaneous spectrum sweeps within the class band family
        layers = np.stack([
            band_shape(1.0 - spec.center_drift),
            band_shape(1.0),
            band_shape(1.0 + spec.center_drift),
        ])
        n_nodes = max(int(duration_s * 4), 4)
        node_pos = np.linspace(0, n - 1, n_nodes)
        logits = rng.normal(0.0, 1.5, size=(3, n_nodes))
        weights = np.stack([np.interp(np.arange(n), node_pos, row) for row in logits])
        weights = np.exp(weights)
        weights /= weights.sum(axis=0, keepdims=True)
        shaped = (layers * weights).sum(axis=0)

    if spec.amp_drift > 0.0:
        # slow loudness wander, as when contact pressure varies over a pass
        n_nodes = max(int(duration_s * 3), 4)
        node_pos = np.linspace(0, n - 1, n_nodes)
        level = rng.uniform(0.0, 1.0, size=n_nodes)
        gain = 1.0 - spec.amp_drift * np.interp(np.arange(n), node_pos, level)
        shaped = shaped * gain

    if spec.pulse_rate > 0.0:
        period = sample_rate / spec.pulse_rate
        width = max(int(period * 0.25), 2)
        bump = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(width) / width))
        train = np.zeros(n)
        starts = np.arange(0, n - width, period)
        for start in starts:
            k = int(round(start))
            strength = rng.uniform(0.7, 1.0)
            train[k : k + width] = np.maximum(train[k : k + width], strength * bump)
        shaped = shaped * (1.0 + spec.pulse_strength * train)

    peak = np.abs(shaped).max()
    if peak == 0.0:
        raise ValueError(f"{spec.name}: synthesized a silent texture")
    return Waveform(shaped / peak * spec.amplitude, sample_rate)


def synth_corpus(
    specs: list[TextureClassSpec],
    per_class: int = 2,
    duration_s: float = 5.0,
    seed: int = 0,
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE,
) -> tuple[list[Waveform], list[int], list[str]]:
    """One waveform per (class, replica), seeded per file."""
    waveforms, labels = [], []
    for label, spec in enumerate(specs):
        for rep in range(per_class):
            waveforms.append(
                synth_texture(spec, seed * 100003 + label * 101 + rep, duration_s, sample_rate)
            )
            labels.append(label)
    return waveforms, labels, [s.name for s in specs]


# ---------------------------------------------------------------------------
# Ingestion of user-supplied audio
# ---------------------------------------------------------------------------


@dataclass
class IngestResult:
    waveforms: list[Waveform]
    labels: list[int]
    class_names: list[str]
    errors: list[str] = field(default_factory=list)


def ingest_audio(root_path, sample_rate: int = dsp.DEFAULT_SAMPLE_RATE) -> IngestResult:
    """Load ``root/<class_name>/*.wav``; class index = lexicographic rank.

    Files that fail to load (bad format, wrong rate) are reported in
    ``errors`` and skipped; the rest of the corpus is still ingested.
    """
    root = Path(root_path)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir()) if root.is_dir() else []
    if not class_dirs:
        raise ValueError(f"no classes found under {root}")
    result = IngestResult([], [], [d.name for d in class_dirs])
    for label, class_dir in enumerate(class_dirs):
        wavs = sorted(class_dir.glob("*.wav"))
        if not wavs:
            raise ValueError(f"empty class directory {class_dir}")
        for path in wavs:
            try:
                result.waveforms.append(dsp.read_wav(path, sample_rate))
                result.labels.append(label)
            except ValueError as exc:
                result.errors.append(str(exc))
    return result


# ---------------------------------------------------------------------------
# Dataset pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Bandpass + STFT + segmentation parameters for dataset construction."""

    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    band_low_hz: float = 20.0
    band_high_hz: float = 1000.0
    filter_order: int = 3
    stft: StftConfig = field(default_factory=StftConfig)
    win_f: int = 48
    win_t: int = 320
    stride_t: int = 5

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "band_low_hz": self.band_low_hz,
            "band_high_hz": self.band_high_hz,
            "filter_order": self.filter_order,
            "frame_length": self.stft.frame_length,
            "hop_length": self.stft.hop_length,
            "win_f": self.win_f,
            "win_t": self.win_t,
            "stride_t": self.stride_t,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            sample_rate=d["sample_rate"],
            band_low_hz=d["band_low_hz"],
            band_high_hz=d["band_high_hz"],
            filter_order=d["filter_order"],
            stft=StftConfig(d["frame_length"], d["hop_length"]),
            win_f=d["win_f"],
            win_t=d["win_t"],
            stride_t=d["stride_t"],
        )

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


def toy_pipeline_config() -> PipelineConfig:
    """Reduced profile for fast training: 24 x 64 segments."""
    return PipelineConfig(stft=StftConfig(frame_length=1024), win_f=24, win_t=64, stride_t=16)


@dataclass
class LabeledDataset:
    """Normalized spectrogram segments with class labels.

    ``segments`` is (n, win_f, win_t) in [-1, 1]; labels index class_names.
    """

    segments: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    norm_stats: NormStats
    pipeline: PipelineConfig

    def __post_init__(self):
        if len(self.segments) != len(self.labels):
            raise ValueError("segments and labels must align")
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise ValueError("label out of range for class_names")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.segments.tobytes())
        h.update(self.labels.tobytes())
        h.update(",".join(self.class_names).encode())
        h.update(np.float64(self.norm_stats.min_value).tobytes())
        h.update(np.float64(self.norm_stats.max_value).tobytes())
        return h.hexdigest()

    def segment_spectrogram(self, i: int) -> Spectrogram:
        return Spectrogram(
            magnitudes=self.segments[i],
            freq_resolution=self.pipeline.sample_rate / self.pipeline.stft.frame_length,
            time_resolution=self.pipeline.stft.hop_length / self.pipeline.sample_rate,
            normalized=True,
        )


def waveform_to_segments(w: Waveform, cfg: PipelineConfig) -> list[Spectrogram]:
    """Bandpass, STFT, and segmentation of one waveform (raw magnitudes)."""
    filtered = dsp.apply_bandpass(w, cfg.band_low_hz, cfg.band_high_hz, cfg.filter_order)
    spec = dsp.stft(filtered, cfg.stft)
    return dsp.segment(spec, cfg.win_f, cfg.win_t, cfg.stride_t)


def build_dataset(
    waveforms: list[Waveform],
    labels: list[int],
    class_names: list[str],
    cfg: PipelineConfig | None = None,
) -> LabeledDataset:
    """Full corpus pipeline; normalization stats are corpus-global."""
    cfg = cfg or PipelineConfig()
    if len(class_names) < 2:
        raise ValueError("need at least 2 classes")
    if len(waveforms) != len(labels):
        raise ValueError("waveforms and labels must align")

    all_segments: list[np.ndarray] = []
    all_labels: list[int] = []
    for w, label in zip(waveforms, labels):
        for seg in waveform_to_segments(w, cfg):
            all_segments.append(seg.magnitudes)
            all_labels.append(label)

    label_arr = np.asarray(all_labels, dtype=np.intp)
    counts = np.bincount(label_arr, minlength=len(class_names))
    if np.any(counts == 0):
        missing = [class_names[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"classes with zero segments: {missing}")

    stack = np.stack(all_segments)
    stats = NormStats(float(stack.min()), float(stack.max()))
    span = stats.max_value - stats.min_value
    normalized = np.clip(2.0 * (stack - stats.min_value) / span - 1.0, -1.0, 1.0)
    return LabeledDataset(
        segments=normalized,
        labels=label_arr,
        class_names=list(class_names),
        norm_stats=stats,
        pipeline=cfg,
    )


def subset(ds: LabeledDataset, indices: np.ndarray) -> LabeledDataset:
    """View of selected segments (labels and metadata preserved)."""
    return LabeledDataset(
        segments=ds.segments[indices],
        labels=ds.labels[indices],
        class_names=ds.class_names,
        norm_stats=ds.norm_stats,
        pipeline=ds.pipeline,
    )


def stratified_split(
    labels: np.ndarray, val_fraction: float = 0.1, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded 90/10-style split, stratified per class; returns index arrays."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        perm = rng.permutation(members)
        n_val = max(1, int(round(val_fraction * len(members))))
        val_idx.extend(perm[:n_val])
        train_idx.extend(perm[n_val:])
    return np.sort(np.asarray(train_idx)), np.sort(np.asarray(val_idx))


# ---------------------------------------------------------------------------
# Dataset cache file
# ---------------------------------------------------------------------------


def save_dataset(ds: LabeledDataset, path) -> None:
    np.savez_compressed(
        path,
        format_version=np.int64(DATASET_FORMAT_VERSION),
        segments=ds.segments,
        labels=ds.labels,
        class_names=np.array(ds.class_names),
        norm_min=np.float64(ds.norm_stats.min_value),
        norm_max=np.float64(ds.norm_stats.max_value),
        pipeline_json=np.array(json.dumps(ds.pipeline.to_dict(), sort_keys=True)),
        config_hash=np.array(ds.pipeline.config_hash()),
    )


def load_dataset(path) -> LabeledDataset:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != DATASET_FORMAT_VERSION:
            raise ValueError(
                f"dataset format version {version} unsupported "
                f"(expected {DATASET_FORMAT_VERSION})"
            )
        pipeline = PipelineConfig.from_dict(json.loads(str(data["pipeline_json"])))
        if pipeline.config_hash() != str(data["config_hash"]):
            raise ValueError("dataset cache config hash mismatch")
        return LabeledDataset(
            segments=data["segments"],
            labels=data["labels"],
            class_names=[str(c) for c in data["class_names"]],
            norm_stats=NormStats(float(data["norm_min"]), float(data["norm_max"])),
            pipeline=pipeline,
        )
