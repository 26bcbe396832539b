"""Trial containers, CSV ingestion, normalization and synthetic EEG.

``EEGB`` container, little-endian::

    b"EEGB" | u32 version=1 | u32 n_subjects | u32 n_trials | u32 n_channels
    | u32 n_samples | u32 n_classes
    then per trial: u32 subject_id | u32 label | u8 split | f32[channels * samples]
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes

MAGIC = b"EEGB"
VERSION = 1
HEADER = struct.Struct("<4s6I")
TRIAL_HEAD = struct.Struct("<IIB")
TRAIN, TEST = 0, 1
SPLIT_NAMES = {"train": TRAIN, "test": TEST}


class ContainerError(ValueError):
    pass


class TruncatedFileError(ContainerError):
    pass


class DataError(ValueError):
    pass


@dataclass
class TrialSet:
    data: np.ndarray  # [N, C, S] float32
    subjects: np.ndarray  # [N] int
    labels: np.ndarray  # [N] int
    split: np.ndarray  # [N] uint8, TRAIN or TEST
    n_subjects: int
    n_classes: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.uint8)
        n = len(self.data)
        if self.data.ndim != 3:
            raise DataError(f"trial data must be [N, channels, samples], got {self.data.shape}")
        if not (len(self.subjects) == len(self.labels) == len(self.split) == n):
            raise DataError("per-trial metadata lengths disagree with the trial count")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if n and (self.subjects.min() < 0 or self.subjects.max() >= self.n_subjects):
            raise DataError(f"subject ids must lie in [0, {self.n_subjects})")

    def __len__(self) -> int:
        return len(self.data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def subset(self, mask) -> "TrialSet":
        mask = np.asarray(mask)
        return replace(self, data=self.data[mask], subjects=self.subjects[mask],
                       labels=self.labels[mask], split=self.split[mask])

    def train(self) -> "TrialSet":
        return self.subset(self.split == TRAIN)

    def test(self) -> "TrialSet":
        return self.subset(self.split == TEST)

    def subject_ids(self) -> list[int]:
        return sorted(int(s) for s in np.unique(self.subjects))

    def equals(self, other: "TrialSet") -> bool:
        return (self.n_subjects == other.n_subjects and self.n_classes == other.n_classes
                and np.array_equal(self.subjects, other.subjects)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.split, other.split)
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())


# container -----------------------------------------------------------------

def container_size(n_trials: int, n_channels: int, n_samples: int) -> int:
    return HEADER.size + n_trials * (TRIAL_HEAD.size + 4 * n_channels * n_samples)


def encode_container(ts: TrialSet) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, ts.n_subjects, len(ts), ts.n_channels, ts.n_samples, ts.n_classes)]
    for i in range(len(ts)):
        parts.append(TRIAL_HEAD.pack(int(ts.subjects[i]), int(ts.labels[i]), int(ts.split[i])))
        parts.append(np.ascontiguousarray(ts.data[i], dtype="<f4").tobytes())
    return b"".join(parts)


def decode_container(blob: bytes) -> TrialSet:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise ContainerError("not an EEGB container (bad magic)")
    if len(blob) < HEADER.size:
        raise TruncatedFileError("EEGB header truncated")
    _, version, n_subj, n_trials, n_ch, n_samp, n_cls = HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise ContainerError(f"unsupported EEGB version {version}")
    expected = container_size(n_trials, n_ch, n_samp)
    if len(blob) < expected:
        raise TruncatedFileError(f"EEGB file truncated: {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise ContainerError(f"EEGB file has {len(blob) - expected} trailing bytes")
    data = np.empty((n_trials, n_ch, n_samp), dtype=np.float32)
    subjects = np.empty(n_trials, dtype=np.int64)
    labels = np.empty(n_trials, dtype=np.int64)
    split = np.empty(n_trials, dtype=np.uint8)
    pos = HEADER.size
    nbytes = 4 * n_ch * n_samp
    for i in range(n_trials):
        subjects[i], labels[i], split[i] = TRIAL_HEAD.unpack_from(blob, pos)
        pos += TRIAL_HEAD.size
        data[i] = np.frombuffer(blob, dtype="<f4", count=n_ch * n_samp, offset=pos).reshape(n_ch, n_samp)
        pos += nbytes
    return TrialSet(data, subjects, labels, split, n_subj, n_cls)


def write_container(ts: TrialSet, path) -> None:
    atomic_write_bytes(path, encode_container(ts))


def read_container(path) -> TrialSet:
    return decode_container(Path(path).read_bytes())


# CSV import ----------------------------------------------------------------

CSV_NAME = re.compile(r"^s(\d+)_c(\d+)_(\d+)\.csv$")


def import_csv(directory, manifest: str = "manifest.json") -> TrialSet:
    """Assemble a TrialSet from ``s<subject>_c<label>_<idx>.csv`` files.

    Each CSV holds one trial, one row per channel. The optional manifest JSON
    may carry ``n_classes``, ``n_subjects`` and ``splits`` (filename -> "train"/"test";
    unlisted files are training trials).
    """
    directory = Path(directory)
    meta = {}
    if (directory / manifest).exists():
        meta = json.loads((directory / manifest).read_text(encoding="utf-8"))
    splits = meta.get("splits", {})
    files = sorted((p for p in directory.iterdir() if CSV_NAME.match(p.name)),
                   key=lambda p: tuple(int(g) for g in CSV_NAME.match(p.name).groups()))
    if not files:
        raise DataError(f"no trial CSVs matching s<subject>_c<label>_<idx>.csv in {directory}")
    trials, subjects, labels, split = [], [], [], []
    shape = None
    for path in files:
        subj, label, _ = (int(g) for g in CSV_NAME.match(path.name).groups())
        rows = [line.split(",") for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise DataError(f"{path.name}: ragged rows (column counts {sorted(widths)})")
        try:
            arr = np.array(rows, dtype=np.float64).astype(np.float32)
        except ValueError as e:
            raise DataError(f"{path.name}: non-numeric value ({e})") from None
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataError(f"{path.name}: shape {arr.shape} differs from {shape}")
        tag = splits.get(path.name, "train")
        if tag not in SPLIT_NAMES:
            raise DataError(f"{path.name}: unknown split tag {tag!r}")
        trials.append(arr)
        subjects.append(subj)
        labels.append(label)
        split.append(SPLIT_NAMES[tag])
    n_classes = int(meta.get("n_classes", max(labels) + 1))
    bad = [f.name for f, lab in zip(files, labels) if lab >= n_classes]
    if bad:
        raise DataError(f"labels outside [0, {n_classes}) in: {', '.join(bad)}")
    n_subjects = int(meta.get("n_subjects", max(subjects) + 1))
    return TrialSet(np.stack(trials), subjects, labels, split, n_subjects, n_classes)


# normalization -------------------------------------------------------------

VAR_FLOOR = 1e-8


def zscore(ts: TrialSet) -> TrialSet:
    """Per trial, per channel: subtract the mean, divide by the (floored) std."""
    x = ts.data.astype(np.float64)
    mu = x.mean(axis=2, keepdims=True)
    var = np.maximum(x.var(axis=2, keepdims=True), VAR_FLOOR)
    return replace(ts, data=((x - mu) / np.sqrt(var)).astype(np.float32))


# synthetic EEG -------------------------------------------------------------

@dataclass
class SynthSpec:
    class_freqs: list[float] = field(default_factory=lambda: [6.0, 10.0, 15.0, 22.0])
    subject_gains: list[float] = field(default_factory=lambda: [1.0, 0.8, 1.25])
    subject_phases: list[float] = field(default_factory=lambda: [0.0, 1.1, 2.3])
    noise_std: float = 0.5
    n_channels: int = 4
    n_samples: int = 128
    sampling_rate: float = 100.0
    trials_per_class: int = 20
    test_fraction: float = 0.2
    channel_phases: list[float] | None = None

    def __post_init__(self):
        if len(set(self.class_freqs)) != len(self.class_freqs):
            raise ValueError("class frequencies must be pairwise distinct")
        if len(self.subject_gains) != len(self.subject_phases):
            raise ValueError("subject_gains and subject_phases must have equal length")
        if self.channel_phases is not None and len(self.channel_phases) != self.n_channels:
            raise ValueError("channel_phases needs one entry per channel")

    @property
    def n_classes(self) -> int:
        return len(self.class_freqs)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_gains)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def synthesize(spec: SynthSpec, seed: int) -> TrialSet:
    """``gain_s * sin(2 pi f_c t / fs + phase_s + phase_ch) + N(0, noise_std^2)``.

    Each subject's trials are split stratified by class, ``test_fraction`` to test.
    """
    rng = np.random.default_rng(seed)
    ch_phase = (np.asarray(spec.channel_phases, dtype=np.float64) if spec.channel_phases is not None
                else np.arange(spec.n_channels) * np.pi / spec.n_channels)
    t = np.arange(spec.n_samples) / spec.sampling_rate
    n_test = int(round(spec.test_fraction * spec.trials_per_class))
    data, subjects, labels, split = [], [], [], []
    for s, (gain, phase) in enumerate(zip(spec.subject_gains, spec.subject_phases)):
        for c, freq in enumerate(spec.class_freqs):
            clean = gain * np.sin(2 * np.pi * freq * t[None, :] + phase + ch_phase[:, None])
            noise = rng.normal(0.0, spec.noise_std, size=(spec.trials_per_class,) + clean.shape)
            tags = np.full(spec.trials_per_class, TRAIN, dtype=np.uint8)
            tags[rng.permutation(spec.trials_per_class)[:n_test]] = TEST
            data.append(clean[None] + noise)
            subjects += [s] * spec.trials_per_class
            labels += [c] * spec.trials_per_class
            split.append(tags)
    return TrialSet(np.concatenate(data), subjects, labels, np.concatenate(split),
                    spec.n_subjects, spec.n_classes)


def spectral_peak_classify(ts: TrialSet, class_freqs, sampling_rate: float) -> np.ndarray:
    """Label each trial by the class frequency nearest its channel-averaged FFT peak."""
    x = ts.data.astype(np.float64)
    x = x - x.mean(axis=2, keepdims=True)
    power = (np.abs(np.fft.rfft(x, axis=2)) ** 2).mean(axis=1)
    freqs = np.fft.rfftfreq(ts.n_samples, d=1.0 / sampling_rate)
    peaks = freqs[np.argmax(power, axis=1)]
    return np.argmin(np.abs(peaks[:, None] - np.asarray(class_freqs)[None, :]), axis=1)
