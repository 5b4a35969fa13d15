"""Corpus ingestion, padding and masking, label-shift compensation, splits,
and a deterministic synthetic-corpus generator for desk-scale verification.

File formats (all UTF-8, ``.`` decimal, LF newlines, rows sorted by
(subject_id, frame_index) ascending with frame_index counting 100 ms hops
from 0):

* feature CSV:    header ``subject_id,frame_index,f_0,...,f_{D-1}``
* label CSV:      header ``subject_id,frame_index,arousal,valence,liking``
* prediction CSV: identical schema to the label CSV, so prediction tracks
  are interchangeable with labels when fitting fusion regressors
* corpus manifest: JSON listing feature-set files, the label file, the
  per-subject split assignment, and the corpus maximum length

Only valid (unpadded) frames are written; loaders re-pad to the manifest
length. The writers are canonical (shortest round-trip float repr), so a
load/save cycle is byte-identical.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1
LABEL_COLUMNS = ("arousal", "valence", "liking")

_ID_RE = re.compile(r"^[A-Za-z0-9_+.-]+$")


@dataclass
class FeatureTrack:
    """Per-subject frame matrix for one feature set, zero-padded with a mask."""

    feature_set_name: str
    subject_id: str
    frames: np.ndarray  # (T, D) float64, padded rows exactly zero
    mask: np.ndarray  # (T,) uint8, contiguous valid prefix

    @property
    def valid_len(self) -> int:
        return int(self.mask.sum())

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class LabelTrack:
    """Per-subject (arousal, valence, liking) frames with a validity mask."""

    subject_id: str
    frames: np.ndarray  # (T, 3)
    mask: np.ndarray  # (T,) uint8, contiguous valid prefix

    @property
    def valid_len(self) -> int:
        return int(self.mask.sum())


@dataclass
class Dataset:
    """A loaded corpus: feature sets and labels per subject, plus splits."""

    feature_sets: dict[str, dict[str, FeatureTrack]]  # set name -> subject -> track
    labels: dict[str, LabelTrack]  # subject -> track
    train_subjects: tuple[str, ...]
    dev_subjects: tuple[str, ...]
    max_len: int

    def __post_init__(self):
        overlap = set(self.train_subjects) & set(self.dev_subjects)
        if overlap:
            raise ValueError(f"subjects in both splits: {sorted(overlap)}")
        all_subjects = set(self.train_subjects) | set(self.dev_subjects)
        if set(self.labels) != all_subjects:
            raise ValueError("label subjects do not match split assignment")
        for name, tracks in self.feature_sets.items():
            if set(tracks) != all_subjects:
                raise ValueError(f"feature set {name!r} missing subjects")

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted(self.labels))

    def split(self, name: str) -> tuple[str, ...]:
        if name == "train":
            return self.train_subjects
        if name == "dev":
            return self.dev_subjects
        raise ValueError(f"unknown split {name!r}")


def _contiguous_prefix_mask(valid_len: int, total_len: int) -> np.ndarray:
    mask = np.zeros(total_len, dtype=np.uint8)
    mask[:valid_len] = 1
    return mask


def pad_to(tracks, max_len: int):
    """Pad every track to ``max_len`` frames with zero rows and prefix masks.

    Longer tracks are an error; the corpus maximum is defined as the longest
    sequence, so truncation never occurs.
    """
    padded = []
    for track in tracks:
        n_valid = track.valid_len
        if n_valid > max_len:
            raise ValueError(
                f"track {track.subject_id!r} has {n_valid} frames, "
                f"exceeding max_len {max_len}"
            )
        frames = np.zeros((max_len, track.frames.shape[1]), dtype=np.float64)
        frames[:n_valid] = track.frames[:n_valid]
        padded.append(
            replace(track, frames=frames, mask=_contiguous_prefix_mask(n_valid, max_len))
        )
    return padded


def _shift_valid(frames: np.ndarray, valid_len: int, shift: int) -> np.ndarray:
    """Shift the valid prefix of ``frames`` earlier by ``shift`` frames.

    Positive shift moves values toward index 0 (annotation-delay
    compensation); vacated trailing frames replicate the last valid row.
    Negative shift moves values later, replicating the first valid row.
    Padded frames are untouched.
    """
    if abs(shift) >= valid_len:
        raise ValueError(f"shift {shift} must be smaller than valid length {valid_len}")
    out = frames.copy()
    L = valid_len
    if shift > 0:
        out[: L - shift] = frames[shift:L]
        out[L - shift : L] = frames[L - 1]
    elif shift < 0:
        k = -shift
        out[k:L] = frames[: L - k]
        out[:k] = frames[0]
    return out


def shift_labels(track: LabelTrack, frames: int = 1) -> LabelTrack:
    """Move labels earlier by ``frames`` hops to compensate annotation delay."""
    shifted = _shift_valid(track.frames, track.valid_len, frames)
    return replace(track, frames=shifted)


def unshift_predictions(preds: np.ndarray, valid_len: int, frames: int = 1) -> np.ndarray:
    """Move predictions back by ``frames`` hops when writing them out."""
    return _shift_valid(np.asarray(preds, dtype=np.float64), valid_len, -frames)


# ---------------------------------------------------------------------------
# CSV reading and writing
# ---------------------------------------------------------------------------


def _format_float(v: float) -> str:
    return repr(float(v))


def _parse_csv_rows(path: Path, expected_value_cols: int | None):
    """Yield (subject_id, frame_index, values) with loud validation."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "subject_id" or header[1] != "frame_index":
            raise ValueError(
                f"{path}: header must start with subject_id,frame_index; got {header[:2]}"
            )
        n_cols = len(header)
        if expected_value_cols is not None and n_cols - 2 != expected_value_cols:
            raise ValueError(
                f"{path}: expected {expected_value_cols} value columns, got {n_cols - 2}"
            )
        saw_rows = False
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_cols} columns, got {len(row)}"
                )
            subject = row[0]
            try:
                frame_index = int(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad frame_index {row[1]!r}") from None
            values = np.empty(n_cols - 2, dtype=np.float64)
            for j, cell in enumerate(row[2:]):
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: column {header[2 + j]!r}: bad value {cell!r}"
                    ) from None
                if not np.isfinite(values[j]):
                    raise ValueError(
                        f"{path}:{lineno}: column {header[2 + j]!r}: non-finite value"
                    )
            saw_rows = True
            yield subject, frame_index, values
        if not saw_rows:
            raise ValueError(f"{path}: no data rows")


def _collect_tracks(path: Path, expected_value_cols: int | None):
    """Group rows by subject, enforcing (subject, frame) ascending order."""
    frames_by_subject: dict[str, list[np.ndarray]] = {}
    last_subject = None
    for subject, frame_index, values in _parse_csv_rows(path, expected_value_cols):
        if subject != last_subject:
            if subject in frames_by_subject:
                raise ValueError(f"{path}: subject {subject!r} rows are not contiguous")
            if last_subject is not None and subject < last_subject:
                raise ValueError(f"{path}: subjects out of ascending order at {subject!r}")
            frames_by_subject[subject] = []
            last_subject = subject
        rows = frames_by_subject[subject]
        if frame_index != len(rows):
            raise ValueError(
                f"{path}: subject {subject!r}: expected frame_index {len(rows)}, "
                f"got {frame_index}"
            )
        rows.append(values)
    return {s: np.vstack(rows) for s, rows in frames_by_subject.items()}


def load_feature_csv(path, feature_set_name: str) -> dict[str, FeatureTrack]:
    """Load one feature CSV into unpadded per-subject tracks."""
    path = Path(path)
    raw = _collect_tracks(path, expected_value_cols=None)
    dims = {arr.shape[1] for arr in raw.values()}
    if len(dims) > 1:
        raise ValueError(f"{path}: inconsistent feature dimension across subjects")
    return {
        s: FeatureTrack(
            feature_set_name=feature_set_name,
            subject_id=s,
            frames=arr,
            mask=np.ones(arr.shape[0], dtype=np.uint8),
        )
        for s, arr in raw.items()
    }


def load_label_csv(path) -> dict[str, LabelTrack]:
    """Load a label (or prediction) CSV into unpadded per-subject tracks."""
    raw = _collect_tracks(Path(path), expected_value_cols=3)
    return {
        s: LabelTrack(subject_id=s, frames=arr, mask=np.ones(arr.shape[0], dtype=np.uint8))
        for s, arr in raw.items()
    }


def _write_rows(path: Path, header: list[str], tracks) -> None:
    for track in tracks:
        if not _ID_RE.match(track.subject_id):
            raise ValueError(f"subject id {track.subject_id!r} not CSV-safe")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for track in sorted(tracks, key=lambda t: t.subject_id):
            n_valid = track.valid_len
            for t in range(n_valid):
                cells = [track.subject_id, str(t)]
                cells.extend(_format_float(v) for v in track.frames[t])
                fh.write(",".join(cells) + "\n")


def write_feature_csv(path, tracks: dict[str, FeatureTrack]) -> None:
    dim = next(iter(tracks.values())).dim
    header = ["subject_id", "frame_index"] + [f"f_{j}" for j in range(dim)]
    _write_rows(Path(path), header, tracks.values())


def write_label_csv(path, tracks: dict[str, LabelTrack]) -> None:
    header = ["subject_id", "frame_index", *LABEL_COLUMNS]
    _write_rows(Path(path), header, tracks.values())


# ---------------------------------------------------------------------------
# Corpus manifest
# ---------------------------------------------------------------------------


def save_corpus(dataset: Dataset, out_dir) -> Path:
    """Write feature CSVs, the label CSV, and the manifest. Returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_files = {}
    for name in sorted(dataset.feature_sets):
        fname = f"features_{name}.csv"
        write_feature_csv(out_dir / fname, dataset.feature_sets[name])
        feature_files[name] = fname
    write_label_csv(out_dir / "labels.csv", dataset.labels)
    splits = {s: "train" for s in dataset.train_subjects}
    splits.update({s: "dev" for s in dataset.dev_subjects})
    manifest = {
        "format_version": MANIFEST_VERSION,
        "max_len": dataset.max_len,
        "feature_sets": feature_files,
        "labels": "labels.csv",
        "splits": splits,
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_corpus(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest format_version {version!r}")
    base = manifest_path.parent
    max_len = int(manifest["max_len"])

    label_tracks = load_label_csv(base / manifest["labels"])
    labels = {t.subject_id: t for t in pad_to(label_tracks.values(), max_len)}

    feature_sets = {}
    for name, fname in manifest["feature_sets"].items():
        tracks = load_feature_csv(base / fname, name)
        feature_sets[name] = {t.subject_id: t for t in pad_to(tracks.values(), max_len)}
        for subject, track in feature_sets[name].items():
            if subject not in labels:
                raise ValueError(f"feature set {name!r}: unknown subject {subject!r}")
            if track.valid_len != labels[subject].valid_len:
                raise ValueError(
                    f"feature set {name!r}: subject {subject!r} has "
                    f"{track.valid_len} frames but labels have {labels[subject].valid_len}"
                )

    splits = manifest["splits"]
    train = tuple(sorted(s for s, v in splits.items() if v == "train"))
    dev = tuple(sorted(s for s, v in splits.items() if v == "dev"))
    unknown = {v for v in splits.values()} - {"train", "dev"}
    if unknown:
        raise ValueError(f"unknown split names in manifest: {sorted(unknown)}")
    return Dataset(
        feature_sets=feature_sets,
        labels=labels,
        train_subjects=train,
        dev_subjects=dev,
        max_len=max_len,
    )


# ---------------------------------------------------------------------------
# Batch assembly and feature standardization
# ---------------------------------------------------------------------------


def stack_features(
    tracks: dict[str, FeatureTrack], subjects
) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-subject tracks into (B, T, D) plus a (B, T) mask."""
    xs = [tracks[s].frames for s in subjects]
    ms = [tracks[s].mask for s in subjects]
    return np.stack(xs), np.stack(ms)


def stack_labels(labels: dict[str, LabelTrack], subjects) -> tuple[np.ndarray, np.ndarray]:
    ys = [labels[s].frames for s in subjects]
    ms = [labels[s].mask for s in subjects]
    return np.stack(ys), np.stack(ms)


@dataclass
class FeatureScaler:
    """Per-feature standardization with statistics from the fitting split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, tracks: dict[str, FeatureTrack], subjects) -> "FeatureScaler":
        rows = [tracks[s].frames[: tracks[s].valid_len] for s in subjects]
        data = np.concatenate(rows, axis=0)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Standardize valid frames; padded frames stay exactly zero."""
        out = (frames - self.mean) / self.std
        out *= np.asarray(mask, dtype=np.float64)[..., None]
        return out


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthModality:
    """One synthetic feature set: a noisy linear view of the latent signals.

    ``signal`` gives the per-attribute mixing strength (arousal, valence,
    liking); a modality with ``signal=(1, 0, 0)`` carries arousal
    information only.
    """

    name: str
    dim: int
    signal: tuple[float, float, float]
    noise: float = 0.3


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 12
    n_dev: int = 6
    seq_len: int = 60
    min_len_fraction: float = 0.75
    smooth_window: int = 9
    modalities: tuple[SynthModality, ...] = (
        SynthModality("audio_a", 8, (0.9, 0.5, 0.2)),
        SynthModality("video_b", 6, (0.2, 0.9, 0.5)),
        SynthModality("physio_c", 10, (0.4, 0.3, 0.9)),
    )

    def validate(self) -> None:
        if self.n_train < 1 or self.n_dev < 1:
            raise ValueError("need at least one subject per split")
        if self.seq_len < 4 or not 0.0 < self.min_len_fraction <= 1.0:
            raise ValueError("degenerate sequence length settings")
        if self.smooth_window < 1 or not self.modalities:
            raise ValueError("degenerate synthesis settings")
        for m in self.modalities:
            if m.dim < 1 or m.noise < 0.0:
                raise ValueError(f"degenerate modality {m.name!r}")


def complementary_synth_spec() -> SynthSpec:
    """Three modalities, each informative about essentially one attribute."""
    return SynthSpec(
        modalities=(
            SynthModality("mod_arousal", 6, (1.0, 0.05, 0.05), noise=0.2),
            SynthModality("mod_valence", 6, (0.05, 1.0, 0.05), noise=0.2),
            SynthModality("mod_liking", 6, (0.05, 0.05, 1.0), noise=0.2),
        )
    )


def pipeline_synth_spec() -> SynthSpec:
    """Twelve feature sets of varying quality for the full pipeline run."""
    table = [
        ("set01_aro", 6, (0.95, 0.20, 0.10), 0.25),
        ("set02_val", 6, (0.15, 0.95, 0.10), 0.25),
        ("set03_lik", 6, (0.10, 0.20, 0.95), 0.25),
        ("set04_av", 5, (0.70, 0.70, 0.10), 0.30),
        ("set05_al", 5, (0.70, 0.10, 0.70), 0.30),
        ("set06_vl", 5, (0.10, 0.70, 0.70), 0.30),
        ("set07_all", 8, (0.55, 0.55, 0.55), 0.35),
        ("set08_weak", 4, (0.30, 0.25, 0.20), 0.60),
        ("set09_noisy", 4, (0.40, 0.40, 0.40), 0.90),
        ("set10_aro2", 5, (0.80, 0.10, 0.10), 0.45),
        ("set11_junk", 4, (0.05, 0.05, 0.05), 1.00),
        ("set12_val2", 5, (0.10, 0.80, 0.10), 0.45),
    ]
    return SynthSpec(
        modalities=tuple(SynthModality(n, d, s, noise=v) for n, d, s, v in table)
    )


def _smooth_columns(white: np.ndarray, window: int) -> np.ndarray:
    """Moving-average low-pass filter, rescaled to roughly unit variance."""
    kernel = np.ones(window) / window
    n = white.shape[0]
    lo = window // 2
    out = np.empty_like(white)
    for k in range(white.shape[1]):
        # full convolution sliced to the centered n samples; valid for n < window
        out[:, k] = np.convolve(white[:, k], kernel, mode="full")[lo : lo + n]
    return out * np.sqrt(window)


def synth_corpus(seed: int, spec: SynthSpec | None = None) -> Dataset:
    """Generate a deterministic synthetic corpus.

    Labels are smooth low-pass-filtered latent signals squashed through
    tanh; each modality observes a noisy fixed linear mixture of the
    latents it is declared to carry, so complementary modalities make
    fusion measurably helpful.
    """
    spec = spec or SynthSpec()
    spec.validate()
    rng = np.random.default_rng(seed)

    n_subjects = spec.n_train + spec.n_dev
    subject_ids = [f"subj{i:03d}" for i in range(n_subjects)]
    train = tuple(subject_ids[: spec.n_train])
    dev = tuple(subject_ids[spec.n_train :])

    # corpus-wide mixing matrices so one mapping generalizes across subjects
    mixers = {
        m.name: rng.normal(size=(3, m.dim)) * np.asarray(m.signal)[:, None]
        for m in spec.modalities
    }

    min_len = max(4, int(round(spec.seq_len * spec.min_len_fraction)))
    labels: dict[str, LabelTrack] = {}
    feature_sets: dict[str, dict[str, FeatureTrack]] = {m.name: {} for m in spec.modalities}
    for subject in subject_ids:
        length = int(rng.integers(min_len, spec.seq_len + 1))
        white = rng.normal(size=(length, 3))
        latent = _smooth_columns(white, spec.smooth_window)
        label_frames = np.tanh(0.8 * latent)
        labels[subject] = LabelTrack(
            subject_id=subject,
            frames=label_frames,
            mask=np.ones(length, dtype=np.uint8),
        )
        for m in spec.modalities:
            clean = latent @ mixers[m.name]
            noisy = clean + m.noise * rng.normal(size=clean.shape)
            feature_sets[m.name][subject] = FeatureTrack(
                feature_set_name=m.name,
                subject_id=subject,
                frames=noisy,
                mask=np.ones(length, dtype=np.uint8),
            )

    labels = {t.subject_id: t for t in pad_to(labels.values(), spec.seq_len)}
    feature_sets = {
        name: {t.subject_id: t for t in pad_to(tracks.values(), spec.seq_len)}
        for name, tracks in feature_sets.items()
    }
    return Dataset(
        feature_sets=feature_sets,
        labels=labels,
        train_subjects=train,
        dev_subjects=dev,
        max_len=spec.seq_len,
    )
