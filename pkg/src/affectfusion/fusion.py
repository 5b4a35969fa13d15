"""Feature-level (early) fusion, SVR-based decision-level (late) fusion over
stacked prediction tracks, and the multistage repetition of the latter.

Late fusion fits one SVR per attribute on the fitting split's frames and
scores on the evaluation split. Stage 1 consumes the given tracks; every
later stage consumes only the single track produced by the stage before
it, so provenance is linear after stage 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from affectfusion.dataio import Dataset, FeatureTrack, LabelTrack
from affectfusion.metrics import ATTRIBUTES, AttributeTriple, ccc
from affectfusion.svr import Standardizer, SvrConfig, SvrModel, fit_svr, predict_svr


def early_fuse(a: FeatureTrack, b: FeatureTrack) -> FeatureTrack:
    """Concatenate two feature tracks frame-wise (a's columns first)."""
    if a.subject_id != b.subject_id:
        raise ValueError(f"subject mismatch: {a.subject_id!r} vs {b.subject_id!r}")
    if a.frames.shape[0] != b.frames.shape[0] or not np.array_equal(a.mask, b.mask):
        raise ValueError(f"frame/mask mismatch for subject {a.subject_id!r}")
    return FeatureTrack(
        feature_set_name=f"{a.feature_set_name}+{b.feature_set_name}",
        subject_id=a.subject_id,
        frames=np.concatenate([a.frames, b.frames], axis=1),
        mask=a.mask.copy(),
    )


def early_fuse_sets(
    a: dict[str, FeatureTrack], b: dict[str, FeatureTrack]
) -> dict[str, FeatureTrack]:
    if set(a) != set(b):
        raise ValueError("feature sets cover different subjects")
    return {s: early_fuse(a[s], b[s]) for s in a}


@dataclass
class PredictionTrack:
    """Per-frame attribute predictions for every subject of a corpus."""

    source_id: str
    frames: dict[str, np.ndarray]  # subject -> (T, 3), padded rows zero
    masks: dict[str, np.ndarray]  # subject -> (T,)

    def valid_frames(self, subject: str) -> np.ndarray:
        n = int(self.masks[subject].sum())
        return self.frames[subject][:n]


def prediction_track_from_label_tracks(
    source_id: str, tracks: dict[str, LabelTrack], dataset: Dataset
) -> PredictionTrack:
    """Adapt loaded prediction CSVs (label schema) to the dataset's padding."""
    missing = set(dataset.subjects) - set(tracks)
    if missing:
        raise ValueError(f"track {source_id!r} missing subjects {sorted(missing)}")
    frames = {}
    masks = {}
    for s in dataset.subjects:
        want = dataset.labels[s].valid_len
        got = tracks[s].valid_len
        if got != want:
            raise ValueError(
                f"track {source_id!r}: subject {s!r} has {got} frames, corpus has {want}"
            )
        padded = np.zeros((dataset.max_len, 3))
        padded[:want] = tracks[s].frames[:want]
        frames[s] = padded
        masks[s] = dataset.labels[s].mask.copy()
    return PredictionTrack(source_id, frames, masks)


def prediction_track_to_label_tracks(track: PredictionTrack) -> dict[str, LabelTrack]:
    """Prediction tracks serialize with the label CSV schema."""
    return {
        s: LabelTrack(subject_id=s, frames=track.frames[s], mask=track.masks[s])
        for s in track.frames
    }


@dataclass
class FusionStageResult:
    stage_index: int
    models: dict[str, SvrModel]  # one SVR per attribute
    scaler: Standardizer
    fused: PredictionTrack
    eval_ccc: AttributeTriple  # on the evaluation split, frames pooled
    eval_ccc_seq_mean: AttributeTriple
    provenance: tuple[str, ...]  # source ids this stage consumed


def track_ccc(
    frames: dict[str, np.ndarray],
    dataset: Dataset,
    subjects,
) -> tuple[AttributeTriple, AttributeTriple]:
    """Pooled and per-subject-mean CCC of a prediction track against labels."""
    pooled = []
    per_subject = np.zeros(3)
    pred_cat, label_cat = [], []
    for s in subjects:
        n = dataset.labels[s].valid_len
        pred_cat.append(frames[s][:n])
        label_cat.append(dataset.labels[s].frames[:n])
        for k in range(3):
            per_subject[k] += ccc(frames[s][:n, k], dataset.labels[s].frames[:n, k])
    pred = np.concatenate(pred_cat)
    label = np.concatenate(label_cat)
    pooled = AttributeTriple(*(ccc(pred[:, k], label[:, k]) for k in range(3)))
    return pooled, AttributeTriple(*(per_subject / len(list(subjects))))


def _validate_tracks(tracks: list[PredictionTrack], dataset: Dataset) -> None:
    if not tracks:
        raise ValueError("need at least one prediction track")
    for tr in tracks:
        missing = set(dataset.subjects) - set(tr.frames)
        if missing:
            raise ValueError(f"track {tr.source_id!r} missing subjects {sorted(missing)}")
        for s in dataset.subjects:
            if not np.array_equal(
                np.asarray(tr.masks[s]).astype(bool),
                np.asarray(dataset.labels[s].mask).astype(bool),
            ):
                raise ValueError(
                    f"track {tr.source_id!r}: mask mismatch for subject {s!r}"
                )


def _stack_rows(tracks, dataset, subjects):
    xs, ys = [], []
    for s in subjects:
        n = dataset.labels[s].valid_len
        xs.append(np.concatenate([tr.frames[s][:n] for tr in tracks], axis=1))
        ys.append(dataset.labels[s].frames[:n])
    return np.concatenate(xs), np.concatenate(ys)


def late_fuse(
    tracks: list[PredictionTrack],
    dataset: Dataset,
    fit_split: str = "train",
    eval_split: str = "dev",
    svr_config: SvrConfig | None = None,
    stage_index: int = 1,
) -> FusionStageResult:
    """Fit one SVR per attribute on the tracks' stacked per-frame triples.

    The regressor input for K tracks is the 3K-vector of all tracks'
    attribute predictions at that frame, standardized with fit-split
    statistics. Fitting on "dev" reproduces leaderboard-style numbers but
    leaks evaluation labels; callers must opt in explicitly.
    """
    _validate_tracks(tracks, dataset)
    cfg = svr_config or SvrConfig()
    fit_subjects = dataset.split(fit_split)
    eval_subjects = dataset.split(eval_split)

    x_fit, y_fit = _stack_rows(tracks, dataset, fit_subjects)
    scaler = Standardizer.fit(x_fit)
    xs_fit = scaler.transform(x_fit)
    models = {
        attr: fit_svr(xs_fit, y_fit[:, k], cfg) for k, attr in enumerate(ATTRIBUTES)
    }

    fused_frames = {}
    masks = {}
    for s in dataset.subjects:
        n = dataset.labels[s].valid_len
        x_s = scaler.transform(
            np.concatenate([tr.frames[s][:n] for tr in tracks], axis=1)
        )
        out = np.zeros((dataset.max_len, 3))
        for k, attr in enumerate(ATTRIBUTES):
            out[:n, k] = predict_svr(models[attr], x_s)
        fused_frames[s] = out
        masks[s] = dataset.labels[s].mask.copy()
    fused = PredictionTrack(f"fusion_stage{stage_index}", fused_frames, masks)

    pooled, seq_mean = track_ccc(fused_frames, dataset, eval_subjects)
    return FusionStageResult(
        stage_index=stage_index,
        models=models,
        scaler=scaler,
        fused=fused,
        eval_ccc=pooled,
        eval_ccc_seq_mean=seq_mean,
        provenance=tuple(tr.source_id for tr in tracks),
    )


def multistage_fuse(
    tracks: list[PredictionTrack],
    n_stages: int,
    dataset: Dataset,
    fit_split: str = "train",
    eval_split: str = "dev",
    svr_config: SvrConfig | None = None,
) -> list[FusionStageResult]:
    """Stage 1 fuses the given tracks; stage k>1 refuses stage k-1's output."""
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")
    results = [
        late_fuse(tracks, dataset, fit_split, eval_split, svr_config, stage_index=1)
    ]
    for k in range(2, n_stages + 1):
        results.append(
            late_fuse(
                [results[-1].fused], dataset, fit_split, eval_split, svr_config,
                stage_index=k,
            )
        )
    return results


def select_top_k(results: list[tuple[str, AttributeTriple]], k: int) -> list[str]:
    """Ids of the k best results by mean CCC; ties break lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(results, key=lambda item: (-item[1].mean(), item[0]))
    return [name for name, _ in ranked[:k]]
