"""Config-driven experiment runner: single runs, the multitask weight
search, and the four-step fusion pipeline, all emitting machine-readable
reports.

Output layout under an experiment's ``out_dir``:

* ``results.csv``: append-only report rows (re-runs add rows, never edit)
* ``experiments/<id>/``: checkpoint.npz, predictions_{train,dev}.csv,
  report.json (row, spec, per-epoch history)
* ``search/<id>/``: trials.csv and best.json for weight searches
* ``fusion/``: per-stage SVR dumps and fused prediction CSVs
* ``pipeline_summary.json``: stage series and best-per-method table
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from affectfusion import dataio
from affectfusion.dataio import Dataset, FeatureScaler
from affectfusion.fusion import (
    FusionStageResult,
    PredictionTrack,
    early_fuse_sets,
    multistage_fuse,
    prediction_track_to_label_tracks,
    select_top_k,
    track_ccc,
)
from affectfusion.metrics import ATTRIBUTES, DEFAULT_WEIGHTS, AttributeTriple, MtlWeights
from affectfusion.seqmodel import (
    ModelConfig,
    SeqData,
    TrainConfig,
    predict,
    save_checkpoint,
    train,
)
from affectfusion.svr import SvrConfig, save_svr

#: Desk-scale profile: small units and an aggressive learning rate so a
#: full pipeline stays in the minutes range on a laptop. The full-size
#: recipe (256/128/64 units, lr 5e-4, 50 epochs) remains the ModelConfig/
#: TrainConfig default for real corpora.
DESK_MODEL = {"lstm_units": (16, 8), "dropout_rate": 0.1}
DESK_TRAIN = {"learning_rate": 0.02, "batch_size": 4, "epochs": 30}

REPORT_COLUMNS = (
    "experiment_id",
    "kind",
    "feature_sets",
    "alpha",
    "beta",
    "gamma",
    "seed",
    "ccc_arousal",
    "ccc_valence",
    "ccc_liking",
    "ccc_average",
    "seqmean_arousal",
    "seqmean_valence",
    "seqmean_liking",
    "fit_split",
    "status",
    "wall_time_s",
)


def derive_seed(master_seed: int, name: str) -> int:
    """Stable per-experiment seed: adding experiments never perturbs others."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


@dataclass(frozen=True)
class ReportRow:
    experiment_id: str
    kind: str
    feature_sets: str
    alpha: float
    beta: float
    gamma: float
    seed: int
    ccc_arousal: float
    ccc_valence: float
    ccc_liking: float
    ccc_average: float
    seqmean_arousal: float
    seqmean_valence: float
    seqmean_liking: float
    fit_split: str = "train"
    status: str = "ok"
    wall_time_s: float = 0.0

    def __post_init__(self):
        if self.status == "ok":
            mean = (self.ccc_arousal + self.ccc_valence + self.ccc_liking) / 3.0
            if abs(mean - self.ccc_average) > 1e-12:
                raise ValueError("ccc_average must be the mean of the three CCCs")

    @classmethod
    def build(
        cls,
        experiment_id: str,
        kind: str,
        feature_sets: str,
        weights: MtlWeights,
        seed: int,
        pooled: AttributeTriple,
        seq_mean: AttributeTriple,
        fit_split: str = "train",
        wall_time_s: float = 0.0,
    ) -> "ReportRow":
        return cls(
            experiment_id=experiment_id,
            kind=kind,
            feature_sets=feature_sets,
            alpha=weights.alpha,
            beta=weights.beta,
            gamma=weights.gamma,
            seed=seed,
            ccc_arousal=pooled.arousal,
            ccc_valence=pooled.valence,
            ccc_liking=pooled.liking,
            ccc_average=pooled.mean(),
            seqmean_arousal=seq_mean.arousal,
            seqmean_valence=seq_mean.valence,
            seqmean_liking=seq_mean.liking,
            fit_split=fit_split,
            wall_time_s=wall_time_s,
        )

    def pooled(self) -> AttributeTriple:
        return AttributeTriple(self.ccc_arousal, self.ccc_valence, self.ccc_liking)

    def deterministic_fields(self) -> tuple:
        """Everything except wall-clock time, for reproducibility checks."""
        d = asdict(self)
        d.pop("wall_time_s")
        return tuple(d[c] for c in REPORT_COLUMNS if c != "wall_time_s")


def append_report_row(out_dir: Path, row: ReportRow) -> Path:
    path = Path(out_dir) / "results.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not path.exists()
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(REPORT_COLUMNS)
        d = asdict(row)
        writer.writerow([_csv_cell(d[c]) for c in REPORT_COLUMNS])
    return path


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def load_report_rows(out_dir) -> list[ReportRow]:
    path = Path(out_dir) / "results.csv"
    if not path.exists():
        return []
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                ReportRow(
                    experiment_id=rec["experiment_id"],
                    kind=rec["kind"],
                    feature_sets=rec["feature_sets"],
                    alpha=float(rec["alpha"]),
                    beta=float(rec["beta"]),
                    gamma=float(rec["gamma"]),
                    seed=int(rec["seed"]),
                    ccc_arousal=float(rec["ccc_arousal"]),
                    ccc_valence=float(rec["ccc_valence"]),
                    ccc_liking=float(rec["ccc_liking"]),
                    ccc_average=float(rec["ccc_average"]),
                    seqmean_arousal=float(rec["seqmean_arousal"]),
                    seqmean_valence=float(rec["seqmean_valence"]),
                    seqmean_liking=float(rec["seqmean_liking"]),
                    fit_split=rec["fit_split"],
                    status=rec["status"],
                    wall_time_s=float(rec["wall_time_s"]),
                )
            )
    return rows


@dataclass
class ExperimentSpec:
    """One network run: a manifest, one or two feature sets, and overrides."""

    manifest: str
    feature_sets: list[str]
    experiment_id: str | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    weights: MtlWeights | None = None
    label_shift: int = 1
    seed: int = 0
    out_dir: str = "runs"
    train_seed: int | None = None  # direct rng seed; bypasses derivation

    def __post_init__(self):
        if not 1 <= len(self.feature_sets) <= 2:
            raise ValueError("feature_sets must name one set or a bimodal pair")

    @property
    def resolved_id(self) -> str:
        if self.experiment_id:
            return self.experiment_id
        prefix = "uni" if len(self.feature_sets) == 1 else "bi"
        return f"{prefix}_" + "+".join(self.feature_sets)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        weights = raw.pop("weights", None)
        spec = cls(
            manifest=raw["manifest"],
            feature_sets=list(raw["feature_sets"]),
            experiment_id=raw.get("experiment_id"),
            model=dict(raw.get("model", {})),
            train=dict(raw.get("train", {})),
            label_shift=int(raw.get("label_shift", 1)),
            seed=int(raw.get("seed", 0)),
            out_dir=raw.get("out_dir", "runs"),
        )
        if weights is not None:
            spec.weights = MtlWeights(
                float(weights["alpha"]), float(weights["beta"]), float(weights["gamma"])
            )
        return spec

    def to_json_dict(self) -> dict:
        d = {
            "manifest": str(self.manifest),
            "feature_sets": list(self.feature_sets),
            "experiment_id": self.experiment_id,
            "model": self.model,
            "train": self.train,
            "label_shift": self.label_shift,
            "seed": self.seed,
            "out_dir": str(self.out_dir),
        }
        if self.weights is not None:
            d["weights"] = {
                "alpha": self.weights.alpha,
                "beta": self.weights.beta,
                "gamma": self.weights.gamma,
            }
        return d


@dataclass
class ExperimentResult:
    row: ReportRow
    track: PredictionTrack
    history: list
    checkpoint_path: Path | None = None


def _resolve_tracks(dataset: Dataset, feature_sets: list[str]):
    for name in feature_sets:
        if name not in dataset.feature_sets:
            raise ValueError(
                f"feature set {name!r} not in manifest "
                f"(available: {sorted(dataset.feature_sets)})"
            )
    if len(feature_sets) == 1:
        return dataset.feature_sets[feature_sets[0]]
    return early_fuse_sets(
        dataset.feature_sets[feature_sets[0]], dataset.feature_sets[feature_sets[1]]
    )


def _split_data(dataset, tracks, scaler, subjects, label_shift):
    xs, ys, ms = [], [], []
    for s in subjects:
        t = tracks[s]
        xs.append(scaler.transform(t.frames, t.mask))
        ys.append(dataio.shift_labels(dataset.labels[s], label_shift).frames)
        ms.append(t.mask)
    return SeqData(np.stack(xs), np.stack(ys), np.stack(ms))


def run_experiment(
    spec: ExperimentSpec, dataset: Dataset | None = None, kind: str | None = None
) -> ExperimentResult:
    """Train one network, persist checkpoint + fusion-ready prediction CSVs,
    and append a report row."""
    t0 = time.perf_counter()
    if dataset is None:
        dataset = dataio.load_corpus(spec.manifest)
    exp_id = spec.resolved_id
    tracks = _resolve_tracks(dataset, spec.feature_sets)
    scaler = FeatureScaler.fit(tracks, dataset.train_subjects)

    train_data = _split_data(dataset, tracks, scaler, dataset.train_subjects, spec.label_shift)
    dev_data = _split_data(dataset, tracks, scaler, dataset.dev_subjects, spec.label_shift)

    input_dim = tracks[dataset.subjects[0]].dim
    model_cfg = ModelConfig(input_dim=input_dim, **spec.model)
    weights = spec.weights or DEFAULT_WEIGHTS
    seed = spec.train_seed if spec.train_seed is not None else derive_seed(spec.seed, exp_id)
    train_cfg = TrainConfig(weights=weights, rng_seed=seed, **spec.train)

    params, history = train(train_data, dev_data, model_cfg, train_cfg)

    # predictions for every subject, shifted back onto the original timeline
    all_subjects = dataset.subjects
    x_all = np.stack([scaler.transform(tracks[s].frames, tracks[s].mask) for s in all_subjects])
    raw = predict(model_cfg, params, x_all)
    frames, masks = {}, {}
    for bidx, s in enumerate(all_subjects):
        n = tracks[s].valid_len
        out = np.zeros((dataset.max_len, 3))
        out[:n] = dataio.unshift_predictions(raw[bidx, :n], n, spec.label_shift)
        frames[s] = out
        masks[s] = tracks[s].mask.copy()
    track = PredictionTrack(exp_id, frames, masks)

    pooled, seq_mean = track_ccc(frames, dataset, dataset.dev_subjects)
    row = ReportRow.build(
        experiment_id=exp_id,
        kind=kind or ("unimodal" if len(spec.feature_sets) == 1 else "bimodal"),
        feature_sets="+".join(spec.feature_sets),
        weights=weights,
        seed=seed,
        pooled=pooled,
        seq_mean=seq_mean,
        wall_time_s=time.perf_counter() - t0,
    )

    out_dir = Path(spec.out_dir)
    exp_dir = out_dir / "experiments" / exp_id
    exp_dir.mkdir(parents=True, exist_ok=True)
    ckpt = exp_dir / "checkpoint.npz"
    save_checkpoint(
        ckpt,
        model_cfg,
        params,
        scaler=scaler,
        meta={"experiment_id": exp_id, "seed": seed, "feature_sets": spec.feature_sets},
    )
    label_tracks = prediction_track_to_label_tracks(track)
    dataio.write_label_csv(
        exp_dir / "predictions_train.csv",
        {s: label_tracks[s] for s in dataset.train_subjects},
    )
    dataio.write_label_csv(
        exp_dir / "predictions_dev.csv",
        {s: label_tracks[s] for s in dataset.dev_subjects},
    )
    # both splits in one file: the track format the fuse command consumes
    dataio.write_label_csv(exp_dir / "predictions_all.csv", label_tracks)
    with open(exp_dir / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "row": asdict(row),
                "spec": spec.to_json_dict(),
                "history": [
                    {
                        "epoch": h.epoch,
                        "train_loss": h.train_loss,
                        "dev_pooled": list(h.dev_pooled.as_array()),
                        "dev_seq_mean": list(h.dev_seq_mean.as_array()),
                    }
                    for h in history
                ],
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    append_report_row(out_dir, row)
    return ExperimentResult(row=row, track=track, history=history, checkpoint_path=ckpt)


# ---------------------------------------------------------------------------
# Multitask weight search
# ---------------------------------------------------------------------------


@dataclass
class SearchResult:
    best_weights: MtlWeights
    best_row: ReportRow
    trials: list[tuple[MtlWeights, ReportRow]]


def sample_weights(
    rng: np.random.Generator,
    weight_max: float = 1.0,
    pin_gamma: bool = False,
    comparator: bool = False,
) -> MtlWeights:
    if comparator:
        # uniform over the simplex corner alpha + beta <= 1, gamma pinned
        while True:
            alpha, beta = rng.uniform(0.0, 1.0, size=2)
            if alpha + beta <= 1.0:
                return MtlWeights.mtl1_comparator(float(alpha), float(beta))
    alpha, beta = rng.uniform(0.0, weight_max, size=2)
    gamma = 1.0 if pin_gamma else float(rng.uniform(0.0, weight_max))
    return MtlWeights(float(alpha), float(beta), gamma)


def search_weights(
    spec: ExperimentSpec,
    n_trials: int,
    seed: int | None = None,
    weight_max: float = 1.0,
    pin_gamma: bool = False,
    comparator: bool = False,
    dataset: Dataset | None = None,
) -> SearchResult:
    """Random search over the loss weights; every search also evaluates the
    shipped default (0.7, 0.2, 1.0) so the published optimum is never lost.

    All trials share the base experiment's derived seed, so they differ in
    weights only and scores are directly comparable.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if dataset is None:
        dataset = dataio.load_corpus(spec.manifest)
    master = spec.seed if seed is None else seed
    rng = np.random.default_rng(derive_seed(master, spec.resolved_id + ":search"))

    candidates = [DEFAULT_WEIGHTS]
    for _ in range(n_trials):
        candidates.append(
            sample_weights(rng, weight_max=weight_max, pin_gamma=pin_gamma, comparator=comparator)
        )

    base_id = spec.resolved_id
    shared_seed = derive_seed(master, base_id)
    trials: list[tuple[MtlWeights, ReportRow]] = []
    for t, weights in enumerate(candidates):
        trial_spec = replace(
            spec,
            experiment_id=f"{base_id}_trial{t:02d}",
            weights=weights,
            seed=master,
            train_seed=shared_seed,  # trials differ in weights only
        )
        result = run_experiment(trial_spec, dataset=dataset, kind="search-trial")
        trials.append((weights, result.row))

    best_weights, best_row = max(trials, key=lambda wr: wr[1].ccc_average)

    search_dir = Path(spec.out_dir) / "search" / base_id
    search_dir.mkdir(parents=True, exist_ok=True)
    with open(search_dir / "trials.csv", "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["trial", "alpha", "beta", "gamma", "ccc_arousal", "ccc_valence",
             "ccc_liking", "ccc_average"]
        )
        for t, (w, row) in enumerate(trials):
            writer.writerow(
                [t, repr(w.alpha), repr(w.beta), repr(w.gamma), repr(row.ccc_arousal),
                 repr(row.ccc_valence), repr(row.ccc_liking), repr(row.ccc_average)]
            )
    with open(search_dir / "best.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "weights": {"alpha": best_weights.alpha, "beta": best_weights.beta,
                            "gamma": best_weights.gamma},
                "ccc_average": best_row.ccc_average,
                "n_trials": len(trials),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return SearchResult(best_weights=best_weights, best_row=best_row, trials=trials)


# ---------------------------------------------------------------------------
# Full pipeline: unimodal -> top 7 -> 21 bimodal pairs -> top 11 -> late
# fusion -> multistage repetition
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    out_dir: str = "pipeline"
    seed: int = 0
    stages: int = 5
    fit_on_dev: bool = False
    top_unimodal: int = 7
    top_fusion_inputs: int = 11
    weights: MtlWeights = DEFAULT_WEIGHTS
    model: dict = field(default_factory=lambda: dict(DESK_MODEL))
    train: dict = field(default_factory=lambda: dict(DESK_TRAIN))
    label_shift: int = 1
    svr: SvrConfig = field(default_factory=SvrConfig)


@dataclass
class PipelineResult:
    rows: list[ReportRow]
    selected_unimodal: list[str]
    selected_fusion_inputs: list[str]
    stages: list[FusionStageResult]
    failed: list[tuple[str, str]]
    summary_path: Path


def _failed_row(exp_id, kind, feature_sets, seed, message) -> ReportRow:
    nan = float("nan")
    return ReportRow(
        experiment_id=exp_id,
        kind=kind,
        feature_sets=feature_sets,
        alpha=nan, beta=nan, gamma=nan,
        seed=seed,
        ccc_arousal=nan, ccc_valence=nan, ccc_liking=nan, ccc_average=nan,
        seqmean_arousal=nan, seqmean_valence=nan, seqmean_liking=nan,
        status=f"failed: {message}",
    )


def run_pipeline(manifest, config: PipelineConfig) -> PipelineResult:
    """Reproduce the full procedure on one corpus and emit a stage series
    plus a best-per-method summary."""
    dataset = dataio.load_corpus(manifest)
    out_dir = Path(config.out_dir)
    rows: list[ReportRow] = []
    failed: list[tuple[str, str]] = []
    tracks_by_id: dict[str, PredictionTrack] = {}
    scores_by_id: dict[str, AttributeTriple] = {}

    def attempt(spec: ExperimentSpec, kind: str) -> None:
        exp_id = spec.resolved_id
        try:
            result = run_experiment(spec, dataset=dataset)
            rows.append(result.row)
            tracks_by_id[exp_id] = result.track
            scores_by_id[exp_id] = result.row.pooled()
        except Exception as exc:  # continue remaining experiments
            row = _failed_row(
                exp_id, kind, "+".join(spec.feature_sets),
                derive_seed(config.seed, exp_id), str(exc),
            )
            rows.append(row)
            append_report_row(out_dir, row)
            failed.append((exp_id, str(exc)))

    def base_spec(feature_sets: list[str]) -> ExperimentSpec:
        return ExperimentSpec(
            manifest=str(manifest),
            feature_sets=feature_sets,
            model=dict(config.model),
            train=dict(config.train),
            weights=config.weights,
            label_shift=config.label_shift,
            seed=config.seed,
            out_dir=str(out_dir),
        )

    # step 1: unimodal runs over every feature set
    feature_names = sorted(dataset.feature_sets)
    for name in feature_names:
        attempt(base_spec([name]), kind="unimodal")

    unimodal_scores = [
        (row.experiment_id, row.pooled())
        for row in rows
        if row.kind == "unimodal" and row.status == "ok"
    ]
    selected_unimodal = select_top_k(unimodal_scores, config.top_unimodal)

    # step 2: bimodal early fusion over all pairs of the selected sets
    selected_names = [i.removeprefix("uni_") for i in selected_unimodal]
    for a, b in itertools.combinations(sorted(selected_names), 2):
        attempt(base_spec([a, b]), kind="bimodal")

    # step 3: multimodal late fusion over the best unimodal + bimodal tracks
    union_scores = [(i, s) for i, s in scores_by_id.items()]
    selected_inputs = select_top_k(union_scores, config.top_fusion_inputs)
    fusion_tracks = [tracks_by_id[i] for i in selected_inputs]

    fit_split = "dev" if config.fit_on_dev else "train"
    stages = multistage_fuse(
        fusion_tracks,
        config.stages,
        dataset,
        fit_split=fit_split,
        eval_split="dev",
        svr_config=config.svr,
    )

    fusion_dir = out_dir / "fusion"
    fusion_dir.mkdir(parents=True, exist_ok=True)
    for st in stages:
        stage_id = f"fusion_stage{st.stage_index}"
        row = ReportRow.build(
            experiment_id=stage_id,
            kind="fusion-stage",
            feature_sets=";".join(st.provenance),
            weights=config.weights,
            seed=derive_seed(config.seed, stage_id),
            pooled=st.eval_ccc,
            seq_mean=st.eval_ccc_seq_mean,
            fit_split=fit_split,
        )
        rows.append(row)
        append_report_row(out_dir, row)
        for attr in ATTRIBUTES:
            save_svr(fusion_dir / f"{stage_id}_{attr}.npz", st.models[attr])
        label_tracks = prediction_track_to_label_tracks(st.fused)
        dataio.write_label_csv(
            fusion_dir / f"{stage_id}_predictions_train.csv",
            {s: label_tracks[s] for s in dataset.train_subjects},
        )
        dataio.write_label_csv(
            fusion_dir / f"{stage_id}_predictions_dev.csv",
            {s: label_tracks[s] for s in dataset.dev_subjects},
        )

    summary_path = _write_pipeline_summary(
        out_dir, rows, selected_unimodal, selected_inputs, stages, fit_split, failed
    )
    return PipelineResult(
        rows=rows,
        selected_unimodal=selected_unimodal,
        selected_fusion_inputs=selected_inputs,
        stages=stages,
        failed=failed,
        summary_path=summary_path,
    )


def _best_per_attribute(rows: list[ReportRow]) -> dict | None:
    ok = [r for r in rows if r.status == "ok"]
    if not ok:
        return None
    return {
        "arousal": max(r.ccc_arousal for r in ok),
        "valence": max(r.ccc_valence for r in ok),
        "liking": max(r.ccc_liking for r in ok),
    }


def _write_pipeline_summary(
    out_dir, rows, selected_unimodal, selected_inputs, stages, fit_split, failed
) -> Path:
    by_kind = {
        "unimodal": [r for r in rows if r.kind == "unimodal"],
        "bimodal": [r for r in rows if r.kind == "bimodal"],
    }
    stage_rows = [r for r in rows if r.kind == "fusion-stage"]
    stage_series = [
        {
            "stage": st.stage_index,
            "arousal": st.eval_ccc.arousal,
            "valence": st.eval_ccc.valence,
            "liking": st.eval_ccc.liking,
            "average": st.eval_ccc.mean(),
        }
        for st in stages
    ]
    methods = {
        "unimodal": _best_per_attribute(by_kind["unimodal"]),
        "bimodal_early_fusion": _best_per_attribute(by_kind["bimodal"]),
        "multimodal_late_fusion": _best_per_attribute(
            [r for r in stage_rows if r.experiment_id == "fusion_stage1"]
        ),
        "multistage_fusion": _best_per_attribute(
            [r for r in stage_rows if r.experiment_id != "fusion_stage1"]
        ),
    }
    summary = {
        "fit_split": fit_split,
        "selected_unimodal": selected_unimodal,
        "selected_fusion_inputs": selected_inputs,
        "stage_series": stage_series,
        "best_per_method": methods,
        "failed": [{"experiment_id": i, "error": e} for i, e in failed],
        "rows": [asdict(r) for r in rows],
    }
    path = Path(out_dir) / "pipeline_summary.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path
