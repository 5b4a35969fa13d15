"""Command-line entry points for corpus generation, experiment runs, the
weight search, fusion, and the full pipeline."""

from __future__ import annotations

import json
from dataclasses import asdict, replace
from pathlib import Path

import click

from affectfusion import dataio, experiments
from affectfusion.dataio import (
    SynthSpec,
    complementary_synth_spec,
    pipeline_synth_spec,
    save_corpus,
    synth_corpus,
)
from affectfusion.experiments import (
    ExperimentSpec,
    PipelineConfig,
    load_report_rows,
    run_experiment,
    run_pipeline,
    search_weights,
)
from affectfusion.fusion import multistage_fuse, prediction_track_from_label_tracks
from affectfusion.metrics import ATTRIBUTES
from affectfusion.svr import SvrConfig

SYNTH_PROFILES = {
    "default": SynthSpec,
    "complementary": complementary_synth_spec,
    "pipeline12": pipeline_synth_spec,
}


@click.group()
def main():
    """Multitask dimensional-emotion regression and multistage SVR fusion."""


def _echo_row(row) -> None:
    click.echo(
        f"{row.experiment_id}: arousal={row.ccc_arousal:.4f} "
        f"valence={row.ccc_valence:.4f} liking={row.ccc_liking:.4f} "
        f"average={row.ccc_average:.4f} [{row.status}]"
    )


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Corpus directory.")
@click.option("--seed", default=42, show_default=True, type=int)
@click.option(
    "--profile",
    default="default",
    show_default=True,
    type=click.Choice(sorted(SYNTH_PROFILES)),
    help="Which synthetic corpus family to generate.",
)
@click.option("--n-train", default=None, type=int, help="Training subjects override.")
@click.option("--n-dev", default=None, type=int, help="Development subjects override.")
@click.option("--seq-len", default=None, type=int, help="Corpus maximum length override.")
def synth(out_dir, seed, profile, n_train, n_dev, seq_len):
    """Generate a deterministic synthetic corpus and write its manifest."""
    spec = SYNTH_PROFILES[profile]()
    overrides = {}
    if n_train is not None:
        overrides["n_train"] = n_train
    if n_dev is not None:
        overrides["n_dev"] = n_dev
    if seq_len is not None:
        overrides["seq_len"] = seq_len
    if overrides:
        spec = replace(spec, **overrides)
    dataset = synth_corpus(seed, spec)
    manifest = save_corpus(dataset, out_dir)
    click.echo(f"wrote corpus with {len(dataset.subjects)} subjects to {manifest}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Experiment spec JSON.")
@click.option("--manifest", default=None, type=click.Path(exists=True),
              help="Override the manifest named in the spec.")
@click.option("--seed", default=None, type=int, help="Override the master seed.")
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Override the output directory.")
def run(spec_path, manifest, seed, out_dir):
    """Run one experiment: train, checkpoint, prediction CSVs, report row."""
    spec = ExperimentSpec.from_json(spec_path)
    if manifest is not None:
        spec.manifest = manifest
    if seed is not None:
        spec.seed = seed
    if out_dir is not None:
        spec.out_dir = out_dir
    result = run_experiment(spec)
    _echo_row(result.row)


@main.command("search-weights")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", default=None, type=click.Path(exists=True))
@click.option("--trials", default=20, show_default=True, type=int,
              help="Random trials beyond the always-included (0.7, 0.2, 1.0).")
@click.option("--seed", default=None, type=int)
@click.option("--weight-max", default=1.0, show_default=True, type=float,
              help="Upper bound of the uniform sampling range.")
@click.option("--pin-gamma", is_flag=True, help="Fix gamma at 1.0; sample alpha, beta.")
@click.option("--comparator", is_flag=True,
              help="Constrained mode: gamma = 1 - (alpha + beta), all in [0, 1].")
@click.option("--out", "out_dir", default=None, type=click.Path())
def search_weights_cmd(spec_path, manifest, trials, seed, weight_max, pin_gamma,
                       comparator, out_dir):
    """Random search over the multitask loss weights."""
    spec = ExperimentSpec.from_json(spec_path)
    if manifest is not None:
        spec.manifest = manifest
    if out_dir is not None:
        spec.out_dir = out_dir
    result = search_weights(
        spec,
        n_trials=trials,
        seed=seed,
        weight_max=weight_max,
        pin_gamma=pin_gamma,
        comparator=comparator,
    )
    w = result.best_weights
    click.echo(
        f"best weights: alpha={w.alpha:.4f} beta={w.beta:.4f} gamma={w.gamma:.4f} "
        f"(dev average CCC {result.best_row.ccc_average:.4f}, "
        f"{len(result.trials)} trials)"
    )


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--tracks", "track_paths", required=True, multiple=True,
              type=click.Path(exists=True),
              help="Prediction CSVs (label schema); repeat per track.")
@click.option("--stages", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--fit-on-dev", is_flag=True,
              help="Fit fusion SVRs on dev predictions (leaks evaluation labels).")
@click.option("--svr-c", default=1.0, show_default=True, type=float)
@click.option("--svr-epsilon", default=0.01, show_default=True, type=float)
@click.option("--svr-kernel", default="rbf", show_default=True,
              type=click.Choice(["rbf", "linear"]))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def fuse(manifest, track_paths, stages, fit_on_dev, svr_c, svr_epsilon, svr_kernel,
         seed, out_dir):
    """Late-fuse prediction tracks with per-attribute SVRs, optionally multistage."""
    if stages > 5:
        click.echo("warning: more than 5 stages departs from the reference procedure",
                   err=True)
    dataset = dataio.load_corpus(manifest)
    tracks = []
    for path in track_paths:
        label_tracks = dataio.load_label_csv(path)
        tracks.append(
            prediction_track_from_label_tracks(Path(path).stem, label_tracks, dataset)
        )
    fit_split = "dev" if fit_on_dev else "train"
    if fit_on_dev:
        click.echo(
            "WARNING: --fit-on-dev fits the fusion regressors on the evaluation "
            "split; reported scores are leaked and not comparable to held-out "
            "results.",
            err=True,
        )
    cfg = SvrConfig(c=svr_c, epsilon=svr_epsilon, kernel=svr_kernel, seed=seed)
    results = multistage_fuse(tracks, stages, dataset, fit_split=fit_split,
                              svr_config=cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from affectfusion.fusion import prediction_track_to_label_tracks
    from affectfusion.svr import save_svr

    for st in results:
        stage_id = f"fusion_stage{st.stage_index}"
        click.echo(
            f"stage {st.stage_index}: "
            + " ".join(
                f"{attr}={getattr(st.eval_ccc, attr):.4f}" for attr in ATTRIBUTES
            )
            + f" average={st.eval_ccc.mean():.4f}"
        )
        for attr in ATTRIBUTES:
            save_svr(out / f"{stage_id}_{attr}.npz", st.models[attr])
        label_tracks = prediction_track_to_label_tracks(st.fused)
        dataio.write_label_csv(
            out / f"{stage_id}_predictions_train.csv",
            {s: label_tracks[s] for s in dataset.train_subjects},
        )
        dataio.write_label_csv(
            out / f"{stage_id}_predictions_dev.csv",
            {s: label_tracks[s] for s in dataset.dev_subjects},
        )


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--stages", default=5, show_default=True, type=click.IntRange(min=1))
@click.option("--fit-on-dev", is_flag=True)
@click.option("--epochs", default=None, type=int, help="Training epochs per run.")
@click.option("--units", default=None, type=str,
              help='LSTM units, comma separated (e.g. "16,8").')
@click.option("--dropout", default=None, type=float)
@click.option("--lr", default=None, type=float)
@click.option("--batch-size", default=None, type=int)
def pipeline(manifest, out_dir, seed, stages, fit_on_dev, epochs, units, dropout,
             lr, batch_size):
    """Unimodal runs, top-7 selection, 21 bimodal pairs, top-11 late fusion,
    and multistage repetition."""
    if stages > 5:
        click.echo("warning: more than 5 stages departs from the reference procedure",
                   err=True)
    if fit_on_dev:
        click.echo(
            "WARNING: --fit-on-dev leaks evaluation labels into the fusion fit.",
            err=True,
        )
    config = PipelineConfig(out_dir=out_dir, seed=seed, stages=stages,
                            fit_on_dev=fit_on_dev)
    if epochs is not None:
        config.train["epochs"] = epochs
    if units is not None:
        config.model["lstm_units"] = tuple(int(u) for u in units.split(","))
    if dropout is not None:
        config.model["dropout_rate"] = dropout
    if lr is not None:
        config.train["learning_rate"] = lr
    if batch_size is not None:
        config.train["batch_size"] = batch_size
    result = run_pipeline(manifest, config)
    for row in result.rows:
        _echo_row(row)
    if result.failed:
        click.echo(f"{len(result.failed)} experiment(s) failed; see summary", err=True)
    click.echo(f"summary written to {result.summary_path}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(exists=True),
              help="Directory holding results.csv / pipeline_summary.json.")
def report(out_dir):
    """Pretty-print the report rows and any pipeline summary."""
    rows = load_report_rows(out_dir)
    if not rows:
        click.echo("no report rows found")
    else:
        header = f"{'experiment':<28} {'kind':<14} {'aro':>7} {'val':>7} {'lik':>7} {'avg':>7}  status"
        click.echo(header)
        click.echo("-" * len(header))
        for row in rows:
            click.echo(
                f"{row.experiment_id:<28} {row.kind:<14} "
                f"{row.ccc_arousal:>7.4f} {row.ccc_valence:>7.4f} "
                f"{row.ccc_liking:>7.4f} {row.ccc_average:>7.4f}  {row.status}"
            )
    summary_path = Path(out_dir) / "pipeline_summary.json"
    if summary_path.exists():
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        click.echo("\nstage series (dev CCC):")
        for entry in summary["stage_series"]:
            click.echo(
                f"  stage {entry['stage']}: arousal={entry['arousal']:.4f} "
                f"valence={entry['valence']:.4f} liking={entry['liking']:.4f} "
                f"average={entry['average']:.4f}"
            )
        click.echo("\nbest per method:")
        for method, vals in summary["best_per_method"].items():
            if vals is None:
                continue
            click.echo(
                f"  {method}: arousal={vals['arousal']:.4f} "
                f"valence={vals['valence']:.4f} liking={vals['liking']:.4f}"
            )


if __name__ == "__main__":
    main()
