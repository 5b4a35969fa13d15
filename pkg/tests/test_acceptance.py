"""Acceptance gate: every criterion at its stated tolerance, one line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the PASS lines.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from affectfusion import dataio, metrics
from affectfusion.dataio import (
    SynthSpec,
    complementary_synth_spec,
    load_corpus,
    pipeline_synth_spec,
    save_corpus,
    shift_labels,
    synth_corpus,
    unshift_predictions,
)
from affectfusion.experiments import (
    DESK_MODEL,
    DESK_TRAIN,
    ExperimentSpec,
    PipelineConfig,
    run_experiment,
    run_pipeline,
    search_weights,
)
from affectfusion.fusion import PredictionTrack, multistage_fuse, track_ccc
from affectfusion.metrics import MtlWeights, ccc
from affectfusion.seqmodel import (
    ModelConfig,
    init_params,
    loss_and_gradients,
    train,
)
from affectfusion.svr import SvrConfig, _gram, _smo, dual_objective, fit_svr, predict_svr

from test_metrics import oracle_ccc
from test_seqmodel_gradients import fd_gradient, max_relative_error, random_problem
from test_svr import kkt_violations, solve_qp_projected_gradient


def _report(n, text):
    print(f"\nACCEPTANCE {n}: PASS - {text}")


class TestCriterion1CccOracle:
    def test_ccc_oracle_suite(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(20240901)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 51))
            x = rng.normal(scale=rng.uniform(0.1, 5.0), size=n)
            y = rng.normal(loc=rng.uniform(-3, 3), scale=rng.uniform(0.1, 5.0), size=n)
            got = ccc(x, y)
            want = oracle_ccc(list(x), list(y))
            err = abs(got - want) / max(abs(want), 1e-12)
            worst = max(worst, err)
            assert err < 1e-12
        assert abs(ccc([1, 2, 3], [1, 2, 3]) - 1.0) < 1e-12
        assert abs(ccc([1, 2, 3], [5, 5, 5]) - 0.0) < 1e-12
        assert abs(ccc([1, 2, 3], [2, 4, 6]) - 4.0 / 11.0) < 1e-12
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        _report(1, f"1000-pair oracle suite, worst rel err {worst:.2e}, {elapsed:.2f}s")


class TestCriterion2GradientCheck:
    def test_gradient_check_small_models(self):
        t0 = time.perf_counter()
        worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            units = tuple(int(u) for u in rng.integers(2, 9, size=rng.integers(1, 3)))
            cfg = ModelConfig(
                input_dim=int(rng.integers(1, 5)), lstm_units=units, dropout_rate=0.0
            )
            params = init_params(cfg, rng)
            B, T = int(rng.integers(1, 4)), int(rng.integers(3, 7))
            x, labels, mask = random_problem(rng, cfg, B, T)
            weights = MtlWeights(*rng.uniform(0.1, 1.5, size=3))
            _, _, grads = loss_and_gradients(cfg, params, x, labels, mask, weights)
            fd = fd_gradient(cfg, params, x, labels, mask, weights)
            err = max_relative_error(grads.to_flat(), fd)
            worst = max(worst, err)
            assert err < 1e-4
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0
        _report(2, f"5 random models, worst gradient rel err {worst:.2e}, {elapsed:.1f}s")


class TestCriterion3StlStructure:
    def test_unweighted_heads_frozen(self):
        rng = np.random.default_rng(7)
        from affectfusion.seqmodel import SeqData, TrainConfig

        tr = SeqData(
            rng.normal(size=(6, 14, 4)),
            rng.normal(size=(6, 14, 3)),
            np.ones((6, 14), dtype=int),
        )
        dv = SeqData(
            rng.normal(size=(3, 14, 4)),
            rng.normal(size=(3, 14, 3)),
            np.ones((3, 14), dtype=int),
        )
        cfg = ModelConfig(input_dim=4, lstm_units=(6, 4), dropout_rate=0.2)
        tcfg = TrainConfig(
            epochs=8, batch_size=2, learning_rate=0.02,
            weights=MtlWeights(1.0, 0.0, 0.0), rng_seed=77,
        )
        params, _ = train(tr, dv, cfg, tcfg)
        init = init_params(cfg, np.random.default_rng(77))
        assert np.array_equal(params.head_w[:, 1:], init.head_w[:, 1:])
        assert np.array_equal(params.head_b[1:], init.head_b[1:])
        assert not np.array_equal(params.head_w[:, 0], init.head_w[:, 0])
        _report(3, "weights (1,0,0) left valence/liking heads exactly at init over 8 epochs")


class TestCriterion4SvrOracle:
    def test_smo_against_qp_oracle(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(31415)
        worst_gap = 0.0
        n_instances = 50
        for _ in range(n_instances):
            n = int(rng.integers(2, 9))
            d = int(rng.integers(1, 4))
            x = rng.normal(size=(n, d))
            y = rng.normal(size=n)
            cfg = SvrConfig(
                c=float(rng.uniform(0.5, 10.0)),
                epsilon=float(rng.uniform(0.0, 0.3)),
                kernel="linear" if rng.integers(2) == 0 else "rbf",
                tol=1e-4,
                max_passes=5000,
            )
            model = fit_svr(x, y, cfg)
            K = _gram(x, x, model.config.kernel, model.config.gamma)
            beta, _, _, _ = _smo(K, y, model.config)
            assert np.all(np.abs(beta) <= cfg.c + 1e-12)  # box KKT
            obj_smo = dual_objective(K, y, cfg.epsilon, beta)
            obj_oracle = solve_qp_projected_gradient(K, y, cfg.c, cfg.epsilon)
            gap = abs(obj_smo - obj_oracle)
            worst_gap = max(worst_gap, gap)
            assert gap < 1e-4
            assert kkt_violations(model, x, y, tol=1e-3) == 0
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0
        _report(
            4,
            f"{n_instances} instances, worst dual-objective gap {worst_gap:.2e}, "
            f"KKT clean at tol 1e-3, {elapsed:.1f}s",
        )


class TestCriterion5MtlBalancing:
    def test_searched_mtl_beats_every_stl(self, tmp_path):
        manifest = save_corpus(synth_corpus(42), tmp_path / "corpus")

        def spec(exp_id, weights):
            return ExperimentSpec(
                manifest=str(manifest),
                feature_sets=["audio_a"],
                experiment_id=exp_id,
                model=dict(DESK_MODEL),
                train=dict(DESK_TRAIN),
                weights=weights,
                seed=42,
                out_dir=str(tmp_path / "runs"),
            )

        dataset = load_corpus(manifest)
        search = search_weights(
            spec("mtl_search", None), n_trials=4, seed=42, dataset=dataset
        )
        mtl_avg = search.best_row.ccc_average

        stl_avgs = {}
        for name, w in {
            "stl_arousal": MtlWeights(1, 0, 0),
            "stl_valence": MtlWeights(0, 1, 0),
            "stl_liking": MtlWeights(0, 0, 1),
        }.items():
            row = run_experiment(spec(name, w), dataset=dataset).row
            stl_avgs[name] = row.ccc_average
        for name, avg in stl_avgs.items():
            assert mtl_avg >= avg, (name, avg, mtl_avg)
        _report(
            5,
            f"searched MTL avg {mtl_avg:.3f} >= every STL avg "
            f"({', '.join(f'{k}={v:.3f}' for k, v in stl_avgs.items())})",
        )


class TestCriterion6MultistageTrend:
    def test_fusion_trend_on_complementary_corpus(self, tmp_path):
        manifest = save_corpus(
            synth_corpus(42, complementary_synth_spec()), tmp_path / "corpus"
        )
        dataset = load_corpus(manifest)
        tracks = []
        best_single = -np.inf
        for name in sorted(dataset.feature_sets):
            result = run_experiment(
                ExperimentSpec(
                    manifest=str(manifest),
                    feature_sets=[name],
                    model=dict(DESK_MODEL),
                    train=dict(DESK_TRAIN),
                    seed=42,
                    out_dir=str(tmp_path / "runs"),
                ),
                dataset=dataset,
            )
            tracks.append(result.track)
            best_single = max(best_single, result.row.ccc_average)

        stages = multistage_fuse(tracks, 5, dataset)
        stage1 = stages[0].eval_ccc.mean()
        stage5 = stages[4].eval_ccc.mean()
        assert stage1 >= best_single - 0.02
        assert stage5 >= stage1 - 0.02
        _report(
            6,
            f"stage1 avg {stage1:.3f} >= best single {best_single:.3f} - 0.02; "
            f"stage5 avg {stage5:.3f} >= stage1 - 0.02",
        )

    def test_full_pipeline_under_ten_minutes(self, tmp_path):
        t0 = time.perf_counter()
        manifest = save_corpus(
            synth_corpus(42, pipeline_synth_spec()), tmp_path / "corpus"
        )
        result = run_pipeline(
            manifest,
            PipelineConfig(out_dir=str(tmp_path / "pout"), seed=42, stages=5),
        )
        elapsed = time.perf_counter() - t0
        kinds = [r.kind for r in result.rows]
        assert kinds.count("unimodal") == 12
        assert kinds.count("bimodal") == 21
        assert kinds.count("fusion-stage") == 5
        assert not result.failed
        assert elapsed < 600.0
        _report(
            6,
            f"full pipeline 12 sets -> 21 pairs -> 5 stages in {elapsed:.0f}s (< 600s)",
        )


class TestCriterion7Determinism:
    def test_rerun_reproduces_report_row(self, tmp_path):
        manifest = save_corpus(
            synth_corpus(11, SynthSpec(n_train=5, n_dev=3, seq_len=20)),
            tmp_path / "corpus",
        )

        def one(out):
            return run_experiment(
                ExperimentSpec(
                    manifest=str(manifest),
                    feature_sets=["audio_a", "video_b"],
                    model={"lstm_units": (8, 4), "dropout_rate": 0.2},
                    train={"learning_rate": 0.02, "batch_size": 3, "epochs": 6},
                    seed=1234,
                    out_dir=str(out),
                )
            )

        r1 = one(tmp_path / "a")
        r2 = one(tmp_path / "b")
        assert r1.row.deterministic_fields() == r2.row.deterministic_fields()
        for s in r1.track.frames:
            assert np.array_equal(r1.track.frames[s], r2.track.frames[s])
        _report(7, "re-run with the same seed reproduced the report row bit-exactly")


class TestCriterion8RoundTrips:
    def test_corpus_round_trip_byte_identical(self, tmp_path):
        ds = synth_corpus(9, SynthSpec(n_train=4, n_dev=2, seq_len=18))
        d1, d2 = tmp_path / "one", tmp_path / "two"
        m1 = save_corpus(ds, d1)
        save_corpus(load_corpus(m1), d2)
        for f1 in sorted(d1.iterdir()):
            assert f1.read_bytes() == (d2 / f1.name).read_bytes(), f1.name

    def test_shift_unshift_identity_on_overlap(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(3, 40))
            k = int(rng.integers(1, min(4, n)))
            frames = rng.normal(size=(n, 3))
            track = dataio.LabelTrack("s", frames, np.ones(n, dtype=np.uint8))
            shifted = shift_labels(track, k)
            back = unshift_predictions(shifted.frames, n, k)
            assert np.array_equal(back[k:], frames[k:])

    def test_padding_leaves_loss_bit_unchanged(self):
        rng = np.random.default_rng(1)
        cfg = ModelConfig(input_dim=3, lstm_units=(5, 3), dropout_rate=0.0)
        params = init_params(cfg, rng)
        B, T = 3, 8
        x = rng.normal(size=(B, T, 3))
        labels = rng.normal(size=(B, T, 3))
        mask = np.ones((B, T), dtype=int)
        mask[2, 6:] = 0
        x[2, 6:] = 0.0
        w = MtlWeights(0.7, 0.2, 1.0)
        loss_a, _, grads_a = loss_and_gradients(cfg, params, x, labels, mask, w)
        extra = 5
        xp = np.concatenate([x, np.zeros((B, extra, 3))], axis=1)
        lp = np.concatenate([labels, np.zeros((B, extra, 3))], axis=1)
        mp = np.concatenate([mask, np.zeros((B, extra), dtype=int)], axis=1)
        loss_b, _, grads_b = loss_and_gradients(cfg, params, xp, lp, mp, w)
        assert loss_a == loss_b
        assert np.array_equal(grads_a.to_flat(), grads_b.to_flat())
        _report(
            8,
            "corpus round trip byte-identical; shift/unshift identity on overlap; "
            "appended padding left loss and gradients bit-unchanged",
        )
