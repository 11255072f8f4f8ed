"""Run orchestration: configs, hashing, Adam, training, evaluation."""

import json

import numpy as np
import pytest

from guidepth import (
    Adam,
    CompletionNet,
    ConfigurationError,
    DataConfig,
    DepthMap,
    EvaluationError,
    ExperimentConfig,
    HourglassConfig,
    MetricsReport,
    OptimizerConfig,
    OutputConfig,
    RunRecord,
    Tensor,
    UsageError,
    baseline_mean_fill,
    build_dataset,
    cmd_eval,
    cmd_gradcheck,
    cmd_train,
    evaluate_model,
    load_checkpoint,
    predict_scene,
    read_metrics_csv,
)


def tiny_experiment(root, **overrides):
    cfg = ExperimentConfig(
        network=HourglassConfig(
            base_channels=2,
            max_channels=4,
            num_units=1,
            repetitions=1,
            semantic_planes=3,
            spn_kind="raspn",
            spn_iterations=1,
        ),
        data=DataConfig(
            train_scenes=2, eval_scenes=2, height=16, width=16, objects=1,
            pattern="uniform:24",
        ),
        optimizer=OptimizerConfig(epochs=2, batch_size=2),
        output=OutputConfig(root=str(root)),
        seed=3,
    )
    for path, value in overrides.items():
        section, name = path.split(".")
        setattr(getattr(cfg, section), name, value)
    return cfg


class TestConfig:
    def test_hash_is_stable(self, tmp_path):
        a = tiny_experiment(tmp_path)
        b = tiny_experiment(tmp_path)
        assert a.hash() == b.hash()
        assert len(a.hash()) == 12
        int(a.hash(), 16)

    def test_hash_separates_configs(self, tmp_path):
        a = tiny_experiment(tmp_path)
        b = tiny_experiment(tmp_path, **{"optimizer.step_size": 2e-3})
        c = tiny_experiment(tmp_path)
        c.seed = 4
        assert len({a.hash(), b.hash(), c.hash()}) == 3

    def test_dict_round_trip(self, tmp_path):
        a = tiny_experiment(tmp_path)
        b = ExperimentConfig.from_dict(a.to_dict())
        assert b.hash() == a.hash()

    def test_json_file_round_trip(self, tmp_path):
        a = tiny_experiment(tmp_path)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(a.to_dict()))
        assert ExperimentConfig.from_json_file(p).hash() == a.hash()

    def test_unknown_top_level_key(self, tmp_path):
        d = tiny_experiment(tmp_path).to_dict()
        d["trainer"] = {}
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict(d)

    def test_unknown_nested_key(self, tmp_path):
        d = tiny_experiment(tmp_path).to_dict()
        d["optimizer"]["momentum"] = 0.9
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict(d)
        d = tiny_experiment(tmp_path).to_dict()
        d["network"]["depth"] = 7
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict(d)

    def test_partial_sections_use_defaults(self):
        cfg = ExperimentConfig.from_dict({"seed": 9})
        assert cfg.seed == 9
        assert cfg.optimizer.beta1 == 0.9

    @pytest.mark.parametrize(
        "kw",
        [
            dict(beta1=1.0),
            dict(beta2=-0.1),
            dict(step_size=0.0),
            dict(halve_every=0),
            dict(batch_size=0),
            dict(max_steps=-1),
            dict(grad_clip=-0.5),
        ],
    )
    def test_optimizer_validation(self, kw):
        with pytest.raises(ConfigurationError):
            OptimizerConfig(**kw)

    def test_scene_dims_must_align(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(data=DataConfig(height=24, width=32))


class TestDataset:
    def test_deterministic(self, tmp_path):
        cfg = tiny_experiment(tmp_path)
        a = build_dataset(cfg, "train")
        b = build_dataset(cfg, "train")
        assert len(a) == 2
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.scene.rgb, t.scene.rgb)
            np.testing.assert_array_equal(s.sparse.depth, t.sparse.depth)

    def test_splits_disjoint_streams(self, tmp_path):
        cfg = tiny_experiment(tmp_path)
        train = build_dataset(cfg, "train")
        ev = build_dataset(cfg, "eval")
        assert not np.array_equal(train[0].scene.depth.depth, ev[0].scene.depth.depth)

    def test_seed_changes_scenes(self, tmp_path):
        a = build_dataset(tiny_experiment(tmp_path), "train")
        cfg = tiny_experiment(tmp_path)
        cfg.seed = 99
        b = build_dataset(cfg, "train")
        assert not np.array_equal(a[0].scene.depth.depth, b[0].scene.depth.depth)

    def test_sparse_counts_match_pattern(self, tmp_path):
        for s in build_dataset(tiny_experiment(tmp_path), "train"):
            assert s.sparse.valid_count() == 24


class TestAdam:
    def p(self, vals):
        return Tensor(np.asarray(vals, dtype=float).reshape(1, 1, 1, -1))

    def test_first_step_closed_form(self):
        p = self.p([2.0, -1.0])
        g = np.array([0.5, -0.25]).reshape(p.shape)
        p.grad = g.copy()
        opt = Adam([("w", p)], step_size=0.01)
        opt.step()
        mhat = g
        vhat = g * g
        want = np.array([2.0, -1.0]).reshape(p.shape) - 0.01 * mhat / (
            np.sqrt(vhat) + 1e-8
        )
        np.testing.assert_allclose(p.data, want, rtol=1e-12)

    def test_weight_decay_pulls_toward_zero(self):
        p = self.p([4.0])
        p.grad = np.zeros(p.shape)
        opt = Adam([("w", p)], step_size=0.1, weight_decay=0.5)
        opt.step()
        assert 0 < p.data[0, 0, 0, 0] < 4.0

    def test_clip_rescales_global_norm(self):
        pa, pb = self.p([0.0, 0.0]), self.p([0.0])
        ga = np.array([3.0, 0.0]).reshape(pa.shape)
        gb = np.array([4.0]).reshape(pb.shape)
        pa.grad, pb.grad = ga.copy(), gb.copy()
        opt = Adam([("a", pa), ("b", pb)], grad_clip=1.0)
        opt.step()
        # global norm is 5, so every gradient is scaled by 1/5 before the
        # moment updates
        np.testing.assert_allclose(opt.m["a"], 0.1 * ga / 5.0, rtol=1e-12)
        np.testing.assert_allclose(opt.v["b"], 0.001 * (gb / 5.0) ** 2, rtol=1e-12)

    def test_clip_leaves_small_gradients_alone(self):
        p = self.p([1.0])
        g = np.array([0.25]).reshape(p.shape)
        p.grad = g.copy()
        opt = Adam([("w", p)], grad_clip=10.0)
        opt.step()
        np.testing.assert_allclose(opt.m["w"], 0.1 * g, rtol=1e-12)

    def test_missing_grad_skipped(self):
        p = self.p([1.5])
        opt = Adam([("w", p)], step_size=0.1)
        opt.step()
        assert p.data[0, 0, 0, 0] == 1.5


class TestTraining:
    def test_losses_bit_reproducible(self, tmp_path):
        cfg = tiny_experiment(tmp_path / "runs")
        rec1, _ = cmd_train(cfg)
        rec2, _ = cmd_train(cfg)
        assert rec1.step_losses == rec2.step_losses
        assert len(rec1.step_losses) == 2  # 2 scenes / batch 2, 2 epochs
        assert rec1.config_hash == cfg.hash()

    def test_run_directory_contents(self, tmp_path):
        cfg = tiny_experiment(tmp_path / "runs")
        record, ckpt = cmd_train(cfg)
        run_dir = tmp_path / "runs" / cfg.hash()
        assert (run_dir / "config.json").exists()
        assert (run_dir / "record.json").exists()
        assert ckpt == str(run_dir / "checkpoint")
        assert (run_dir / "checkpoint.bin").exists()
        saved = json.loads((run_dir / "record.json").read_text())
        assert RunRecord.from_dict(saved).step_losses == record.step_losses

    def test_zero_epochs_leaves_init_weights(self, tmp_path):
        cfg = tiny_experiment(tmp_path / "runs", **{"optimizer.epochs": 0})
        record, ckpt = cmd_train(cfg)
        assert record.step_losses == [] and record.epoch_losses == []
        trained = CompletionNet(cfg.network, seed=cfg.seed)
        load_checkpoint(trained, ckpt)
        fresh = CompletionNet(cfg.network, seed=cfg.seed)
        for (name, a), (_, b) in zip(trained.parameters(), fresh.parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)

    def test_max_steps_caps_run(self, tmp_path):
        cfg = tiny_experiment(
            tmp_path / "runs", **{"optimizer.epochs": 50, "optimizer.max_steps": 3}
        )
        record, _ = cmd_train(cfg)
        assert len(record.step_losses) == 3

    def test_divergence_reported_with_step(self, tmp_path):
        # batch norm keeps moderate blowups finite, so the step size has
        # to overflow float64 in the un-normalized output head
        cfg = tiny_experiment(
            tmp_path / "runs",
            **{"optimizer.step_size": 1e200, "optimizer.epochs": 8},
        )
        with pytest.raises(EvaluationError, match=r"non-finite at step \d+"):
            with np.errstate(all="ignore"):
                cmd_train(cfg)

    def test_record_round_trip_with_metrics(self, tmp_path):
        rec = RunRecord("abc", 1, [0.5], [0.7, 0.5], MetricsReport(*range(9)), 2.5)
        back = RunRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
        assert back.final_metrics == rec.final_metrics
        assert back.wall_time_s == 2.5


class TestEvaluation:
    def test_untrained_model_evaluates_finite(self, tmp_path):
        cfg = tiny_experiment(tmp_path)
        model = CompletionNet(cfg.network, seed=0)
        rows, agg = evaluate_model(model, cfg, "eval")
        assert len(rows) == 2
        assert all(np.isfinite(r.values()).all() for _, r in rows)
        np.testing.assert_allclose(
            agg.values(), np.mean([r.values() for _, r in rows], axis=0), rtol=1e-12
        )

    def test_prediction_clamped_to_floor(self, tmp_path):
        cfg = tiny_experiment(tmp_path)
        model = CompletionNet(cfg.network, seed=0)
        sample = build_dataset(cfg, "eval")[0]
        refined, coarse = predict_scene(
            model, sample.scene, sample.sparse, cfg.network.semantic_planes
        )
        assert refined.depth.min() >= 1e-3
        assert coarse.depth.min() >= 1e-3
        assert refined.valid.all()

    def test_cmd_eval_writes_csv(self, tmp_path):
        cfg = tiny_experiment(tmp_path / "runs")
        _, ckpt = cmd_train(cfg)
        rows, agg, csv_path = cmd_eval(ckpt, cfg)
        back = read_metrics_csv(csv_path)
        assert [r[0] for r in back] == ["scene0", "scene1", "aggregate"]
        np.testing.assert_allclose(back[-1][1].values(), agg.values(), rtol=1e-8)

    def test_mean_fill_baseline(self):
        sparse = DepthMap(
            np.array([[2.0, 0.0], [0.0, 6.0]]),
            np.array([[True, False], [False, True]]),
        )
        base = baseline_mean_fill(sparse)
        assert (base.depth == 4.0).all()
        empty = DepthMap(np.zeros((2, 2)), np.zeros((2, 2), dtype=bool))
        with pytest.raises(EvaluationError):
            baseline_mean_fill(empty)


class TestGradcheckCommand:
    def test_unknown_scope(self):
        with pytest.raises(UsageError, match="primitives, modules, full"):
            cmd_gradcheck("everything")
