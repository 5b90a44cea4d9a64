import numpy as np
import pytest
import torch

from eegssl.corpus import (
    TaskDataset,
    make_split,
    synthetic_band_corpus,
    synthetic_classification_task,
)
from eegssl.errors import DataError, DivergenceError, ParameterError, ShapeError, SplitError
from eegssl.network import ModelConfig, build_model, checkpoint_from_model
from eegssl.training import (
    BandPowerCache,
    FoldResult,
    TrainConfig,
    apply_freeze_policy,
    evaluate,
    finetune,
    make_finetune_model,
    pretrain,
    sweep,
    write_results_csv,
)

from helpers import TINY_CONFIG

N_CH, N_T = TINY_CONFIG.n_channels, TINY_CONFIG.n_timesteps


def tiny_corpus(n=64, seed=0):
    return synthetic_band_corpus(n, n_channels=N_CH, n_timesteps=N_T, seed=seed)


def tiny_task(n_subjects=9, trials_per_class=2, seed=0):
    return synthetic_classification_task(
        n_subjects=n_subjects, trials_per_class=trials_per_class,
        n_channels=N_CH, n_timesteps=N_T, seed=seed,
    )


def probe_cfg(**kw):
    base = dict(
        mode="finetune", freeze_policy="linear_probe", epochs=60, patience=20,
        seed=0, lr_grid=(1e-2, 1e-3),
    )
    base.update(kw)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_batch_defaults_by_mode(self):
        assert TrainConfig(mode="pretrain").batch_size == 32
        assert TrainConfig(mode="finetune").batch_size == 64

    def test_objective_lambda(self):
        assert TrainConfig(objective="knowledge").lam == 5.0
        assert TrainConfig(objective="vanilla").lam == 0.0

    @pytest.mark.parametrize(
        "kw",
        [
            {"mode": "warmup"},
            {"objective": "contrastive"},
            {"freeze_policy": "everything"},
            {"pretrain_fraction": 0.0},
            {"finetune_fraction": 1.5},
            {"iterations": 0},
            {"batch_size": 0},
            {"n_fc": 3},
        ],
    )
    def test_invalid_fields(self, kw):
        with pytest.raises(ParameterError):
            TrainConfig(**kw)


class TestPretrain:
    def test_knowledge_loss_halves_in_200_iterations(self):
        model_cfg = ModelConfig(
            n_channels=8, n_timesteps=2048,
            encoder=((8, 7, 2), (8, 5, 2), (16, 5, 2), (16, 3, 2), (16, 3, 2), (16, 3, 2)),
            d_model=16, n_s4_layers=2, d_state=8, dropout=0.1,
        )
        chunks = synthetic_band_corpus(64, n_channels=8, n_timesteps=2048, seed=0)
        cfg = TrainConfig(mode="pretrain", iterations=200, batch_size=8, seed=1)
        result = pretrain(chunks, cfg, model_cfg)
        assert len(result.history) == 200
        assert result.history[-1].knowledge_loss <= 0.5 * result.history[0].knowledge_loss

    def test_bitwise_determinism(self):
        cfg = TrainConfig(mode="pretrain", iterations=12, batch_size=4, seed=7)
        chunks = tiny_corpus(16)
        a = pretrain(chunks, cfg, TINY_CONFIG)
        b = pretrain(chunks, cfg, TINY_CONFIG)
        assert [r.combined for r in a.history] == [r.combined for r in b.history]
        for k in a.model.state_dict():
            assert torch.equal(a.model.state_dict()[k], b.model.state_dict()[k])

    def test_vanilla_reports_knowledge_but_never_updates_projector(self):
        cfg = TrainConfig(mode="pretrain", objective="vanilla", iterations=10, batch_size=4, seed=3)
        result = pretrain(tiny_corpus(8), cfg, TINY_CONFIG)
        assert all(r.knowledge_loss > 0 for r in result.history)
        untouched = build_model(TINY_CONFIG, seed=cfg.seed)
        for (name, p), (_, q) in zip(
            result.model.projector.named_parameters(), untouched.projector.named_parameters()
        ):
            assert torch.equal(p, q), name

    def test_pretrain_fraction_subsets_corpus(self):
        chunks = tiny_corpus(20)
        cfg_full = TrainConfig(mode="pretrain", iterations=5, batch_size=4, seed=0)
        cfg_frac = TrainConfig(
            mode="pretrain", iterations=5, batch_size=4, seed=0, pretrain_fraction=0.25
        )
        a = pretrain(chunks, cfg_full, TINY_CONFIG)
        b = pretrain(chunks, cfg_frac, TINY_CONFIG)
        assert [r.combined for r in a.history] != [r.combined for r in b.history]

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            pretrain(np.zeros((0, N_CH, N_T), dtype=np.float32), TrainConfig(), TINY_CONFIG)

    def test_divergence_reports_iteration(self):
        cfg = TrainConfig(mode="pretrain", iterations=30, batch_size=4, seed=0, lr=1e12)
        with pytest.raises(DivergenceError) as err:
            pretrain(tiny_corpus(8), cfg, TINY_CONFIG)
        assert err.value.iteration >= 1

    def test_wrong_chunk_shape_rejected(self):
        with pytest.raises(ShapeError):
            pretrain(np.zeros((2, N_CH, N_T + 1), dtype=np.float32), TrainConfig(), TINY_CONFIG)

    def test_training_log_written(self, tmp_path):
        cfg = TrainConfig(mode="pretrain", iterations=4, batch_size=4, seed=0)
        pretrain(tiny_corpus(8), cfg, TINY_CONFIG, log_path=tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,cos_sim_loss,knowledge_loss,combined,wall_time_s"
        assert len(lines) == 5

    def test_checkpoint_interval(self, tmp_path):
        cfg = TrainConfig(mode="pretrain", iterations=6, batch_size=4, seed=0, checkpoint_interval=3)
        pretrain(tiny_corpus(8), cfg, TINY_CONFIG, checkpoint_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("*.pt"))
        assert names == ["checkpoint.pt", "checkpoint_0000003.pt", "checkpoint_0000006.pt"]

    def test_band_power_cache_reused(self, tmp_path):
        cache = BandPowerCache(tmp_path)
        chunk = tiny_corpus(1)[0]
        first = cache.get(chunk)
        assert len(list(tmp_path.glob("*.npy"))) == 1
        second = cache.get(chunk)
        np.testing.assert_array_equal(first, second)
        cfg = TrainConfig(mode="pretrain", iterations=4, batch_size=4, seed=5)
        with_cache = pretrain(tiny_corpus(8), cfg, TINY_CONFIG, cache=BandPowerCache(tmp_path / "c"))
        without = pretrain(tiny_corpus(8), cfg, TINY_CONFIG)
        assert [r.combined for r in with_cache.history] == [r.combined for r in without.history]


class TestFreezePolicies:
    def make_classifier(self):
        return build_model(
            TINY_CONFIG, seed=0, with_decoder=False, with_projector=False, n_classes=2
        )

    def test_linear_probe_set(self):
        model = self.make_classifier()
        names = apply_freeze_policy(model, "linear_probe")
        assert names == sorted(f"head.{n}" for n, _ in model.head.named_parameters())

    def test_last_s4_set(self):
        model = self.make_classifier()
        names = apply_freeze_policy(model, "last_s4")
        last = TINY_CONFIG.n_s4_layers - 1
        expected = {f"head.{n}" for n, _ in model.head.named_parameters()} | {
            f"temporal.s4.layers.{last}.{n}"
            for n, _ in model.temporal.s4.layers[last].named_parameters()
        }
        assert set(names) == expected

    def test_all_s4_set(self):
        model = self.make_classifier()
        names = apply_freeze_policy(model, "all_s4")
        expected = {f"head.{n}" for n, _ in model.head.named_parameters()} | {
            f"temporal.{n}" for n, _ in model.temporal.named_parameters()
        }
        assert set(names) == expected

    def test_fully_trainable_set(self):
        model = self.make_classifier()
        names = apply_freeze_policy(model, "fully_trainable")
        assert set(names) == {n for n, _ in model.named_parameters()}

    def test_decoder_and_projector_always_frozen(self):
        model = build_model(TINY_CONFIG, seed=0, n_classes=2)
        apply_freeze_policy(model, "fully_trainable")
        assert all(not p.requires_grad for p in model.decoder.parameters())
        assert all(not p.requires_grad for p in model.projector.parameters())

    def test_unknown_policy(self):
        with pytest.raises(ParameterError):
            apply_freeze_policy(self.make_classifier(), "frozen_tundra")

    def test_headless_model_rejected(self):
        with pytest.raises(ParameterError):
            apply_freeze_policy(build_model(TINY_CONFIG, seed=0), "linear_probe")

    def test_frozen_params_bitwise_stable_under_optimization(self):
        model = self.make_classifier()
        trainable = set(apply_freeze_policy(model, "last_s4"))
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        opt = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=1e-2)
        x = torch.randn(4, N_CH, N_T)
        y = torch.randint(0, 2, (4,))
        for _ in range(10):
            logits = model.classify(model.embed(model.encode(x)))
            loss = torch.nn.functional.cross_entropy(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
        for name, p in model.named_parameters():
            if name in trainable:
                assert not torch.equal(p, before[name]), name
            else:
                assert torch.equal(p, before[name]), name


class TestFinetune:
    def make_checkpoint(self, seed=0):
        cfg = TrainConfig(mode="pretrain", iterations=30, batch_size=8, seed=seed)
        return pretrain(tiny_corpus(24, seed=seed), cfg, TINY_CONFIG).checkpoint

    def test_loso_yields_one_result_per_subject(self):
        ckpt = self.make_checkpoint()
        task = tiny_task(n_subjects=9, trials_per_class=2)
        split = make_split(sorted(set(task.subjects)), "loso")
        results = finetune(ckpt, task, split, probe_cfg(epochs=20, patience=5))
        assert len(results) == 9
        assert sorted(r.fold for r in results) == list(range(9))
        for r in results:
            assert isinstance(r, FoldResult)
            assert 0.0 <= r.accuracy <= 1.0
            assert r.lr in (1e-2, 1e-3)
            assert r.n_eval == 4
            assert r.confusion.sum() == r.n_eval

    def test_probe_requires_checkpoint(self):
        task = tiny_task(n_subjects=3)
        split = make_split(sorted(set(task.subjects)), "kfold", k=3)
        with pytest.raises(ParameterError):
            finetune(None, task, split, probe_cfg())

    def test_scratch_fully_trainable_runs(self):
        task = tiny_task(n_subjects=3, trials_per_class=2)
        split = make_split(sorted(set(task.subjects)), "kfold", k=3)
        cfg = probe_cfg(freeze_policy="fully_trainable", epochs=2, patience=2, lr_grid=(1e-3,))
        results = finetune(None, task, split, cfg, model_cfg=TINY_CONFIG)
        assert len(results) == 3

    def test_missing_class_in_fold_is_split_error(self):
        x = np.zeros((6, N_CH, N_T), dtype=np.float32)
        x += np.random.default_rng(0).normal(size=x.shape).astype(np.float32)
        # subject s1 only ever sees class 0, so evaluating s0 starves class 1
        dataset = TaskDataset(
            x=x, y=np.array([0, 1, 0, 0, 0, 0]),
            subjects=["s0", "s0", "s1", "s1", "s1", "s1"], class_names=["a", "b"],
        )
        split = make_split(["s0", "s1"], "loso")
        ckpt = self.make_checkpoint()
        with pytest.raises(SplitError):
            finetune(ckpt, dataset, split, probe_cfg(epochs=2))

    def test_finetune_fraction_subsets_trials(self):
        ckpt = self.make_checkpoint()
        task = tiny_task(n_subjects=4, trials_per_class=4)
        split = make_split(sorted(set(task.subjects)), "kfold", k=2)
        full = finetune(ckpt, task, split, probe_cfg(epochs=10, patience=4))
        frac = finetune(
            ckpt, task, split, probe_cfg(epochs=10, patience=4, finetune_fraction=0.5)
        )
        assert len(full) == len(frac) == 2

    def test_deterministic_results(self):
        ckpt = self.make_checkpoint()
        task = tiny_task(n_subjects=3, trials_per_class=3)
        split = make_split(sorted(set(task.subjects)), "kfold", k=3, seed=1)
        cfg = probe_cfg(epochs=15, patience=5)
        r1 = finetune(ckpt, task, split, cfg)
        r2 = finetune(ckpt, task, split, cfg)
        assert [(r.fold, r.accuracy, r.lr) for r in r1] == [(r.fold, r.accuracy, r.lr) for r in r2]


class TestEvaluate:
    def test_perfect_predictor(self):
        model = build_model(
            TINY_CONFIG, seed=1, with_decoder=False, with_projector=False, n_classes=2
        )
        x = np.random.default_rng(0).normal(size=(10, N_CH, N_T)).astype(np.float32)
        model.eval()
        with torch.no_grad():
            preds = model.classify(model.embed(model.encode(torch.from_numpy(x)))).argmax(-1)
        acc, confusion = evaluate(model, x, preds.numpy())
        assert acc == 1.0
        assert np.trace(confusion) == confusion.sum()

    def test_constant_predictor_on_balanced_four_class(self):
        model = build_model(
            TINY_CONFIG, seed=2, with_decoder=False, with_projector=False, n_classes=4
        )
        with torch.no_grad():
            model.head.fc.weight.zero_()
            model.head.fc.bias.copy_(torch.tensor([1.0, 0.0, 0.0, 0.0]))
        x = np.random.default_rng(1).normal(size=(20, N_CH, N_T)).astype(np.float32)
        y = np.repeat(np.arange(4), 5)
        acc, confusion = evaluate(model, x, y)
        assert acc == 0.25
        assert confusion[:, 0].sum() == 20

    def test_confusion_trace_is_accuracy(self):
        model = build_model(
            TINY_CONFIG, seed=3, with_decoder=False, with_projector=False, n_classes=2
        )
        x = np.random.default_rng(2).normal(size=(12, N_CH, N_T)).astype(np.float32)
        y = np.random.default_rng(3).integers(0, 2, size=12)
        acc, confusion = evaluate(model, x, y)
        assert acc == np.trace(confusion) / confusion.sum()
        assert confusion.sum(axis=1).tolist() == [int((y == c).sum()) for c in range(2)]

    def test_empty_eval_set(self):
        model = build_model(
            TINY_CONFIG, seed=0, with_decoder=False, with_projector=False, n_classes=2
        )
        with pytest.raises(DataError):
            evaluate(model, np.zeros((0, N_CH, N_T), dtype=np.float32), np.zeros(0))


class TestSweep:
    def test_single_value_sweep_matches_direct_finetune(self, tmp_path):
        cfg = TrainConfig(mode="pretrain", iterations=20, batch_size=8, seed=0)
        ckpt = pretrain(tiny_corpus(16), cfg, TINY_CONFIG).checkpoint
        task = tiny_task(n_subjects=3, trials_per_class=3)
        split = make_split(sorted(set(task.subjects)), "kfold", k=3)
        fcfg = probe_cfg(epochs=10, patience=4)
        points = sweep(
            "finetune_fraction", (1.0,), dataset=task, split=split,
            finetune_cfg=fcfg, checkpoint=ckpt, out_dir=tmp_path,
        )
        direct = finetune(ckpt, task, split, fcfg)
        assert len(points) == 1
        assert points[0].fold_accuracies == tuple(r.accuracy for r in direct)
        assert np.isclose(points[0].mean_accuracy, np.mean([r.accuracy for r in direct]))
        assert (tmp_path / "results.csv").exists()
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "finetune_fraction_sweep.png").exists()

    def test_results_csv_schema(self, tmp_path):
        rows = [
            {"experiment_id": "e", "axis": "finetune_fraction", "fraction": 1.0,
             "fold": 0, "accuracy": 0.5, "lr": 1e-3, "seed": 0}
        ]
        write_results_csv(tmp_path / "r.csv", rows)
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header == "experiment_id,axis,fraction,fold,accuracy,lr,seed"

    def test_invalid_axis_and_values(self):
        task = tiny_task(n_subjects=2, trials_per_class=1)
        split = make_split(sorted(set(task.subjects)), "kfold", k=2)
        with pytest.raises(ParameterError):
            sweep("epochs", (1.0,), dataset=task, split=split, finetune_cfg=probe_cfg())
        with pytest.raises(ParameterError):
            sweep("finetune_fraction", (0.0,), dataset=task, split=split, finetune_cfg=probe_cfg())
        with pytest.raises(ParameterError):
            sweep("pretrain_fraction", (1.0,), dataset=task, split=split, finetune_cfg=probe_cfg())


class TestMakeFinetuneModel:
    def test_backbone_weights_come_from_checkpoint(self):
        base = build_model(TINY_CONFIG, seed=11)
        ckpt = checkpoint_from_model(base, seed=11)
        model = make_finetune_model(ckpt, n_classes=2, cfg=probe_cfg())
        for (name, p), (_, q) in zip(
            model.encoder.named_parameters(), base.encoder.named_parameters()
        ):
            assert torch.equal(p, q), name
        assert model.decoder is None and model.projector is None
