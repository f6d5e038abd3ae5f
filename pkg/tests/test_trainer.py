import math

import numpy as np
import pytest

from osrkit import data, losses, model as m, trainer
from osrkit.errors import ConfigError, NumericError


def tiny_bundle(seed=0, spc=24):
    spec = data.SyntheticSpec(
        input_dim=2,
        total_classes=6,
        kkc_count=3,
        uuc_count=2,
        samples_per_class=spc,
        class_center_scale=5.0,
        cluster_std=0.6,
        kuc_mode="ring",
        seed=seed,
    )
    return data.generate(spec)


def tiny_optim(**kw):
    base = dict(
        epochs=4,
        batch_size_known=16,
        batch_size_background=16,
        lr_init=0.05,
        warmup_epochs=1,
        momentum=0.9,
        seed=0,
        checkpoint_every=0,
    )
    base.update(kw)
    return trainer.OptimConfig(**base)


def fresh_model(bundle, seed=0, head="distance", latent=4):
    return m.build_model([bundle.input_dim, 16, latent], head, bundle.class_count, seed)


def param_bytes(net):
    return b"".join(t.values.tobytes() for _, t in net.named_parameters())


class TestLrSchedule:
    def test_warmup_starts_at_zero(self):
        cfg = tiny_optim(epochs=20, warmup_epochs=5)
        assert trainer.lr_schedule(0, cfg) == 0.0

    def test_first_post_warmup_epoch_is_lr_init(self):
        cfg = tiny_optim(epochs=20, warmup_epochs=5)
        assert trainer.lr_schedule(5, cfg) == cfg.lr_init

    def test_final_epoch_hits_cosine_floor(self):
        cfg = tiny_optim(epochs=20, warmup_epochs=5)
        assert trainer.lr_schedule(19, cfg) == pytest.approx(0.0, abs=1e-16)

    def test_matches_independent_schedule_oracle(self):
        cfg = tiny_optim(epochs=30, warmup_epochs=4, lr_init=0.2)
        for epoch in range(30):
            if epoch < 4:
                expected = 0.2 * epoch / 4
            else:
                progress = (epoch - 4) / (30 - 1 - 4)
                expected = 0.2 * (1.0 + math.cos(math.pi * progress)) / 2.0
            assert trainer.lr_schedule(epoch, cfg) == pytest.approx(expected, rel=1e-15)

    def test_single_epoch_no_warmup(self):
        cfg = tiny_optim(epochs=1, warmup_epochs=0)
        assert trainer.lr_schedule(0, cfg) == cfg.lr_init

    def test_config_invariants(self):
        with pytest.raises(ConfigError):
            tiny_optim(epochs=0).validate()
        with pytest.raises(ConfigError):
            tiny_optim(epochs=3, warmup_epochs=3).validate()
        with pytest.raises(ConfigError):
            tiny_optim(lr_init=0.0).validate()


class TestTrain:
    def test_zero_epochs_leaves_model_at_initialization(self):
        bundle = tiny_bundle()
        net = fresh_model(bundle)
        before = param_bytes(net)
        trace = trainer.train(bundle, net, losses.LossConfig(family="none"), tiny_optim(epochs=0))
        assert param_bytes(net) == before
        assert trace.records == []

    def test_lambda_zero_equals_family_none_bitwise(self):
        bundle = tiny_bundle()
        net_a = fresh_model(bundle, seed=3)
        net_b = fresh_model(bundle, seed=3)
        cfg = tiny_optim(epochs=3)
        trainer.train(bundle, net_a, losses.LossConfig(family="none"), cfg)
        trainer.train(bundle, net_b, losses.LossConfig(family="class_inclusion", lam=0.0), cfg)
        assert param_bytes(net_a) == param_bytes(net_b)

    def test_one_hand_stepped_sgd_iteration(self):
        # Single sample halfway between two fixed anchors.  With posteriors
        # (0.5, 0.5), d(loss)/dz = (1-p1)*2(z-a1) - p2*2(z-a2) = 4, so
        # g_w = 4 * input = 8 and g_b = 4; SGD moves both down.
        bundle = data.DatasetBundle(
            train_known_x=np.array([[2.0]]),
            train_known_y=np.array([1]),
            background_x=np.array([[0.0]]),
            test_known_x=np.array([[2.0]]),
            test_known_y=np.array([1]),
            test_unknown_x=np.array([[9.0]]),
            class_count=2,
        )
        net = m.build_model([1, 1], "distance", 2, seed=0, freeze_anchors=True)
        net.extractor.weights[0].values[:] = 1.0
        net.extractor.biases[0].values[:] = 0.0
        net.head.anchors.values[:] = [[0.0], [4.0]]
        cfg = tiny_optim(epochs=1, warmup_epochs=0, lr_init=0.01, batch_size_known=1)
        trainer.train(bundle, net, losses.LossConfig(family="none"), cfg)
        assert net.extractor.weights[0].values[0, 0] == pytest.approx(1.0 - 0.01 * 8.0, rel=1e-12)
        assert net.extractor.biases[0].values[0] == pytest.approx(0.0 - 0.01 * 4.0, rel=1e-12)

    def test_momentum_accumulates_across_steps(self):
        # Two identical single-sample epochs: second step uses v = m*g1 + g2.
        bundle = data.DatasetBundle(
            train_known_x=np.array([[2.0]]),
            train_known_y=np.array([1]),
            background_x=np.array([[0.0]]),
            test_known_x=np.array([[2.0]]),
            test_known_y=np.array([1]),
            test_unknown_x=np.array([[9.0]]),
            class_count=2,
        )
        net = m.build_model([1, 1], "distance", 2, seed=0, freeze_anchors=True)
        net.extractor.weights[0].values[:] = 1.0
        net.extractor.biases[0].values[:] = 0.0
        net.head.anchors.values[:] = [[0.0], [4.0]]
        # Tiny lr so the gradient stays ~constant over the two steps.
        cfg = tiny_optim(epochs=2, warmup_epochs=0, lr_init=1e-7, batch_size_known=1, momentum=0.5)
        trainer.train(bundle, net, losses.LossConfig(family="none"), cfg)
        # After two steps: w = 1 - lr*8 - lr*(0.5*8 + 8) to first order.
        assert net.extractor.weights[0].values[0, 0] == pytest.approx(
            1.0 - 1e-7 * 8.0 - 1e-7 * 12.0, rel=1e-5
        )

    def test_determinism_bitwise(self):
        bundle = tiny_bundle()
        runs = []
        for _ in range(2):
            net = fresh_model(bundle, seed=5)
            trainer.train(
                bundle, net, losses.LossConfig(family="class_inclusion", lam=1.0), tiny_optim()
            )
            runs.append(param_bytes(net))
        assert runs[0] == runs[1]

    def test_checkpoint_resume_equals_uninterrupted(self, tmp_path):
        bundle = tiny_bundle()
        cfg = tiny_optim(epochs=6, checkpoint_every=3)
        loss_cfg = losses.LossConfig(family="class_inclusion", lam=1.0)

        net_full = fresh_model(bundle, seed=7)
        trainer.train(bundle, net_full, loss_cfg, tiny_optim(epochs=6))

        net_ck = fresh_model(bundle, seed=7)
        trainer.train(bundle, net_ck, loss_cfg, cfg, checkpoint_dir=tmp_path)
        resumed, state = m.load_checkpoint(tmp_path / "checkpoint_epoch_3.json")
        assert state["epoch"] == 3
        trainer.train(
            bundle,
            resumed,
            loss_cfg,
            tiny_optim(epochs=6),
            start_epoch=state["epoch"],
            velocity=state["velocity"],
        )
        assert param_bytes(resumed) == param_bytes(net_full)

    def test_trace_has_one_record_per_epoch(self):
        bundle = tiny_bundle()
        net = fresh_model(bundle)
        trace = trainer.train(
            bundle, net, losses.LossConfig(family="class_inclusion"), tiny_optim(epochs=3)
        )
        assert [r.epoch for r in trace.records] == [0, 1, 2]
        for r in trace.records:
            assert math.isfinite(r.loss_total)
            assert 0.0 <= r.train_accuracy <= 1.0

    def test_trace_csv_round_trip_fields(self, tmp_path):
        bundle = tiny_bundle()
        net = fresh_model(bundle)
        trace = trainer.train(bundle, net, losses.LossConfig(family="none"), tiny_optim(epochs=2))
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,lr,loss_cf,loss_bg_k,loss_bg_u,loss_total,train_accuracy"
        assert len(lines) == 3
        # Regularizer columns are exactly zero for the plain family.
        assert all(line.split(",")[3] == "0.0" for line in lines[1:])

    def test_divergence_guard_reports_location(self):
        bundle = tiny_bundle()
        net = fresh_model(bundle)
        net.extractor.weights[0].values[:] = 1e300  # first forward overflows
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(NumericError, match="epoch 0"):
                trainer.train(bundle, net, losses.LossConfig(family="none"), tiny_optim())

    def test_class_inclusion_pushes_background_away(self):
        bundle = tiny_bundle(spc=40)
        net = fresh_model(bundle, seed=11, latent=4)

        def mean_nearest(net_):
            z = net_.extractor.features(bundle.background_x)
            diff = z[:, None, :] - net_.head.anchors.values[None, :, :]
            return float(np.sqrt(np.einsum("bcn,bcn->bc", diff, diff).min(axis=1)).mean())

        before = mean_nearest(net)
        trainer.train(
            bundle,
            net,
            losses.LossConfig(family="class_inclusion", lam=1.0),
            tiny_optim(epochs=12, warmup_epochs=2),
        )
        assert mean_nearest(net) > before
