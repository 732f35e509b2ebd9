"""Preset bundles: completeness, data helpers, per-objective configs."""

import numpy as np
import pytest

from condis.presets import (
    PRESETS,
    fit_toy_objective,
    get_preset,
    identity_code_models,
    mnist_train_config,
    toy_batch_generator,
    toy_dataset,
    toy_train_config,
)
from condis.training import SubspaceLayout, TrainConfig, encode, predict

EXPECTED_PRESETS = {
    "table1",
    "toy-reg",
    "toy-cls-K2",
    "toy-cls-K4",
    "toy-cls-K10",
    "mnist-3-8",
    "weak-labels",
}


class TestBundles:
    def test_all_named_bundles_exist(self):
        assert EXPECTED_PRESETS <= set(PRESETS)

    def test_every_preset_fully_specified(self):
        # no preset may leave seeds, objectives, or the eval grid empty
        for name, preset in PRESETS.items():
            assert preset.name == name
            assert len(preset.seeds) > 0, name
            assert len(preset.objectives) > 0, name
            assert len(preset.eval_rhos) > 0, name
            assert all(-1 <= r <= 1 for r in preset.eval_rhos), name

    def test_toy_presets_run_three_seeds(self):
        for name in ("toy-reg", "toy-cls-K2", "toy-cls-K4", "toy-cls-K10"):
            assert len(PRESETS[name].seeds) == 3

    def test_unknown_preset_lists_choices(self):
        with pytest.raises(KeyError, match="toy-cls-K2"):
            get_preset("nope")

    def test_k_presets_match_their_name(self):
        assert PRESETS["toy-cls-K4"].K == 4
        assert PRESETS["toy-cls-K10"].K == 10

    def test_weak_labels_fraction_below_one(self):
        assert PRESETS["weak-labels"].label_fraction < 1.0


class TestToyData:
    def test_dataset_shapes_and_signs(self):
        preset = get_preset("toy-cls-K2")
        x, attrs = toy_dataset(preset, seed=0)
        assert x.shape == (preset.n_train, preset.K)
        assert set(np.unique(attrs.s)) == {-1.0, 1.0}
        assert attrs.label_mask.all()

    def test_dataset_deterministic_per_seed(self):
        preset = get_preset("toy-cls-K2")
        x1, _ = toy_dataset(preset, seed=3)
        x2, _ = toy_dataset(preset, seed=3)
        x3, _ = toy_dataset(preset, seed=4)
        np.testing.assert_array_equal(x1, x2)
        assert not np.array_equal(x1, x3)

    def test_weak_labels_mask_count(self):
        preset = get_preset("weak-labels")
        _, attrs = toy_dataset(preset, seed=0)
        expected = round(preset.label_fraction * preset.n_train)
        np.testing.assert_array_equal(
            attrs.label_mask.sum(axis=0), [expected] * preset.K
        )

    def test_batch_generator_protocol(self):
        generate = toy_batch_generator(K=2, sigma=0.5)
        batch = generate(0.8, 0.5, 256, np.random.default_rng(0))
        assert batch.x.shape == (256, 2)
        assert batch.labels.shape == (256, 2)
        assert set(np.unique(batch.labels)) <= {0, 1}
        assert batch.mask.all()

    def test_batch_generator_seed_reproducible(self):
        generate = toy_batch_generator(K=2, sigma=1.0)
        a = generate(0.4, 1.0, 64, np.random.default_rng(5))
        b = generate(0.4, 1.0, 64, np.random.default_rng(5))
        np.testing.assert_array_equal(a.x, b.x)


class TestTrainConfigs:
    def test_plain_objective_hyperparameters(self):
        preset = get_preset("toy-cls-K2")
        config = toy_train_config(preset, "Base", seed=7)
        assert config.objective == "Base"
        assert config.pack_size == 1
        assert config.inner_classifier_steps == 1
        assert config.epochs == preset.epochs
        assert config.seed == 7

    def test_adversarial_hyperparameters(self):
        preset = get_preset("toy-cls-K2")
        config = toy_train_config(preset, "BaseMI", seed=0)
        assert config.adversarial_weight == 100.0
        assert config.pack_size == 50
        assert config.inner_classifier_steps == 10
        # discriminator leads the encoder by 10x in learning rate
        assert config.lr_discriminator == pytest.approx(10 * config.lr_encoder)

    def test_epochs_override(self):
        preset = get_preset("toy-cls-K2")
        assert toy_train_config(preset, "Base", 0, epochs=5).epochs == 5
        assert toy_train_config(preset, "BaseMI", 0, epochs=2).epochs == 2

    def test_mnist_config_architecture(self):
        preset = get_preset("mnist-3-8")
        config = mnist_train_config(preset, "BaseCMI", lr=1e-4)
        assert config.input_dim == 32 * 64
        assert config.layout.dims == (5, 5)
        assert config.encoder_hidden == (50, 50, 50)
        assert config.pack_size == 1
        assert config.adversarial_weight == 100.0
        plain = mnist_train_config(preset, "Base", lr=1e-4)
        assert plain.inner_classifier_steps == 1


class TestIdentityCode:
    def config(self, K=2):
        return TrainConfig(
            objective="BaseCMI",
            layout=SubspaceLayout((1,) * K),
            input_dim=K,
            latent_dim=K,
        )

    def test_encoder_is_identity(self):
        models = identity_code_models(self.config())
        x = np.random.default_rng(0).normal(size=(32, 2))
        np.testing.assert_allclose(encode(models, x), x)

    def test_heads_threshold_on_sign(self):
        models = identity_code_models(self.config())
        x = np.array([[2.0, -3.0], [-0.5, 0.25], [1.0, 1.0]])
        np.testing.assert_array_equal(
            predict(models, x), (x > 0).astype(int)
        )

    def test_requires_square_encoder(self):
        config = TrainConfig(
            objective="BaseCMI",
            layout=SubspaceLayout((1, 1)),
            input_dim=3,
            latent_dim=2,
        )
        with pytest.raises(ValueError, match="input_dim"):
            identity_code_models(config)

    def test_requires_scalar_subspaces(self):
        config = TrainConfig(
            objective="BaseCMI",
            layout=SubspaceLayout((2, 2)),
            input_dim=4,
            latent_dim=4,
        )
        with pytest.raises(ValueError, match="one dimension"):
            identity_code_models(config)


class TestFitToyObjective:
    def test_conditional_objective_skips_training(self):
        preset = get_preset("toy-cls-K2")
        models, config, log = fit_toy_objective(preset, "BaseCMI", seed=0)
        assert log is None
        np.testing.assert_allclose(
            models.encoder.params["W0"], np.eye(2)
        )
        assert config.objective == "BaseCMI"

    def test_zero_epochs_returns_untrained_net(self):
        preset = get_preset("toy-cls-K2")
        models, _, log = fit_toy_objective(preset, "BaseCMI", seed=0, epochs=0)
        assert log is not None and len(log.steps) == 0
        assert not np.allclose(models.encoder.params["W0"], np.eye(2))

    def test_plain_objective_trains(self):
        preset = get_preset("toy-cls-K2")
        models, config, log = fit_toy_objective(preset, "Base", seed=0, epochs=2)
        assert len(log.steps) == 2 * (preset.n_train // preset.batch)
        assert config.epochs == 2
