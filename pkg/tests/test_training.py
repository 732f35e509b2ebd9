"""Tests for the training loop and its shuffle machinery.

The encoder gradient, including the paths through packing and through
both shuffle variants, is audited against central finite differences.
Shuffle contracts are checked by tracing row identities.
"""

import numpy as np
import pytest

from condis.datagen import full_mask_table, sample_correlated_attributes, toy_observations
from condis.errors import LayoutMismatch, NonFiniteLoss
from condis.nn import load_checkpoint, save_checkpoint
from condis.training import (
    LabeledBatch,
    Models,
    SubspaceLayout,
    TrainConfig,
    batch_from_attrs,
    concat_subspaces,
    conditional_shuffle,
    discriminator_step,
    encode,
    encoder_step,
    even_layout,
    init_models,
    named_arrays,
    restore_models,
    shuffle_marginals,
    split_subspaces,
    train,
    _encoder_loss_and_grads,
)


def toy_batch(rng, n=64, K=2, rho=0.8, sigma=0.5):
    attrs = sample_correlated_attributes(K, rho, n, rng)
    data = toy_observations(attrs, np.eye(K), sigma, rng)
    return batch_from_attrs(data.x, data.attrs)


def small_config(objective, **overrides):
    defaults = dict(
        objective=objective,
        layout=even_layout(2, 2),
        input_dim=2,
        latent_dim=2,
        lr_encoder=1e-3,
        lr_classifiers=1e-3,
        lr_discriminator=1e-3,
        adversarial_weight=1.0,
        pack_size=1,
        batch=64,
        epochs=1,
        seed=0,
        disc_hidden=(8,),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestLayoutAndSplit:
    def test_ten_dims_two_even_subspaces(self):
        layout = even_layout(2, 10)
        z = np.arange(30.0).reshape(3, 10)
        a, b = split_subspaces(z, layout)
        np.testing.assert_array_equal(a, z[:, :5])
        np.testing.assert_array_equal(b, z[:, 5:])

    def test_single_block_is_identity(self):
        z = np.random.default_rng(0).normal(size=(4, 3))
        (only,) = split_subspaces(z, SubspaceLayout(dims=(3,)))
        np.testing.assert_array_equal(only, z)

    def test_split_concat_round_trip(self):
        z = np.random.default_rng(1).normal(size=(6, 7))
        layout = SubspaceLayout(dims=(2, 4, 1))
        np.testing.assert_array_equal(concat_subspaces(split_subspaces(z, layout)), z)

    def test_width_mismatch(self):
        with pytest.raises(LayoutMismatch):
            split_subspaces(np.zeros((2, 5)), SubspaceLayout(dims=(2, 2)))

    def test_invalid_widths(self):
        with pytest.raises(ValueError):
            SubspaceLayout(dims=(2, 0))
        with pytest.raises(ValueError):
            even_layout(3, 10)


class TestShuffleMarginals:
    def test_batch_of_one_unchanged(self):
        blocks = [np.array([[1.0, 2.0]]), np.array([[3.0]])]
        out = shuffle_marginals(blocks, np.random.default_rng(0))
        for a, b in zip(blocks, out):
            np.testing.assert_array_equal(a, b)

    def test_per_block_multisets_preserved(self):
        rng = np.random.default_rng(2)
        blocks = [rng.normal(size=(50, 3)), rng.normal(size=(50, 2))]
        out = shuffle_marginals(blocks, rng)
        for a, b in zip(blocks, out):
            np.testing.assert_array_equal(np.sort(a, axis=0), np.sort(b, axis=0))

    def test_cross_block_correlation_destroyed(self):
        n = 10**4
        base = np.random.default_rng(3).normal(size=(n, 1))
        blocks = [base, base.copy()]
        out = shuffle_marginals(blocks, np.random.default_rng(4))
        corr = np.corrcoef(out[0][:, 0], out[1][:, 0])[0, 1]
        assert abs(corr) < 4.0 / np.sqrt(n)

    def test_size_disagreement(self):
        with pytest.raises(ValueError):
            shuffle_marginals([np.zeros((3, 1)), np.zeros((4, 1))], np.random.default_rng(0))


class TestConditionalShuffle:
    def test_single_group_plain_permutation(self):
        rng = np.random.default_rng(5)
        blocks = [rng.normal(size=(20, 2)), rng.normal(size=(20, 2))]
        s_k = np.zeros(20)
        out = conditional_shuffle(blocks, s_k, 0, np.random.default_rng(6))
        np.testing.assert_array_equal(out[0], blocks[0])
        np.testing.assert_array_equal(
            np.sort(out[1], axis=0), np.sort(blocks[1], axis=0)
        )

    def test_all_singleton_groups_identity(self):
        rng = np.random.default_rng(7)
        blocks = [rng.normal(size=(5, 2)), rng.normal(size=(5, 2))]
        out = conditional_shuffle(blocks, np.arange(5), 0, np.random.default_rng(8))
        for a, b in zip(blocks, out):
            np.testing.assert_array_equal(a, b)

    def test_complement_blocks_travel_together(self):
        # encode each row's identity in every block, then trace it
        n, K = 40, 4
        blocks = [np.arange(n, dtype=float).reshape(-1, 1) for _ in range(K)]
        s_k = np.random.default_rng(9).integers(0, 2, size=n)
        out = conditional_shuffle(blocks, s_k, 0, np.random.default_rng(10))
        np.testing.assert_array_equal(out[0][:, 0], np.arange(n))
        for j in (2, 3):
            np.testing.assert_array_equal(out[1][:, 0], out[j][:, 0])

    def test_groups_never_mix(self):
        n = 60
        rng = np.random.default_rng(11)
        s_k = rng.integers(0, 3, size=n)
        blocks = [np.arange(n, dtype=float).reshape(-1, 1) for _ in range(2)]
        out = conditional_shuffle(blocks, s_k, 0, rng)
        moved = out[1][:, 0].astype(int)
        np.testing.assert_array_equal(s_k[moved], s_k)

    def test_within_group_moments_invariant(self):
        n = 200
        rng = np.random.default_rng(12)
        s_k = rng.integers(0, 2, size=n)
        blocks = [rng.normal(size=(n, 2)), rng.normal(size=(n, 3))]
        out = conditional_shuffle(blocks, s_k, 0, rng)
        for v in (0, 1):
            rows = s_k == v
            np.testing.assert_allclose(
                out[1][rows].mean(axis=0), blocks[1][rows].mean(axis=0), atol=1e-12
            )
            np.testing.assert_allclose(
                np.cov(out[1][rows].T), np.cov(blocks[1][rows].T), atol=1e-12
            )


def numerical_encoder_grad(objective, batch, models, config, seed, name, h=1e-5):
    arr = models.encoder.params[name]
    g = np.zeros_like(arr)
    flat, gflat = arr.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        vals = []
        for delta in (h, -h):
            flat[i] = orig + delta
            total, _, _ = _encoder_loss_and_grads(
                objective, batch, models, config, np.random.default_rng(seed)
            )
            vals.append(total)
        flat[i] = orig
        gflat[i] = (vals[0] - vals[1]) / (2 * h)
    return g


class TestEncoderGradients:
    @pytest.mark.parametrize("objective", ["Base", "BaseMI", "BaseCMI"])
    def test_matches_finite_differences(self, objective):
        """Full objective gradient, through heads, packs and shuffles."""
        rng = np.random.default_rng(13)
        config = small_config(
            objective,
            layout=SubspaceLayout(dims=(1, 2)),
            input_dim=2,
            latent_dim=3,
            pack_size=2,
            batch=24,
            encoder_hidden=(4,),
            adversarial_weight=3.0,
        )
        batch = toy_batch(rng, n=24, K=2, rho=0.5, sigma=0.8)
        models = init_models(config, rng)
        _encoder_loss_and_grads(
            objective, batch, models, config, np.random.default_rng(99)
        )
        analytic = {k: v.copy() for k, v in models.encoder.grads.items()}
        for name in models.encoder.names():
            num = numerical_encoder_grad(objective, batch, models, config, 99, name)
            scale = max(np.abs(num).max(), np.abs(analytic[name]).max(), 1e-8)
            assert np.abs(analytic[name] - num).max() / scale < 1e-4, (objective, name)

    def test_lambda_zero_draws_nothing(self):
        # same rng object must stay untouched, the basis for bitwise Base equality
        rng = np.random.default_rng(14)
        config = small_config("BaseCMI", adversarial_weight=0.0)
        batch = toy_batch(rng)
        models = init_models(config, rng)
        shared = np.random.default_rng(42)
        before = shared.bit_generator.state
        encoder_step("BaseCMI", batch, models, config, shared)
        assert shared.bit_generator.state == before


class TestEncoderStep:
    def test_frozen_discriminator_contribution(self):
        """All-zero discriminator outputs logit 0, so each attribute adds
        exactly 2 ln(1/2) before weighting."""
        rng = np.random.default_rng(15)
        lam = 7.0
        config = small_config("BaseCMI", adversarial_weight=lam, pack_size=4)
        batch = toy_batch(rng, n=64)
        models = init_models(config, rng)
        for name in models.discriminator.names():
            models.discriminator.params[name][:] = 0.0
        entry = encoder_step("BaseCMI", batch, models, config, np.random.default_rng(16))
        K = config.layout.K
        assert entry["adv_loss"] == pytest.approx(K * 2 * np.log(0.5), abs=1e-12)
        assert entry["loss"] - sum(entry["cls_loss"]) == pytest.approx(
            lam * K * 2 * np.log(0.5), abs=1e-9
        )

    def test_base_step_decreases_separable_loss(self):
        rng = np.random.default_rng(17)
        config = small_config("Base", lr_encoder=1e-2, lr_classifiers=1e-2)
        batch = toy_batch(rng, sigma=0.0)
        models = init_models(config, rng)
        first = encoder_step("Base", batch, models, config, np.random.default_rng(0))
        second = encoder_step("Base", batch, models, config, np.random.default_rng(0))
        assert second["loss"] < first["loss"]

    def test_discriminator_params_untouched(self):
        rng = np.random.default_rng(18)
        config = small_config("BaseCMI", pack_size=2)
        batch = toy_batch(rng)
        models = init_models(config, rng)
        before = {k: v.copy() for k, v in models.discriminator.params.items()}
        encoder_step("BaseCMI", batch, models, config, np.random.default_rng(19))
        for k, v in models.discriminator.params.items():
            np.testing.assert_array_equal(v, before[k])

    def test_non_finite_loss_raised(self):
        rng = np.random.default_rng(20)
        config = small_config("Base")
        batch = toy_batch(rng)
        models = init_models(config, rng)
        models.encoder.params["W0"][0, 0] = np.nan
        with pytest.raises(NonFiniteLoss):
            encoder_step("Base", batch, models, config, np.random.default_rng(21))

    def test_unlabeled_rows_do_not_influence_heads(self):
        rng = np.random.default_rng(22)
        config = small_config("Base")
        batch = toy_batch(rng)
        mask = batch.mask.copy()
        mask[::2, 0] = False
        scrambled = batch.labels.copy()
        scrambled[::2, 0] = 1 - scrambled[::2, 0]
        models_a = init_models(config, np.random.default_rng(23))
        models_b = init_models(config, np.random.default_rng(23))
        encoder_step(
            "Base", LabeledBatch(batch.x, batch.labels, mask), models_a, config,
            np.random.default_rng(24),
        )
        encoder_step(
            "Base", LabeledBatch(batch.x, scrambled, mask), models_b, config,
            np.random.default_rng(24),
        )
        for k in models_a.encoder.names():
            np.testing.assert_array_equal(
                models_a.encoder.params[k], models_b.encoder.params[k]
            )
        for clf_a, clf_b in zip(models_a.classifiers, models_b.classifiers):
            for k in clf_a.names():
                np.testing.assert_array_equal(clf_a.params[k], clf_b.params[k])


class TestDiscriminatorStep:
    def _identity_encoder(self, models):
        models.encoder.params["W0"][:] = np.eye(2)
        models.encoder.params["b0"][:] = 0.0

    def test_separable_inputs_learned(self):
        """Perfectly tied pairs vs batchwise shuffles: with a pack of 8 the
        two pack distributions barely overlap, so accuracy should approach 1.
        (Single samples share identical marginals, hence the packing.)"""
        config = small_config(
            "BaseMI", lr_discriminator=5e-3, batch=256, pack_size=8,
            disc_hidden=(16, 16),
        )
        models = init_models(config, np.random.default_rng(25))
        self._identity_encoder(models)
        rng = np.random.default_rng(26)
        accs = []
        for _ in range(400):
            attrs = sample_correlated_attributes(2, 1.0, 256, rng)
            batch = batch_from_attrs(
                toy_observations(attrs, np.eye(2), 0.02, rng).x, attrs
            )
            entry = discriminator_step("BaseMI", batch, models, config, rng)
            accs.append(entry["disc_acc"])
        assert np.mean(accs[-20:]) > 0.9

    def test_conditionally_independent_latents_stay_at_chance(self):
        config = small_config(
            "BaseCMI", lr_discriminator=1e-3, batch=512, pack_size=4
        )
        models = init_models(config, np.random.default_rng(27))
        self._identity_encoder(models)
        rng = np.random.default_rng(28)
        accs = []
        for _ in range(200):
            attrs = sample_correlated_attributes(2, 0.8, 512, rng)
            batch = batch_from_attrs(
                toy_observations(attrs, np.eye(2), 0.3, rng).x, attrs
            )
            entry = discriminator_step("BaseCMI", batch, models, config, rng)
            accs.append(entry["disc_acc"])
        assert abs(np.mean(accs[-50:]) - 0.5) < 0.05

    def test_pack_width_scales_input(self):
        for m in (1, 5):
            config = small_config("BaseMI", pack_size=m, batch=64)
            models = init_models(config, np.random.default_rng(29))
            assert models.disc_spec.input_dim == m * config.latent_dim

    def test_encoder_untouched(self):
        rng = np.random.default_rng(30)
        config = small_config("BaseCMI", pack_size=2)
        batch = toy_batch(rng)
        models = init_models(config, rng)
        enc_before = {k: v.copy() for k, v in models.encoder.params.items()}
        discriminator_step("BaseCMI", batch, models, config, np.random.default_rng(31))
        for k, v in models.encoder.params.items():
            np.testing.assert_array_equal(v, enc_before[k])

    def test_base_objective_is_noop(self):
        rng = np.random.default_rng(32)
        config = small_config("Base")
        models = init_models(config, rng)
        assert discriminator_step("Base", toy_batch(rng), models, config, rng) is None


def toy_dataset(rng, n=2000, K=2, rho=0.8, sigma=0.5):
    attrs = sample_correlated_attributes(K, rho, n, rng)
    return toy_observations(attrs, np.eye(K), sigma, rng)


def train_accuracy(models, layout, data):
    batch = batch_from_attrs(data.x, data.attrs)
    z = encode(models, batch.x)
    hits = []
    for k, sl in enumerate(layout.slices):
        from condis.nn import mlp_forward

        logits, _ = mlp_forward(models.classifier_specs[k], models.classifiers[k], z[:, sl])
        hits.append(np.argmax(logits, axis=1) == batch.labels[:, k])
    return np.mean(hits)


class TestTrain:
    def test_separable_toy_reaches_high_accuracy(self):
        data = toy_dataset(np.random.default_rng(33), n=1000, rho=0.0, sigma=0.0)
        config = small_config(
            "Base", lr_encoder=1e-2, lr_classifiers=1e-2, epochs=50, batch=100
        )
        models, log = train(data, config)
        assert train_accuracy(models, config.layout, data) > 0.99
        assert len(log.steps) == 50 * 10

    def test_bitwise_deterministic(self):
        data = toy_dataset(np.random.default_rng(34), n=500)
        config = small_config("BaseCMI", epochs=2, batch=50, pack_size=5, seed=7)
        models_a, log_a = train(data, config)
        models_b, log_b = train(data, config)
        assert log_a.steps == log_b.steps
        for key, arr in named_arrays(models_a).items():
            np.testing.assert_array_equal(arr, named_arrays(models_b)[key])

    def test_lambda_zero_matches_base_bitwise(self):
        data = toy_dataset(np.random.default_rng(35), n=400)
        base_cfg = small_config("Base", epochs=3, batch=50, seed=11)
        cmi_cfg = small_config(
            "BaseCMI", adversarial_weight=0.0, epochs=3, batch=50, seed=11
        )
        base_models, _ = train(data, base_cfg)
        cmi_models, _ = train(data, cmi_cfg)
        base_arrays = named_arrays(base_models)
        cmi_arrays = named_arrays(cmi_models)
        for key, arr in base_arrays.items():
            np.testing.assert_array_equal(arr, cmi_arrays[key])

    def test_zero_epochs_returns_initial_models(self):
        data = toy_dataset(np.random.default_rng(36), n=200)
        config = small_config("Base", epochs=0)
        models, log = train(data, config)
        assert log.steps == []
        fresh = init_models(
            config, np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[0])
        )
        for key, arr in named_arrays(models).items():
            np.testing.assert_array_equal(arr, named_arrays(fresh)[key])

    def test_log_entries_finite_and_monotone(self):
        data = toy_dataset(np.random.default_rng(37), n=300)
        config = small_config("BaseMI", epochs=2, batch=50, pack_size=5)
        _, log = train(data, config)
        indices = [e["step"] for e in log.steps]
        assert indices == sorted(indices)
        for entry in log.steps:
            assert np.isfinite(entry["loss"])
            assert np.isfinite(entry["disc_loss"])

    def test_generator_data_mode(self):
        def gen(batch, rng):
            attrs = sample_correlated_attributes(2, 0.5, batch, rng)
            return batch_from_attrs(toy_observations(attrs, np.eye(2), 0.2, rng).x, attrs)

        config = small_config("Base", epochs=2, steps_per_epoch=4)
        _, log = train(gen, config)
        assert len(log.steps) == 8

    def test_generator_requires_steps_per_epoch(self):
        config = small_config("Base", epochs=1)
        with pytest.raises(ValueError):
            train(lambda b, r: None, config)


class TestCheckpointRoundTrip:
    def test_models_restore_bit_exact(self, tmp_path):
        data = toy_dataset(np.random.default_rng(38), n=300)
        config = small_config("BaseCMI", epochs=1, batch=50, pack_size=5)
        models, _ = train(data, config)
        path = tmp_path / "run.npz"
        save_checkpoint(path, named_arrays(models), config.hash())
        arrays, h = load_checkpoint(path, expected_hash=config.hash())
        restored = restore_models(config, arrays)
        for key, arr in named_arrays(models).items():
            np.testing.assert_array_equal(arr, named_arrays(restored)[key])
        batch = batch_from_attrs(data.x, data.attrs)
        np.testing.assert_array_equal(encode(models, batch.x), encode(restored, batch.x))

    def test_restore_rejects_wrong_shapes(self):
        config = small_config("Base")
        models = init_models(config, np.random.default_rng(39))
        arrays = named_arrays(models)
        arrays["encoder/W0"] = np.zeros((5, 5))
        with pytest.raises(LayoutMismatch):
            restore_models(config, arrays)


class TestConfigValidation:
    def test_objective_names(self):
        with pytest.raises(ValueError):
            small_config("BasePlusCMI")

    def test_layout_dimension_agreement(self):
        with pytest.raises(LayoutMismatch):
            small_config("Base", layout=SubspaceLayout(dims=(3, 3)), latent_dim=2)

    def test_batch_must_fit_a_pack(self):
        with pytest.raises(ValueError):
            small_config("BaseMI", pack_size=128, batch=64)

    def test_hash_stable_and_sensitive(self):
        a = small_config("Base", seed=1)
        b = small_config("Base", seed=1)
        c = small_config("Base", seed=2)
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()
