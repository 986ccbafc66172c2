import math

import numpy as np
import pytest
from scipy import integrate, stats

from src.models.zsl.exceptions import ShapeError, ValidationError
from src.models.zsl.expansion import (
    AlignmentContext,
    ExpansionConfig,
    LossWeights,
    alignment_loss,
    default_latent_dim,
    encode_examples,
    evaluate_expansion_losses,
    init_expansion_model,
    kl_to_standard_normal,
    reconstruction_loss,
    reparameterize,
    train_expansion,
    training_streams,
    unified_loss,
)
from src.models.zsl.nn_core import backward, forward, init_optimizer, optimizer_step
from src.models.zsl.parameter_controls import load_config
from src.models.zsl.pipeline import PreparedData, build_context, check_expansion_gradients, load_data


def _context(latent_dim=2, classes=3, n=2, seed=0):
    rng = np.random.default_rng(seed)
    return AlignmentContext(
        predefined=rng.standard_normal((classes, n)),
        manifold=rng.standard_normal((n + latent_dim, classes)),
        class_ids=tuple(f"s{i}" for i in range(classes)),
    )


@pytest.fixture
def prepared(small_benchmark):
    _, _, table, train, test = small_benchmark
    data = PreparedData(train=train, test=test, table=table)
    return data, build_context(data, 2)


class TestLossComponents:
    def test_kl_closed_form_values(self):
        assert kl_to_standard_normal(np.zeros((1, 3)), np.zeros((1, 3))) == 0.0
        assert kl_to_standard_normal(np.ones((1, 1)), np.zeros((1, 1))) == pytest.approx(0.5)

    @pytest.mark.parametrize("case", range(20))
    def test_kl_matches_numerical_integral(self, case):
        rng = np.random.default_rng(case)
        mu = rng.uniform(-2.0, 2.0, size=(2, 3))
        logvar = rng.uniform(-2.0, 1.5, size=(2, 3))
        numeric = 0.0
        q = stats.norm(0.0, 1.0)
        for m, lv in zip(mu.ravel(), logvar.ravel()):
            p = stats.norm(m, math.exp(0.5 * lv))
            value, _ = integrate.quad(lambda t: p.pdf(t) * (p.logpdf(t) - q.logpdf(t)), -np.inf, np.inf)
            numeric += value
        assert kl_to_standard_normal(mu, logvar) == pytest.approx(numeric / mu.shape[0], rel=1e-6)

    def test_kl_is_a_batch_mean(self):
        mu = np.array([[1.0], [0.0]])
        assert kl_to_standard_normal(mu, np.zeros_like(mu)) == pytest.approx(0.25)

    def test_reconstruction_is_mean_squared_error(self):
        x = np.zeros((2, 2))
        xhat = np.array([[1.0, 1.0], [0.0, 2.0]])
        assert reconstruction_loss(x, xhat) == pytest.approx(3.0)

    def test_reconstruction_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reconstruction_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_reparameterize(self):
        z = reparameterize([[1.0, -1.0]], [[0.0, math.log(4.0)]], [[0.5, 0.5]])
        np.testing.assert_allclose(z, [[1.5, 0.0]])

    def test_reparameterize_sample_moments(self):
        mu = np.array([0.3, -1.2])
        logvar = np.log([0.25, 2.0])
        eps = np.random.default_rng(4).standard_normal((200_000, 2))
        z = reparameterize(np.broadcast_to(mu, eps.shape), np.broadcast_to(logvar, eps.shape), eps)
        np.testing.assert_allclose(z.mean(axis=0), mu, atol=0.02)
        np.testing.assert_allclose(z.var(axis=0), np.exp(logvar), rtol=0.02)


class TestAlignment:
    def test_range(self, rng):
        ctx = _context()
        value = alignment_loss(rng.standard_normal((10, 2)), rng.integers(0, 3, size=10), ctx)
        assert 0.0 <= value <= 2.0

    def test_zero_when_parallel_to_manifold(self):
        predefined = np.array([[1.0, 0.0], [0.0, 2.0]])
        z = np.array([[3.0], [-1.0]])
        manifold = (2.0 * np.hstack([predefined, z])).T
        ctx = AlignmentContext(predefined, manifold, ("a", "b"))
        assert alignment_loss(z, ["a", "b"], ctx) == pytest.approx(0.0, abs=1e-12)
        assert alignment_loss(z, [0, 1], ctx) == pytest.approx(0.0, abs=1e-12)

    def test_zero_norm_is_an_error(self):
        ctx = AlignmentContext(np.zeros((2, 1)), np.ones((2, 2)), ("a", "b"))
        with pytest.raises(ValidationError):
            alignment_loss(np.zeros((1, 1)), [0], ctx)

    def test_unknown_label(self):
        with pytest.raises(ValidationError):
            alignment_loss(np.ones((1, 2)), ["zz"], _context())

    def test_latent_width_must_match(self):
        with pytest.raises(ShapeError):
            alignment_loss(np.ones((1, 3)), [0], _context(latent_dim=2))

    def test_invariant_to_rescaling_manifold_points(self, rng):
        ctx = _context(latent_dim=3, classes=4)
        z = rng.standard_normal((12, 3))
        labels = rng.integers(0, 4, size=12)
        scales = rng.uniform(0.1, 10.0, size=4)
        rescaled = AlignmentContext(ctx.predefined, ctx.manifold * scales, ctx.class_ids)
        assert alignment_loss(z, labels, rescaled) == pytest.approx(alignment_loss(z, labels, ctx), abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("variant", ["ae", "vae"])
    def test_unified_loss_matches_finite_differences(self, variant):
        report = check_expansion_gradients(variant, seed=3)
        assert report.passed, report

    def test_alignment_only_gradients(self):
        report = check_expansion_gradients("ae", seed=5, weights=LossWeights(alpha=0.0, beta=1.0))
        assert report.passed, report

    def test_vae_needs_noise(self):
        ctx = _context()
        model = init_expansion_model(4, 2, "vae", (3,), seed=0)
        with pytest.raises(ValidationError):
            unified_loss((np.ones((2, 4)), [0, 1]), model, ctx, LossWeights())

    def test_total_combines_components(self, rng):
        ctx = _context()
        model = init_expansion_model(4, 2, "vae", (3,), seed=1)
        x = rng.standard_normal((3, 4))
        result = unified_loss((x, [0, 1, 2]), model, ctx, LossWeights(2.0, 5.0), rng.standard_normal((3, 2)))
        expected = 2.0 * (result.reconstruction + result.kl) + 5.0 * result.alignment
        assert result.total == pytest.approx(expected)

    def test_linear_in_the_weights(self, rng):
        ctx = _context()
        model = init_expansion_model(4, 2, "vae", (3,), seed=2)
        batch = (rng.standard_normal((5, 4)), [0, 1, 2, 0, 1])
        eps = rng.standard_normal((5, 2))
        first = unified_loss(batch, model, ctx, LossWeights(1.5, 0.5), eps)
        second = unified_loss(batch, model, ctx, LossWeights(2.0, 3.0), eps)
        combined = unified_loss(batch, model, ctx, LossWeights(3.5, 3.5), eps)
        assert combined.total == pytest.approx(first.total + second.total, rel=1e-12)
        for net_a, net_b, net_sum in zip(first.grads, second.grads, combined.grads):
            for a, b, both in zip(net_a.blocks(), net_b.blocks(), net_sum.blocks()):
                np.testing.assert_allclose(both, a + b, rtol=1e-10, atol=1e-12)


class TestLatentDim:
    @pytest.mark.parametrize(
        "n, d, rate, expected",
        [(85, 1024, 0.6, 51), (5, 100, 0.5, 3), (10, 12, 0.6, 1), (3, 4, 0.6, 0), (4, 50, 0.0, 0), (8, 64, 1e300, 55)],
    )
    def test_default_latent_dim(self, n, d, rate, expected):
        assert default_latent_dim(n, d, rate) == expected

    def test_weights_validation(self):
        with pytest.raises(ValidationError):
            LossWeights(0.0, 0.0)
        with pytest.raises(ValidationError):
            LossWeights(-1.0, 1.0)


class TestTraining:
    def _config(self, **overrides):
        settings = dict(latent_dim=2, variant="vae", hidden_units=(6,), epochs=3, batch_size=5, seed=11)
        settings.update(overrides)
        return ExpansionConfig(**settings)

    def test_same_seed_same_model(self, prepared):
        data, ctx = prepared
        model_a, trace_a = train_expansion(data.train, ctx, self._config())
        model_b, trace_b = train_expansion(data.train, ctx, self._config())
        assert trace_a.rows() == trace_b.rows()
        for a, b in zip(model_a.encoder.blocks(), model_b.encoder.blocks()):
            np.testing.assert_array_equal(a, b)

    def test_zero_epochs_returns_initial_model(self, prepared):
        data, ctx = prepared
        config = self._config(epochs=0)
        model, trace = train_expansion(data.train, ctx, config)
        init_seq, _, _ = training_streams(config.seed)
        expected = init_expansion_model(data.train.dim, 2, "vae", (6,), init_seq)
        assert len(trace) == 0
        for a, b in zip(model.decoder.blocks(), expected.decoder.blocks()):
            np.testing.assert_array_equal(a, b)

    def test_trace_records_every_epoch(self, prepared):
        data, ctx = prepared
        _, trace = train_expansion(data.train, ctx, self._config(variant="ae", epochs=4))
        assert trace.epoch == [1, 2, 3, 4]
        assert all(kl == 0.0 for kl in trace.kl)

    def test_encode_uses_the_mean(self, prepared):
        data, ctx = prepared
        model, _ = train_expansion(data.train, ctx, self._config(epochs=1))
        z = encode_examples(model, data.train.features)
        assert z.shape == (data.train.n_examples, 2)
        np.testing.assert_array_equal(z, encode_examples(model, data.train.features))

    def test_full_pass_losses(self, prepared):
        data, ctx = prepared
        model, _ = train_expansion(data.train, ctx, self._config(epochs=1))
        losses = evaluate_expansion_losses(model, data.train, ctx)
        assert set(losses) == {"reconstruction", "kl", "alignment"}
        assert 0.0 <= losses["alignment"] <= 2.0

    def test_bad_batch_size(self, prepared):
        data, ctx = prepared
        with pytest.raises(ValidationError):
            train_expansion(data.train, ctx, self._config(batch_size=0))

    def test_zero_alignment_weight_trains_a_plain_autoencoder(self, prepared):
        data, ctx = prepared
        config = self._config(variant="ae", epochs=4, weights=LossWeights(alpha=1.0, beta=0.0))
        _, trace = train_expansion(data.train, ctx, config)

        init_seq, shuffle_rng, _ = training_streams(config.seed)
        model = init_expansion_model(data.train.dim, 2, "ae", (6,), init_seq)
        encoder, decoder = model.encoder, model.decoder
        state = init_optimizer((encoder, decoder))
        x_all = data.train.features
        count = x_all.shape[0]
        expected = []
        for _ in range(config.epochs):
            order = shuffle_rng.permutation(count)
            total = 0.0
            for start in range(0, count, config.batch_size):
                x = x_all[order[start:start + config.batch_size]]
                enc_acts = forward(encoder, x)
                dec_acts = forward(decoder, enc_acts[-1])
                residual = dec_acts[-1] - x
                total += np.sum(residual ** 2)
                dec_grads = backward(decoder, dec_acts, 2.0 * residual / x.shape[0])
                enc_grads = backward(encoder, enc_acts, dec_grads.input_grad)
                (encoder, decoder), state = optimizer_step(state, (encoder, decoder), (enc_grads, dec_grads))
            expected.append(total / count)

        np.testing.assert_allclose(trace.reconstruction, expected, rtol=1e-10)
        np.testing.assert_allclose(trace.total, expected, rtol=1e-10)


@pytest.mark.slow
def test_alignment_loss_halves_on_the_default_benchmark(tmp_path):
    initial, final = [], []
    config = load_config(overrides={"output_dir": str(tmp_path), "cache": False})
    for seed in (1, 2, 3, 4, 5):
        data = load_data(config, seed)
        k = config.validate_against(config.synthetic_spec(seed).dims)
        ctx = build_context(data, k, config.register_manifold)
        expansion = config.expansion_config(seed, k)
        start = init_expansion_model(
            data.train.dim, k, expansion.variant, expansion.hidden_units, training_streams(seed)[0]
        )
        initial.append(evaluate_expansion_losses(start, data.train, ctx)["alignment"])
        model, _ = train_expansion(data.train, ctx, expansion)
        final.append(evaluate_expansion_losses(model, data.train, ctx)["alignment"])
    assert np.mean(final) < 0.5 * np.mean(initial)
