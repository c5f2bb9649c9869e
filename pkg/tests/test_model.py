"""Whole-flow checks: densities, sampling round trips, invariances,
checkpointing, and the numerical-Jacobian change-of-variables oracle."""

import math

import numpy as np
import pytest

from profiti import autodiff as ad
from profiti.data import Observation, Query, SeriesInstance
from profiti.encoder import EncoderConfig
from profiti.errors import ConfigError, ValidationError
from profiti.model import ModelConfig, ProfitiModel, build_variant

LN2 = math.log(2.0)


def small_config(**overrides):
    encoder = EncoderConfig(dim=12, n_heads=2, n_layers=1, time_dim=5,
                            channel_dim=4, value_dim=3)
    defaults = dict(encoder=encoder, n_blocks=2)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def make_instance(n_queries=3, n_channels=2, n_obs=5, seed=0, answers=None):
    rng = np.random.default_rng(seed)
    obs = [
        Observation(float(t), int(rng.integers(0, n_channels)), float(rng.normal()))
        for t in np.sort(rng.uniform(0, 2, n_obs))
    ]
    qry = [Query(float(2.1 + 0.2 * k), int(k % n_channels)) for k in range(n_queries)]
    if answers is None:
        answers = rng.normal(size=n_queries)
    return SeriesInstance("m", n_channels, obs, qry, np.asarray(answers, dtype=float))


def build_model(config=None, seed=0, n_channels=2):
    return ProfitiModel.build(config or small_config(), n_channels, seed=seed)


def _zero_attention_and_nets(model):
    """Push the flow to its closed-form corner: zero scores, identity EL."""
    for block in model.blocks:
        if block.attention is not None:
            block.attention.wq.data = np.zeros_like(block.attention.wq.data)
            block.attention.wk.data = np.zeros_like(block.attention.wk.data)
    # EL nets and the initial shift already start at the identity


class TestDensityClosedForms:
    def test_identity_like_init_composes_scalar_layers(self):
        eps = 1e-5
        config = small_config(n_blocks=2)
        model = build_model(config, seed=1)
        _zero_attention_and_nets(model)
        inst = make_instance(n_queries=3, seed=2)
        result = model.density(inst)

        # independent composition of the scalar closed forms
        from profiti.shiesh import shiesh, shiesh_deriv
        v = np.sort(np.asarray(inst.answers))  # elementwise; order irrelevant
        logdet = 0.0
        for _ in range(config.n_blocks):
            v = (LN2 + eps) * v
            logdet += 3 * math.log(LN2 + eps)
            logdet += float(np.sum(np.log(shiesh_deriv(v))))
            v = shiesh(v)
        expected = -0.5 * np.sum(v * v) - 1.5 * math.log(2 * math.pi) + logdet
        assert result.log_density == pytest.approx(expected, rel=1e-12)

    def test_standard_normal_at_origin_for_identity_transform(self):
        # scores zero, shiesh off, EL identity, one block of pure (ln2+eps) scaling
        # removed too by disabling attention: the flow is then exactly identity
        config = small_config(use_sita=False, use_shiesh=False, n_blocks=1)
        model = build_model(config, seed=3)
        inst = make_instance(n_queries=2, seed=4, answers=[0.0, 0.0])
        result = model.density(inst)
        assert result.log_density == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
        assert model.njnll(inst) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_logdet_consistency_invariant(self):
        model = build_model(seed=5)
        inst = make_instance(n_queries=4, seed=6)
        result = model.density(inst)
        base = -0.5 * np.sum(result.z ** 2) - 2.0 * math.log(2 * math.pi)
        assert result.log_density == pytest.approx(
            base + sum(result.per_layer_logdets), rel=1e-12
        )


class TestChangeOfVariables:
    @pytest.mark.parametrize("kind", [None, "reg", "itrans"])
    def test_accumulated_logdet_matches_numerical_jacobian(self, kind):
        config = small_config(n_blocks=2, attn_kind=kind)
        model = build_model(config, seed=7)
        for k in (1, 2, 4):
            inst = make_instance(n_queries=k, seed=10 + k)
            result = model.density(inst)

            def z_of(y):
                probe = SeriesInstance(inst.series_id, inst.n_channels,
                                       inst.observations, inst.queries, y)
                return model.density(probe).z

            step = 1e-5
            jac = np.empty((k, k))
            y0 = np.asarray(inst.answers, dtype=float)
            for j in range(k):
                up, down = y0.copy(), y0.copy()
                up[j] += step
                down[j] -= step
                jac[:, j] = (z_of(up) - z_of(down)) / (2 * step)
            expected = np.linalg.slogdet(jac)[1]
            accumulated = sum(result.per_layer_logdets)
            assert accumulated == pytest.approx(expected, rel=1e-4, abs=1e-6)


class TestSampling:
    def test_roundtrip_recovers_latent(self):
        model = build_model(seed=8)
        inst = make_instance(n_queries=4, seed=9)
        rng = np.random.default_rng(11)
        n = 20
        samples = model.sample(inst, n, np.random.default_rng(11))
        # regenerate the same latents the sampler consumed
        latents = np.stack([rng.standard_normal(4) for _ in range(n)])
        for s in range(n):
            probe = SeriesInstance(inst.series_id, inst.n_channels,
                                   inst.observations, inst.queries, samples[s])
            np.testing.assert_allclose(model.density(probe).z, latents[s], atol=1e-6)

    def test_seeded_sampling_deterministic(self):
        model = build_model(seed=12)
        inst = make_instance(seed=13)
        a = model.sample(inst, 5, np.random.default_rng(3))
        b = model.sample(inst, 5, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_identity_init_samples_match_affine_gaussian(self):
        # with zeroed scores each coordinate is an explicit scalar chain, so
        # the sample mean must approach the push-forward of 0 (the mode)
        config = small_config(n_blocks=1)
        model = build_model(config, seed=14)
        _zero_attention_and_nets(model)
        inst = make_instance(n_queries=2, seed=15)
        n = 4000
        samples = model.sample(inst, n, np.random.default_rng(16))
        from profiti.shiesh import shiesh_inv
        # invert the scalar chain: y = shiesh^-1(z) / (ln2 + eps)
        want_std = np.std(shiesh_inv(np.random.default_rng(17).standard_normal(200_000))
                          / (LN2 + 1e-5))
        np.testing.assert_allclose(samples.mean(axis=0), 0.0, atol=4 * want_std / np.sqrt(n))
        np.testing.assert_allclose(samples.std(axis=0), want_std, rtol=0.1)


class TestSamplingDensityConsistency:
    def test_gaussian_variant_sample_nll_matches_analytic_entropy(self):
        # without attention/activation the conditional is Gaussian per query,
        # so the differential entropy has a closed form; the mean NLL of
        # model samples must match it within Monte-Carlo error
        model = build_model(small_config(use_sita=False, use_shiesh=False, n_blocks=2),
                            seed=40)
        for block in model.blocks:  # move scales/shifts off the identity
            for t in block.el.tensors():
                t.data = 0.5 * np.random.default_rng(41).normal(size=t.data.shape)
        inst = make_instance(n_queries=3, seed=42)
        prepared = model.prepare(inst)
        # per coordinate the y -> z map is z = a y + b, so y has scale 1/a
        a = np.ones(3)
        for i in range(model.config.n_blocks):
            a = a * prepared.scales[i].data
        entropy = np.sum(0.5 * np.log(2 * math.pi * math.e) - np.log(a))

        n = 4000
        samples = model.sample(inst, n, np.random.default_rng(43))
        nlls = np.empty(n)
        for s in range(n):
            probe = SeriesInstance(inst.series_id, inst.n_channels,
                                   inst.observations, inst.queries, samples[s])
            nlls[s] = -model.log_density_graph(probe, prepared).data
        se = nlls.std() / math.sqrt(n)
        assert abs(nlls.mean() - entropy) < 3 * se

    def test_full_model_sample_nll_self_consistent_across_batches(self):
        model = build_model(seed=44)
        inst = make_instance(n_queries=3, seed=45)
        prepared = model.prepare(inst)

        def mean_nll(seed, n=3000):
            samples = model.sample(inst, n, np.random.default_rng(seed))
            values = np.empty(n)
            for s in range(n):
                probe = SeriesInstance(inst.series_id, inst.n_channels,
                                       inst.observations, inst.queries, samples[s])
                values[s] = -model.log_density_graph(probe, prepared).data
            return values.mean(), values.std() / math.sqrt(n)

        a, se_a = mean_nll(46)
        b, se_b = mean_nll(47)
        assert abs(a - b) < 3 * math.hypot(se_a, se_b)


class TestPermutationInvariance:
    @pytest.mark.parametrize("kind", [None, "reg", "itrans"])
    def test_joint_density_invariant(self, kind):
        model = build_model(small_config(attn_kind=kind), seed=17)
        inst = make_instance(n_queries=5, seed=18)
        base = model.density(inst).log_density
        rng = np.random.default_rng(19)
        for _ in range(10):
            perm = rng.permutation(5)
            permuted = SeriesInstance(
                inst.series_id, inst.n_channels, inst.observations,
                [inst.queries[i] for i in perm], np.asarray(inst.answers)[perm],
            )
            assert abs(model.density(permuted).log_density - base) < 1e-8


class TestMarginals:
    def test_factorized_model_marginals_equal_joint(self):
        model = build_model(small_config(use_sita=False), seed=20)
        inst = make_instance(n_queries=3, seed=21)
        joint = model.density(inst).log_density
        marginals = model.marginal_log_densities(inst)
        assert joint == pytest.approx(np.sum(marginals), rel=1e-12)

    def test_diagonal_readout_differs_from_joint_generically(self):
        model = build_model(seed=22)
        for block in model.blocks:  # strengthen interactions
            block.attention.wq.data *= 5.0
            block.attention.wk.data *= 5.0
        inst = make_instance(n_queries=4, seed=23)
        joint = model.density(inst).log_density
        assert abs(joint - np.sum(model.marginal_log_densities(inst))) > 1e-6

    def test_single_query_marginal_equals_joint(self):
        model = build_model(seed=24)
        inst = make_instance(n_queries=1, seed=25)
        assert model.marginal_log_densities(inst)[0] == model.density(inst).log_density

    def test_marginal_nll_index_check(self):
        model = build_model(seed=26)
        inst = make_instance(n_queries=2, seed=27)
        with pytest.raises(ValidationError):
            model.marginal_nll(inst, 5)

    @pytest.mark.filterwarnings("ignore:sort criterion maps")
    def test_duplicated_queries_leave_njnll_unchanged_when_factorized(self):
        model = build_model(small_config(use_sita=False), seed=28)
        inst = make_instance(n_queries=3, seed=29)
        doubled = SeriesInstance(
            inst.series_id, inst.n_channels, inst.observations,
            inst.queries + inst.queries,
            np.concatenate([inst.answers, inst.answers]),
        )
        assert model.njnll(doubled) == pytest.approx(model.njnll(inst), rel=1e-12)


class TestVariants:
    def test_contradictory_flags_rejected(self):
        with pytest.raises(ConfigError):
            small_config(use_sita=False, attn_kind="tri").validate()

    def test_variant_builder(self):
        base = small_config()
        gaussian = build_variant(base, use_sita=False, use_shiesh=False)
        assert not gaussian.use_sita and not gaussian.use_shiesh
        dense = build_variant(base, attn_kind="reg")
        assert dense.resolved_attn_kind() == "reg"
        assert base.resolved_attn_kind() == "tri"

    def test_gaussian_variant_is_affine(self):
        # without attention and activation every conditional is Gaussian:
        # log density is quadratic in y, so third differences vanish
        model = build_model(small_config(use_sita=False, use_shiesh=False), seed=30)
        inst = make_instance(n_queries=1, seed=31)

        def logp(y):
            probe = SeriesInstance(inst.series_id, inst.n_channels,
                                   inst.observations, inst.queries, np.array([y]))
            return model.density(probe).log_density

        ys = np.linspace(-2, 2, 9)
        values = np.array([logp(y) for y in ys])
        third = np.diff(values, n=3)
        np.testing.assert_allclose(third, 0.0, atol=1e-8)


class TestGradients:
    def test_njnll_gradient_matches_finite_differences(self):
        model = build_model(small_config(n_blocks=2), seed=32)
        inst = make_instance(n_queries=3, seed=33)
        loss = model.njnll_graph(inst)
        grads = ad.backward(loss, accumulate=False)
        rng = np.random.default_rng(34)
        step = 1e-5
        for name, p in model.named_parameters():
            g = grads.get(p)
            assert g is not None, f"no gradient reached {name}"
            flat_idx = rng.integers(0, p.data.size, size=min(3, p.data.size))
            for idx in np.unique(flat_idx):
                orig = p.data.reshape(-1)[idx]
                p.data.reshape(-1)[idx] = orig + step
                up = model.njnll(inst)
                p.data.reshape(-1)[idx] = orig - step
                down = model.njnll(inst)
                p.data.reshape(-1)[idx] = orig
                numeric = (up - down) / (2 * step)
                analytic = g.reshape(-1)[idx]
                scale = max(abs(numeric), abs(analytic), 1.0)
                assert abs(numeric - analytic) / scale < 1e-3, (
                    f"{name}[{idx}]: analytic {analytic:.6e} vs numeric {numeric:.6e}"
                )


class TestNumericDiagnostics:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_flow_values_name_the_block(self):
        # overflowing scores make the block-1 matrix non-finite; the model
        # reports which block broke (debug checks off: exercise the
        # model-level diagnostic rather than the per-op one)
        from profiti import autodiff as ad_engine
        from profiti.errors import NumericError

        model = build_model(seed=50)
        model.blocks[1].attention.wq.data = np.full(
            model.blocks[1].attention.wq.data.shape, 1e200
        )
        model.blocks[1].attention.wk.data = np.full(
            model.blocks[1].attention.wk.data.shape, 1e200
        )
        inst = make_instance(seed=51)
        previous = ad_engine.set_debug_checks(False)
        try:
            with pytest.raises(NumericError, match="block 1"):
                model.density(inst)
        finally:
            ad_engine.set_debug_checks(previous)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_training_aborts_on_nonfinite_loss(self, tmp_path):
        # an absurd learning rate blows the parameters up; the resulting
        # non-finite loss must abort the run with a numeric error
        from profiti.errors import NumericError
        from profiti.synthetic import SyntheticConfig
        from profiti.training import TrainConfig, train

        config = TrainConfig(
            model=small_config(n_blocks=1),
            synthetic=SyntheticConfig(n_series=30, n_channels=2, obs_rate=4.0,
                                      n_query_times=1, missing_fraction=0.2),
            epochs=3, batch_size=8, lr=1e160, seed=1, n_eval_samples=8,
        )
        with pytest.raises(NumericError):
            train(config, tmp_path / "run")


class TestCheckpoint:
    def test_roundtrip_preserves_densities_exactly(self, tmp_path):
        model = build_model(seed=35)
        model.norm_stats = (np.array([0.3, -0.1]), np.array([1.2, 0.8]))
        inst = make_instance(seed=36)
        before = model.density(inst).log_density
        model.save(tmp_path / "ckpt")
        restored = ProfitiModel.load(tmp_path / "ckpt")
        assert restored.density(inst).log_density == before

    def test_schema_version_mismatch_rejected(self, tmp_path):
        model = build_model(seed=37)
        model.save(tmp_path / "ckpt")
        import json
        manifest_path = tmp_path / "ckpt" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["schema_version"] = 99
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(ConfigError, match="schema"):
            ProfitiModel.load(tmp_path / "ckpt")
