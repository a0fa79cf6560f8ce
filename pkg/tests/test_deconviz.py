"""
Tests for top-down reconstruction.
"""

import numpy as np
import pytest

from stochpool.core.kernels.deconviz import (
    AverageSource,
    FeedForwardSource,
    MaxSource,
    RecordedSource,
    UniformSource,
    deconv_layer,
    montage,
    normalized_cross_correlation,
    parse_source,
    reconstruct,
    similarity_statistic,
    to_uint8_image,
    unpool,
)
from stochpool.core.kernels.network import init_params, network_forward
from stochpool.core.kernels.pooling import NONE, PoolingGeometry, SwitchMap, stochastic_pool_forward
from stochpool.core.kernels.tensor import ConvParams, conv2d_backward, conv2d_forward
from stochpool.exceptions import ConsistencyError, ContractViolationError
from stochpool.models.network_spec import toy_network
from stochpool.models.pooling_modes import Phase


@pytest.fixture
def toy_trace(toy_spec, rng):
    params = init_params(toy_spec, np.random.default_rng(2), filter_std=0.5)
    image = rng.standard_normal((1, 1, 8, 8))
    trace = network_forward(toy_spec, params, image, Phase.TRAIN, np.random.default_rng(3))
    return params, trace


class TestUnpool:
    """Test unpool."""

    def test_selected_values_return_home(self, rng):
        x = np.abs(rng.standard_normal((2, 2, 6, 6)))
        geometry = PoolingGeometry((2, 2), 2, (6, 6))
        pooled, switches = stochastic_pool_forward(x, geometry, np.random.default_rng(0))
        restored = unpool(pooled, switches, geometry)
        planes = restored.reshape(2, 2, -1)
        flat = switches.indices.reshape(2, 2, -1)
        np.testing.assert_array_equal(np.take_along_axis(planes, flat, axis=-1),
                                      np.take_along_axis(x.reshape(2, 2, -1), flat, axis=-1))
        assert np.count_nonzero(restored) == np.count_nonzero(pooled)

    def test_mass_placement(self, rng):
        x = np.abs(rng.standard_normal((2, 3, 8, 8)))
        x[x < 0.8] = 0.0
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        pooled, switches = stochastic_pool_forward(x, geometry, np.random.default_rng(1))
        live = switches.indices != NONE
        assert unpool(pooled, switches, geometry).sum() == pytest.approx(pooled[live].sum(), abs=1e-12)

    def test_all_none(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        switches = SwitchMap(np.full((1, 1, 2, 2), NONE), geometry)
        assert not unpool(np.ones((1, 1, 2, 2)), switches, geometry).any()


class TestDeconvLayer:
    """Test the transposed-filter pass."""

    def test_adjoint_identity(self):
        gen = np.random.default_rng(100)
        for _ in range(100):
            c, m, k = gen.integers(1, 4), gen.integers(1, 4), int(gen.choice([1, 3, 5]))
            stride, padding = int(gen.integers(1, 3)), int(gen.integers(0, 3))
            h, w = int(gen.integers(k, 11)), int(gen.integers(k, 11))
            params = ConvParams(gen.standard_normal((m, c, k, k)), np.zeros(m), stride, padding)
            x = gen.standard_normal((2, c, h, w))
            y = gen.standard_normal(conv2d_forward(x, params).shape)
            lhs = np.sum(conv2d_forward(x, params) * y)
            rhs = np.sum(x * deconv_layer(y, params, (h, w)))
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_bias_excluded(self, rng):
        params = ConvParams(rng.standard_normal((2, 1, 3, 3)), np.full(2, 100.0))
        assert not deconv_layer(np.zeros((1, 2, 4, 4)), params, (6, 6)).any()

    def test_delta_filter_re_embeds(self, rng):
        filters = np.zeros((1, 1, 5, 5))
        filters[0, 0, 2, 2] = 1.0
        y = rng.standard_normal((1, 1, 4, 4))
        out = deconv_layer(y, ConvParams(filters, np.zeros(1)), (8, 8))
        expected = np.zeros((1, 1, 8, 8))
        expected[:, :, 2:6, 2:6] = y
        np.testing.assert_array_equal(out, expected)

    def test_equals_input_gradient(self, rng):
        x = rng.standard_normal((1, 2, 7, 7))
        params = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
        y = rng.standard_normal((1, 3, 5, 5))
        np.testing.assert_array_equal(deconv_layer(y, params, (7, 7)), conv2d_backward(x, params, y)[0])


class TestReconstruct:
    """Test reconstruct."""

    def test_recorded_support_set(self, toy_spec, toy_trace):
        """Nonzero exactly under the 3x3 filter footprint of every live switch."""
        params, trace = toy_trace
        recon = reconstruct(toy_spec, params, trace, 2, {2: RecordedSource()})
        assert recon.shape == (1, 1, 8, 8)
        expected = np.zeros((8, 8), dtype=bool)
        switches = trace.switches[2].indices[0]
        for flat in switches[switches != NONE]:
            r, c = divmod(int(flat), 6)
            expected[r:r + 3, c:c + 3] = True
        np.testing.assert_array_equal(recon[0, 0] != 0, expected)

    def test_recorded_is_deterministic(self, toy_spec, toy_trace):
        params, trace = toy_trace
        a = reconstruct(toy_spec, params, trace, 2, {2: RecordedSource()})
        b = reconstruct(toy_spec, params, trace, 2, {2: RecordedSource(trace.switches[2])})
        np.testing.assert_array_equal(a, b)

    def test_seeded_sources_reproduce(self, toy_spec, toy_trace):
        params, trace = toy_trace
        for source_cls in (UniformSource, FeedForwardSource):
            a = reconstruct(toy_spec, params, trace, 2, {2: source_cls(seed=4)})
            b = reconstruct(toy_spec, params, trace, 2, {2: source_cls(seed=4)})
            np.testing.assert_array_equal(a, b)
        assert not np.array_equal(
            reconstruct(toy_spec, params, trace, 2, {2: UniformSource(seed=4, sample=0)}),
            reconstruct(toy_spec, params, trace, 2, {2: UniformSource(seed=4, sample=1)}),
        )

    def test_feedforward_resamples_agree_more_than_uniform(self, toy_spec, toy_trace):
        params, trace = toy_trace
        ff = [reconstruct(toy_spec, params, trace, 2, {2: FeedForwardSource(seed=0, sample=s)}).ravel()
              for s in range(16)]
        un = [reconstruct(toy_spec, params, trace, 2, {2: UniformSource(seed=0, sample=s)}).ravel()
              for s in range(16)]
        stats = similarity_statistic(ff, un)
        assert stats["ff_ff"] > stats["ff_un"]
        assert len({a.tobytes() for a in ff}) > 1

    def test_max_and_average_sources(self, toy_spec, toy_trace):
        params, trace = toy_trace
        by_max = reconstruct(toy_spec, params, trace, 2, {2: MaxSource()})
        by_avg = reconstruct(toy_spec, params, trace, 2, {2: AverageSource()})
        assert by_max.shape == by_avg.shape == (1, 1, 8, 8)
        assert np.count_nonzero(by_avg) >= np.count_nonzero(by_max)

    def test_rectify_clamps_negative_features(self, toy_spec, toy_trace):
        params, trace = toy_trace
        feature = -np.ones_like(trace.outputs[2])
        sources = {2: MaxSource()}
        assert not reconstruct(toy_spec, params, trace, 2, sources, feature=feature).any()
        assert reconstruct(toy_spec, params, trace, 2, sources, rectify=False, feature=feature).any()

    def test_from_conv_layer_skips_pooling(self, toy_spec, toy_trace):
        params, trace = toy_trace
        recon = reconstruct(toy_spec, params, trace, 0, {})
        conv = ConvParams(params["conv1.filters"], params["conv1.bias"])
        np.testing.assert_allclose(recon, deconv_layer(trace.outputs[0], conv, (8, 8)))

    def test_missing_source(self, toy_spec, toy_trace):
        params, trace = toy_trace
        with pytest.raises(ContractViolationError):
            reconstruct(toy_spec, params, trace, 2, {})

    def test_recorded_needs_switches(self, toy_spec, toy_trace):
        params, _ = toy_trace
        trace = network_forward(toy_spec, params, np.ones((1, 1, 8, 8)), Phase.TEST)
        with pytest.raises(ConsistencyError):
            reconstruct(toy_spec, params, trace, 2, {2: RecordedSource()})

    def test_stale_trace(self, toy_spec, toy_trace):
        params, trace = toy_trace
        other = toy_network(maps=3, response_norm=True)
        with pytest.raises(ConsistencyError):
            reconstruct(other, params, trace, 2, {2: MaxSource()})

    def test_softmax_layer_rejected(self, toy_spec, toy_trace):
        params, trace = toy_trace
        with pytest.raises(ValueError):
            reconstruct(toy_spec, params, trace, 3, {2: MaxSource()})


class TestSources:
    @pytest.mark.parametrize("name,cls", [("rec", RecordedSource), ("ff", FeedForwardSource),
                                          ("UN", UniformSource), ("max", MaxSource), ("avg", AverageSource)])
    def test_parse(self, name, cls):
        assert isinstance(parse_source(name, seed=1), cls)

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            parse_source("random")


class TestImages:
    """Test similarity and image helpers."""

    def test_correlation(self, rng):
        a = rng.standard_normal(50)
        assert normalized_cross_correlation(a, 2 * a + 1) == pytest.approx(1.0)
        assert normalized_cross_correlation(a, -a) == pytest.approx(-1.0)
        assert normalized_cross_correlation(a, np.ones(50)) == 0.0

    def test_identical_samples(self, rng):
        a = rng.standard_normal(20)
        stats = similarity_statistic([a, a, a], [rng.standard_normal(20)])
        assert stats["ff_ff"] == pytest.approx(1.0)

    def test_to_uint8(self):
        image = to_uint8_image(np.array([[[-1.0, 0.0, 1.0]]]))
        np.testing.assert_array_equal(image, [[[0, 128, 255]]])
        assert not to_uint8_image(np.full((1, 2, 2), 3.0)).any()

    def test_montage(self):
        tiles = [np.full((1, 3, 3), k * 10, dtype=np.uint8) for k in range(4)]
        out = montage(tiles, 2)
        assert out.shape == (1, 9, 9)
        assert out[0, 5, 1] == 20 and out[0, 1, 5] == 10
        assert out[0, 0].max() == 0
