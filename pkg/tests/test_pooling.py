"""
Tests for pooling regions, the pooling modes and their backward passes.
"""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from stochpool.core.kernels.pooling import (
    NONE,
    PoolingGeometry,
    SwitchMap,
    avg_pool_backward,
    avg_pool_forward,
    enumerate_regions,
    max_pool_forward,
    model_count,
    pool_backward,
    pool_forward,
    prob_weight_backward,
    prob_weight_forward,
    region_probabilities,
    sample_switches,
    stochastic_pool_forward,
    switch_pool_backward,
)
from stochpool.exceptions import ConsistencyError, ContractViolationError, DimensionError
from stochpool.models.pooling_modes import AVERAGE, MAX, PROB_WEIGHT, STOCHASTIC, PoolingMode
from tests.helpers import numerical_gradient, relative_error


def single_region(values, shape=(2, 2)):
    """One region covering a whole (1, 1, h, w) plane."""
    x = np.asarray(values, dtype=np.float64).reshape(1, 1, *shape)
    return x, PoolingGeometry(shape, 1, shape)


def brute_force_regions(h, w, k, s):
    """Scan windows directly: step by s, add one truncated window if the border is missed."""
    def starts(dim):
        out = list(range(0, dim - k + 1, s))
        if out[-1] + k < dim:
            out.append(out[-1] + s)
        return out

    regions = []
    for r0 in starts(h):
        for c0 in starts(w):
            regions.append([r * w + c for r in range(r0, min(r0 + k, h)) for c in range(c0, min(c0 + k, w))])
    return regions


class TestEnumerateRegions:
    """Test region layout."""

    def test_exact_tiling(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        regions = enumerate_regions(geometry)
        assert len(regions) == 4
        assert all(len(r) == 4 for r in regions)
        assert sorted(np.concatenate(regions).tolist()) == list(range(16))

    def test_single_window(self):
        regions = enumerate_regions(PoolingGeometry((3, 3), 2, (3, 3)))
        assert len(regions) == 1
        assert regions[0].tolist() == list(range(9))

    def test_border_regions_shrink(self):
        """8x8 with 3x3 stride 2: four windows per axis, the last one two wide."""
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        assert geometry.output_shape == (4, 4)
        regions = enumerate_regions(geometry)
        assert regions[-1].tolist() == [54, 55, 62, 63]
        # neighbours overlap by one element
        assert set(regions[0]) & set(regions[1]) == {2, 10, 18}

    @pytest.mark.parametrize("h,w,k,s", [(8, 8, 3, 2), (28, 28, 3, 2), (7, 5, 2, 2), (9, 9, 4, 3), (6, 6, 2, 1)])
    def test_matches_brute_force(self, h, w, k, s):
        regions = enumerate_regions(PoolingGeometry((k, k), s, (h, w)))
        assert [r.tolist() for r in regions] == brute_force_regions(h, w, k, s)

    def test_every_element_covered(self):
        regions = enumerate_regions(PoolingGeometry((3, 3), 2, (12, 12)))
        assert set(np.concatenate(regions).tolist()) == set(range(144))

    def test_window_larger_than_input(self):
        with pytest.raises(DimensionError):
            enumerate_regions(PoolingGeometry((5, 5), 2, (4, 4)))


class TestDeterministicPooling:
    """Test average and max pooling."""

    def test_average_region(self):
        x, geometry = single_region([1, 2, 3, 0])
        assert avg_pool_forward(x, geometry)[0, 0, 0, 0] == 1.5

    def test_average_constant(self):
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        out = avg_pool_forward(np.full((2, 3, 8, 8), 4.25), geometry)
        np.testing.assert_allclose(out, 4.25, rtol=0, atol=1e-12)

    def test_average_matches_oracle(self, rng):
        x = rng.standard_normal((2, 2, 8, 8))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        out = avg_pool_forward(x, geometry).reshape(2, 2, -1)
        for j, region in enumerate(brute_force_regions(8, 8, 3, 2)):
            expected = x.reshape(2, 2, -1)[:, :, region].mean(axis=-1)
            np.testing.assert_allclose(out[:, :, j], expected, atol=1e-12)

    def test_max_region(self):
        x, geometry = single_region([1, 2, 3, 0])
        out, switches = max_pool_forward(x, geometry)
        assert out[0, 0, 0, 0] == 3.0
        assert switches.indices[0, 0, 0, 0] == 2

    def test_max_ties_take_first_index(self):
        x, geometry = single_region([0, 0, 0, 0])
        out, switches = max_pool_forward(x, geometry)
        assert out[0, 0, 0, 0] == 0.0
        assert switches.indices[0, 0, 0, 0] == 0

    def test_max_matches_oracle(self, rng):
        x = rng.standard_normal((2, 2, 8, 8))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        out = max_pool_forward(x, geometry)[0].reshape(2, 2, -1)
        for j, region in enumerate(brute_force_regions(8, 8, 3, 2)):
            np.testing.assert_array_equal(out[:, :, j], x.reshape(2, 2, -1)[:, :, region].max(axis=-1))


class TestRegionProbabilities:
    """Test the per-region multinomial."""

    def test_normalizes(self):
        dist = region_probabilities([1, 2, 3, 0])
        np.testing.assert_allclose(dist.probabilities, [1 / 6, 2 / 6, 3 / 6, 0])
        assert not dist.degenerate
        assert abs(dist.probabilities.sum() - 1.0) <= 1e-12

    def test_zero_region_is_degenerate(self):
        assert region_probabilities([0, 0, 0, 0]).degenerate

    def test_single_element(self):
        np.testing.assert_array_equal(region_probabilities([5]).probabilities, [1.0])

    def test_negative_rejected(self):
        with pytest.raises(ContractViolationError):
            region_probabilities([1, -1])


class TestStochasticPooling:
    """Test multinomial sampling of switches."""

    def test_single_nonzero_always_selected(self):
        x = np.tile(np.array([0, 0, 7, 0], dtype=np.float64).reshape(1, 1, 2, 2), (500, 1, 1, 1))
        geometry = PoolingGeometry((2, 2), 1, (2, 2))
        out, switches = stochastic_pool_forward(x, geometry, np.random.default_rng(0))
        assert np.all(out == 7.0)
        assert np.all(switches.indices == 2)

    def test_selection_frequencies(self):
        """60,000 draws from [1, 2, 3, 0] follow (1/6, 2/6, 3/6, 0)."""
        n = 60_000
        x = np.tile(np.array([1, 2, 3, 0], dtype=np.float64).reshape(1, 1, 2, 2), (n, 1, 1, 1))
        geometry = PoolingGeometry((2, 2), 1, (2, 2))
        switches = sample_switches(x, geometry, np.random.default_rng(42))
        counts = np.bincount(switches.indices.ravel(), minlength=4)
        assert counts[3] == 0
        result = stats.chisquare(counts[:3], n * np.array([1 / 6, 2 / 6, 3 / 6]))
        assert result.pvalue > 0.01

    def test_frequencies_across_many_regions(self):
        """10^4 draws on each of 100 random 3x3 regions, pooled chi-square."""
        rng = np.random.default_rng(7)
        draws = 10_000
        geometry = PoolingGeometry((3, 3), 3, (3, 3))
        statistic, dof, worst = 0.0, 0, 1.0
        for region in range(100):
            values = rng.uniform(0.5, 1.5, size=9)
            x = np.tile(values.reshape(1, 1, 3, 3), (draws, 1, 1, 1))
            switches = sample_switches(x, geometry, np.random.default_rng(1000 + region))
            counts = np.bincount(switches.indices.ravel(), minlength=9)
            result = stats.chisquare(counts, draws * values / values.sum())
            statistic += result.statistic
            dof += 8
            worst = min(worst, result.pvalue)
        assert stats.chi2.sf(statistic, dof) > 1e-3
        assert worst > 1e-6

    def test_output_is_an_element_of_the_region(self, rng):
        x = np.abs(rng.standard_normal((4, 3, 8, 8)))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        out, switches = stochastic_pool_forward(x, geometry, np.random.default_rng(3))
        switches.validate()
        gathered = x.reshape(4, 3, -1)
        picked = np.take_along_axis(gathered, switches.indices.reshape(4, 3, -1), axis=-1)
        np.testing.assert_array_equal(out.reshape(4, 3, -1), picked)
        assert np.all(avg_pool_forward(x, geometry) <= max_pool_forward(x, geometry)[0])
        assert np.all(out <= max_pool_forward(x, geometry)[0])

    def test_seeded_draws_are_reproducible(self, rng):
        x = np.abs(rng.standard_normal((3, 2, 8, 8)))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        a_out, a_sw = stochastic_pool_forward(x, geometry, np.random.default_rng(42))
        b_out, b_sw = stochastic_pool_forward(x, geometry, np.random.default_rng(42))
        np.testing.assert_array_equal(a_out, b_out)
        np.testing.assert_array_equal(a_sw.indices, b_sw.indices)

    def test_draw_count_is_fixed(self, rng):
        """One uniform per region, whatever the activations."""
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        for x in (np.zeros((2, 2, 8, 8)), np.abs(rng.standard_normal((2, 2, 8, 8)))):
            gen = np.random.default_rng(5)
            sample_switches(x, geometry, gen)
            reference = np.random.default_rng(5)
            reference.random(2 * 2 * geometry.region_count)
            assert gen.random() == reference.random()

    def test_zero_regions_record_none(self):
        x = np.zeros((1, 1, 4, 4))
        x[0, 0, 0, 0] = 1.0
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        out, switches = stochastic_pool_forward(x, geometry, np.random.default_rng(0))
        assert switches.indices[0, 0, 0, 0] == 0
        assert np.count_nonzero(switches.indices == NONE) == 3
        assert switches.none_mask.tolist() == [[[[False, True], [True, True]]]]
        assert out.sum() == 1.0

    def test_uniform_distribution_ignores_values(self):
        x = np.tile(np.array([0, 0, 7, 0], dtype=np.float64).reshape(1, 1, 2, 2), (20_000, 1, 1, 1))
        geometry = PoolingGeometry((2, 2), 1, (2, 2))
        counts = np.bincount(sample_switches(x, geometry, np.random.default_rng(1), "uniform").indices.ravel(),
                             minlength=4)
        assert stats.chisquare(counts).pvalue > 0.001

    @pytest.mark.parametrize("mode", [STOCHASTIC, PROB_WEIGHT])
    def test_negative_input_rejected(self, mode):
        x = -np.ones((1, 1, 4, 4))
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        with pytest.raises(ContractViolationError):
            pool_forward(x, geometry, mode, rng=np.random.default_rng(0))


class TestExpectation:
    """Probabilistic weighting equals the expected stochastic output."""

    @pytest.mark.parametrize("k", [2, 3, 4, 5])
    def test_matches_enumeration(self, k):
        rng = np.random.default_rng(k)
        x = np.abs(rng.standard_normal((250, 1, k, k)))
        x[x < 0.3] = 0.0
        geometry = PoolingGeometry((k, k), k, (k, k))
        probabilities = np.stack([region_probabilities(x[i]).probabilities for i in range(250)])

        # every outcome of the stochastic kernel, forced one element at a time
        expected = np.zeros(250)
        for element in range(k * k):
            forced = SwitchMap(np.full((250, 1, 1, 1), element), geometry)
            outcome, _ = pool_forward(x, geometry, STOCHASTIC, switches=forced)
            expected += probabilities[:, element] * outcome.ravel()

        np.testing.assert_allclose(prob_weight_forward(x, geometry).ravel(), expected, rtol=0, atol=1e-12)


class TestProbWeight:
    """Test probability-weighted pooling."""

    def test_region_value(self):
        x, geometry = single_region([1, 2, 3, 0])
        assert prob_weight_forward(x, geometry)[0, 0, 0, 0] == pytest.approx(14 / 6, abs=1e-12)

    def test_single_nonzero_passes_through(self):
        x, geometry = single_region([0, 0, 4.5, 0])
        assert prob_weight_forward(x, geometry)[0, 0, 0, 0] == 4.5

    def test_between_average_and_max(self, rng):
        x = np.abs(rng.standard_normal((3, 2, 8, 8)))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        out = prob_weight_forward(x, geometry)
        assert np.all(out >= avg_pool_forward(x, geometry) - 1e-12)
        assert np.all(out <= max_pool_forward(x, geometry)[0] + 1e-12)

    def test_zero_region_outputs_zero(self):
        x, geometry = single_region([0, 0, 0, 0])
        assert prob_weight_forward(x, geometry)[0, 0, 0, 0] == 0.0

    def test_size_one_derivative(self):
        x, geometry = single_region([2.5], shape=(1, 1))
        grad = prob_weight_backward(x, geometry, np.ones((1, 1, 1, 1)))
        assert grad[0, 0, 0, 0] == pytest.approx(1.0)

    def test_symmetric_derivative(self):
        x, geometry = single_region([1, 1], shape=(1, 2))
        grad = prob_weight_backward(x, geometry, np.ones((1, 1, 1, 1)))
        np.testing.assert_allclose(grad.ravel(), [0.5, 0.5])

    def test_finite_differences(self, rng):
        x = np.abs(rng.standard_normal((2, 2, 8, 8))) + 0.1
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        upstream = rng.standard_normal((2, 2, 4, 4))
        numeric = numerical_gradient(lambda: float(np.sum(prob_weight_forward(x, geometry) * upstream)), x)
        assert relative_error(prob_weight_backward(x, geometry, upstream), numeric) <= 1e-6

    def test_zero_region_gets_no_gradient(self):
        x = np.zeros((1, 1, 4, 4))
        x[0, 0, 3, 3] = 2.0
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        grad = prob_weight_backward(x, geometry, np.ones((1, 1, 2, 2)))
        assert not grad[0, 0, :2, :2].any()
        assert np.isfinite(grad).all()


class TestBackward:
    """Test gradient routing."""

    def test_routes_to_switch(self):
        geometry = PoolingGeometry((2, 2), 1, (2, 2))
        switches = SwitchMap(np.array([[[[2]]]]), geometry)
        grad = switch_pool_backward(np.full((1, 1, 1, 1), 5.0), switches, geometry)
        np.testing.assert_array_equal(grad.ravel(), [0, 0, 5, 0])

    def test_all_none_gives_zero(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        switches = SwitchMap(np.full((1, 2, 2, 2), NONE), geometry)
        assert not switch_pool_backward(np.ones((1, 2, 2, 2)), switches, geometry).any()

    def test_gradient_mass_preserved(self, rng):
        x = np.abs(rng.standard_normal((2, 3, 8, 8)))
        x[x < 0.5] = 0.0
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        _, switches = stochastic_pool_forward(x, geometry, np.random.default_rng(11))
        upstream = rng.standard_normal((2, 3, 4, 4))
        grad = switch_pool_backward(upstream, switches, geometry)
        live = switches.indices != NONE
        assert grad.sum() == pytest.approx(upstream[live].sum(), abs=1e-10)
        # overlapping regions accumulate
        assert np.count_nonzero(grad) <= np.count_nonzero(live)

    def test_average_mass_preserved(self, rng):
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        upstream = rng.standard_normal((2, 2, 4, 4))
        assert avg_pool_backward(upstream, geometry).sum() == pytest.approx(upstream.sum(), abs=1e-10)

    def test_average_finite_differences(self, rng):
        x = rng.standard_normal((2, 2, 8, 8))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        upstream = rng.standard_normal((2, 2, 4, 4))
        numeric = numerical_gradient(lambda: float(np.sum(avg_pool_forward(x, geometry) * upstream)), x)
        assert relative_error(avg_pool_backward(upstream, geometry), numeric) <= 1e-6

    def test_max_routes_like_replayed_switches(self, rng):
        x = rng.standard_normal((2, 2, 8, 8))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        _, switches = pool_forward(x, geometry, MAX)
        upstream = rng.standard_normal((2, 2, 4, 4))
        grad = pool_backward(x, geometry, MAX, upstream, switches)
        np.testing.assert_array_equal(grad, switch_pool_backward(upstream, switches, geometry))

    def test_replay_reproduces_forward(self, rng):
        x = np.abs(rng.standard_normal((2, 2, 8, 8)))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        out, switches = pool_forward(x, geometry, STOCHASTIC, rng=np.random.default_rng(4))
        replayed, _ = pool_forward(x, geometry, STOCHASTIC, switches=switches)
        np.testing.assert_array_equal(out, replayed)

    def test_stochastic_backward_needs_switches(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        with pytest.raises(ConsistencyError):
            pool_backward(np.ones((1, 1, 4, 4)), geometry, STOCHASTIC, np.ones((1, 1, 2, 2)))

    def test_deterministic_modes_need_no_rng(self, rng):
        x = np.abs(rng.standard_normal((1, 1, 8, 8)))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        for mode in (AVERAGE, MAX, PROB_WEIGHT):
            a, _ = pool_forward(x, geometry, mode)
            b, _ = pool_forward(x, geometry, mode)
            np.testing.assert_array_equal(a, b)

    def test_stochastic_n_pass_behaves_as_stochastic(self, rng):
        x = np.abs(rng.standard_normal((2, 2, 8, 8)))
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        a, _ = pool_forward(x, geometry, PoolingMode.stochastic_n(10), rng=np.random.default_rng(9))
        b, _ = pool_forward(x, geometry, STOCHASTIC, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)


class TestSwitchMap:
    """Test SwitchMap validation."""

    def test_index_outside_region(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        indices = np.zeros((1, 1, 2, 2), dtype=np.int64)
        indices[0, 0, 1, 1] = 0
        with pytest.raises(ConsistencyError, match="outside"):
            SwitchMap(indices, geometry).validate()

    def test_wrong_grid(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        with pytest.raises(ConsistencyError):
            SwitchMap(np.zeros((1, 1, 3, 3), dtype=np.int64), geometry).validate()

    def test_valid_map(self):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        indices = np.array([[[[0, 3], [NONE, 15]]]])
        assert SwitchMap(indices, geometry).validate().indices is indices


class TestModelCount:
    """Test the n^d model count."""

    def test_small(self):
        assert model_count(9, 3) == (729, pytest.approx(np.log10(729)))

    def test_dropout_case(self):
        assert model_count(2, 1)[0] == 2

    def test_huge_uses_log(self):
        exact, log10 = model_count(9, 10_000)
        assert exact is None
        assert log10 == pytest.approx(math.log10(9 ** 10_000), abs=1e-9)
        assert log10 == pytest.approx(9542.425094393249, abs=1e-9)

    @pytest.mark.parametrize("n,d", list(itertools.product([1, 4, 9], [0, 5, 20])))
    def test_exact_when_small(self, n, d):
        assert model_count(n, d)[0] == n ** d

    def test_invalid(self):
        with pytest.raises(ValueError):
            model_count(0, 3)
