import numpy as np
import pytest
from scipy import stats

from surface_grf.rng import standard_normal, standard_normal_block, substream, uniform


def test_replay_and_independence():
    a = standard_normal(1, 5, 100)
    np.testing.assert_array_equal(a, standard_normal(1, 5, 100))
    assert not np.array_equal(a, standard_normal(1, 6, 100))
    assert not np.array_equal(a, standard_normal(2, 5, 100))
    assert not np.array_equal(a, standard_normal(1, 5, 100, tag="kl"))
    # prefixes agree: drawing more values does not change the first ones
    np.testing.assert_array_equal(a[:10], standard_normal(1, 5, 10))


def test_block_columns_match_single_draws():
    block = standard_normal_block(3, [4, 0, 9], 17)
    assert block.shape == (17, 3)
    np.testing.assert_array_equal(block[:, 2], standard_normal(3, 9, 17))


def test_uniform_open_interval_and_distribution():
    u = uniform(0, 0, 200_000)
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 0.01
    z = standard_normal(0, 1, 200_000)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        substream(0, -1)
