import numpy as np

from staticext.rng import LCG


def test_reproducible():
    assert np.array_equal(LCG(7).uniform(20), LCG(7).uniform(20))
    assert not np.array_equal(LCG(7).uniform(20), LCG(8).uniform(20))


def test_range_and_first_values():
    x = LCG(42).uniform(1000, -1.0, 1.0)
    assert np.all((x >= -1.0) & (x < 1.0))
    assert abs(np.mean(x)) < 0.1
    rng = LCG(0)
    assert rng.next_int() == 1442695040888963407
    assert rng.next_int() == (6364136223846793005 * 1442695040888963407 + 1442695040888963407) % 2**64


def test_describe_is_serializable():
    import json
    json.dumps(LCG.describe())
