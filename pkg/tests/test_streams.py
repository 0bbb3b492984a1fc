import numpy as np
import pytest

from kriging_ae.streams import BLOCK_SIZE, RandomStream, as_stream, block_sizes, run_blocks


def test_labels_are_independent_of_creation_order():
    a = RandomStream(3).split("ce").generator().random(4)
    RandomStream(3).split("other").generator().random(100)
    b = RandomStream(3).split("ce").generator().random(4)
    assert np.array_equal(a, b)


def test_distinct_labels_and_seeds_differ():
    base = RandomStream(3)
    draws = {
        tuple(base.split("a").generator().random(3)),
        tuple(base.split("b").generator().random(3)),
        tuple(RandomStream(4).split("a").generator().random(3)),
        tuple(base.split("a").split("b").generator().random(3)),
    }
    assert len(draws) == 4


def test_block_sizes():
    assert block_sizes(1) == [1]
    assert block_sizes(BLOCK_SIZE) == [BLOCK_SIZE]
    assert block_sizes(2 * BLOCK_SIZE + 5) == [BLOCK_SIZE, BLOCK_SIZE, 5]
    with pytest.raises(ValueError):
        block_sizes(0)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_run_blocks_is_independent_of_workers(workers):
    def fn(rng, size):
        return rng.standard_normal(size)

    n = 5 * BLOCK_SIZE + 17
    serial = np.concatenate(run_blocks(fn, RandomStream(9), n, 1))
    parallel = np.concatenate(run_blocks(fn, RandomStream(9), n, workers))
    assert serial.size == n
    assert np.array_equal(serial, parallel)


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        RandomStream(-1)


def test_as_stream_accepts_int():
    assert as_stream(5).seed == 5
    s = RandomStream(2).split("x")
    assert as_stream(s) is s
