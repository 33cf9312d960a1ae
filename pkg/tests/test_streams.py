"""Deterministic splittable random streams."""

import numpy as np
import pytest

from mcpdf import RandomStream, derive_stream


def test_same_key_gives_identical_draws():
    a = derive_stream(1, (0, 0, 0)).rng.random(100)
    b = derive_stream(1, (0, 0, 0)).rng.random(100)
    assert np.array_equal(a, b)


def test_distinct_paths_give_different_draws():
    a = derive_stream(1, (0, 0, 0)).rng.random(100)
    b = derive_stream(1, (0, 0, 1)).rng.random(100)
    assert not np.array_equal(a, b)


def test_distinct_seeds_give_different_draws():
    a = derive_stream(1, (0, 0, 0)).rng.random(100)
    b = derive_stream(2, (0, 0, 0)).rng.random(100)
    assert not np.array_equal(a, b)


def test_child_extends_the_path():
    root = derive_stream(7, (3,))
    child = root.child(1, 4)
    assert child.path == (3, 1, 4)
    assert child.seed == root.seed
    # A child derived twice restarts its sequence from counter zero.
    assert np.array_equal(root.child(1, 4).rng.random(16), derive_stream(7, (3, 1, 4)).rng.random(16))


def test_sibling_children_are_independent():
    root = derive_stream(0)
    draws = [root.child(i).rng.standard_normal(64) for i in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not np.array_equal(draws[i], draws[j])


def test_negative_path_entries_rejected():
    with pytest.raises(ValueError):
        RandomStream(0, (1, -2))


def test_seed_reduced_modulo_64_bits():
    big = RandomStream(2**64 + 5)
    small = RandomStream(5)
    assert big.seed == small.seed == 5
    assert np.array_equal(big.rng.random(8), small.rng.random(8))


def test_repr_names_seed_and_path():
    assert repr(derive_stream(3, (1, 2))) == "RandomStream(seed=3, path=(1, 2))"
