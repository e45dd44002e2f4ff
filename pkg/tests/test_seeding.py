import numpy as np
import pytest

from mtpinn.utils.error_handlers import DomainError
from mtpinn.utils.seeding import derive_seed


class TestDeriveSeed:
    def test_same_labels_repeat(self):
        assert derive_seed(0, "collocation") == derive_seed(0, "collocation")
        assert derive_seed(4, "feed", 2) == derive_seed(4, "feed", 2)

    def test_labels_and_roots_separate_streams(self):
        seeds = {
            derive_seed(0, "collocation"),
            derive_seed(0, "init"),
            derive_seed(1, "collocation"),
            derive_seed(0, "feed", 3),
            derive_seed(0, "feed", "3"),
            derive_seed(0, "feed", "open"),
            derive_seed(0),
        }
        assert len(seeds) == 7

    def test_matches_seed_sequence_spawn_key(self):
        expected = np.random.SeedSequence(entropy=9, spawn_key=(2 * 5,)).generate_state(1, dtype=np.uint64)[0]
        assert derive_seed(9, 5) == int(expected) >> 1

    def test_range(self):
        for epoch in range(50):
            seed = derive_seed(123, "collocation", epoch)
            assert 0 <= seed < 2 ** 63

    def test_negative_root(self):
        with pytest.raises(DomainError):
            derive_seed(-1, "init")
