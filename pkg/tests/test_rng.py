import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from irbridge.rng import Moments, chunk_sizes, chunked_map, merge_all, substream


class TestSubstreams:
    def test_same_key_same_numbers(self):
        assert np.array_equal(substream(3, "a", 1).random(5), substream(3, "a", 1).random(5))

    def test_keys_separate(self):
        assert not np.array_equal(substream(3, "a").random(5), substream(3, "b").random(5))
        assert not np.array_equal(substream(3, "a").random(5), substream(4, "a").random(5))

    def test_chunk_sizes(self):
        assert chunk_sizes(10, 4) == [4, 4, 2]
        assert chunk_sizes(8, 4) == [4, 4]

    def test_worker_count_invariance(self):
        fn = lambda n, g: g.standard_normal(n).sum()
        one = chunked_map(fn, 50_000, 9, ("k",), 4096, 1)
        many = chunked_map(fn, 50_000, 9, ("k",), 4096, 4)
        assert one == many


class TestMoments:
    @given(st.integers(2, 300), st.integers(1, 7))
    def test_merge_matches_direct(self, n, parts):
        x = substream(n, "m").standard_normal((n, 3)) * 5 + 2
        cuts = np.array_split(x, parts)
        m = merge_all([Moments.of(c) for c in cuts if len(c)])
        assert m.n == n
        np.testing.assert_allclose(m.mean, x.mean(0), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(m.var, x.var(0, ddof=1), rtol=1e-10)
