"""Mask algebra and the multi-layer leakage reachability check."""

from dataclasses import replace

import numpy as np
import pytest

from slmkit.errors import LengthError
from slmkit.masks import build_masks, render_masks, verify_no_leakage


def reachable_sets_oracle(masks, layers):
    """Set-based reachability oracle, independent of the matrix implementation.

    Returns {depth: [reachable input positions per query row]}.
    """
    n = masks.n
    f_reach = [{i} for i in range(n)]
    b_reach = [{i} for i in range(n)]
    out = {}
    for depth in range(1, layers + 1):
        q = []
        for i in range(n):
            seen = set()
            for j in range(n):
                if masks.query[i, j]:
                    seen |= f_reach[j]
                if masks.query[i, n + j]:
                    seen |= b_reach[j]
            q.append(seen)
        out[depth] = q
        f_reach = [set().union(*(f_reach[j] for j in np.flatnonzero(masks.forward[i])))
                   for i in range(n)]
        b_reach = [set().union(*(b_reach[j] for j in np.flatnonzero(masks.backward[i])))
                   for i in range(n)]
    return out


class TestBuildMasks:
    def test_n3_forward_rows(self):
        m = build_masks(3)
        rows = [set(np.flatnonzero(m.forward[i])) for i in range(3)]
        assert rows == [{0}, {0, 1}, {0, 1, 2}]

    def test_n3_query_middle_row(self):
        m = build_masks(3)
        assert set(np.flatnonzero(m.query[1, :3])) == {0}
        assert set(np.flatnonzero(m.query[1, 3:])) == {2}

    def test_n3_query_boundary_row(self):
        m = build_masks(3)
        assert set(np.flatnonzero(m.query[0, :3])) == set()
        assert set(np.flatnonzero(m.query[0, 3:])) == {1, 2}

    def test_too_short(self):
        with pytest.raises(LengthError, match="BOS"):
            build_masks(2)

    @pytest.mark.parametrize("n", list(range(3, 65)))
    def test_query_rows_partition_everything_else(self, n):
        m = build_masks(n)
        for i in range(n):
            fwd = set(np.flatnonzero(m.query[i, :n]))
            bwd = set(np.flatnonzero(m.query[i, n:]))
            assert fwd == set(range(i))
            assert bwd == set(range(i + 1, n))
            assert not (fwd & bwd)
            assert fwd | bwd == set(range(n)) - {i}

    @pytest.mark.parametrize("n", [3, 8, 33, 64])
    def test_content_masks_triangular_with_true_diagonal(self, n):
        m = build_masks(n)
        assert np.array_equal(m.forward, np.tril(np.ones((n, n), dtype=bool)))
        assert np.array_equal(m.backward, np.triu(np.ones((n, n), dtype=bool)))
        assert np.all(np.diagonal(m.forward)) and np.all(np.diagonal(m.backward))


class TestVerifyNoLeakage:
    @pytest.mark.parametrize("layers", [1, 2, 3, 4])
    def test_built_masks_pass(self, layers):
        for n in (3, 5, 9):
            report = verify_no_leakage(build_masks(n), layers)
            assert report.passed
            assert report.first_failure_depth() is None

    def test_corrupted_full_content_attention_fails_at_depth_2(self):
        # bidirectional content states echo a position back into its own
        # query row one layer later: the 3-token h^2 cycle
        m = build_masks(3)
        full = np.ones((3, 3), dtype=bool)
        bad = replace(m, forward=full, backward=full)
        assert verify_no_leakage(bad, 1).passed
        report = verify_no_leakage(bad, 2)
        assert not report.passed
        assert report.first_failure_depth() == 2
        assert report.self_leaks[2] == [0, 1, 2]

    @pytest.mark.parametrize("n", [3, 6, 12])
    @pytest.mark.parametrize("corrupt", [False, True])
    def test_matches_set_oracle(self, n, corrupt):
        m = build_masks(n)
        if corrupt:
            full = np.ones((n, n), dtype=bool)
            m = replace(m, forward=full, backward=full)
        layers = 4
        oracle = reachable_sets_oracle(m, layers)
        report = verify_no_leakage(m, layers)
        want_leaks = {
            depth: [i for i in range(n) if i in oracle[depth][i]]
            for depth in oracle
        }
        want_leaks = {d: v for d, v in want_leaks.items() if v}
        assert report.self_leaks == want_leaks
        assert report.depth1_complete == all(
            oracle[1][i] == set(range(n)) - {i} for i in range(n)
        )

    def test_incomplete_depth1_coverage_fails(self):
        m = build_masks(4)
        crippled = m.query.copy()
        crippled[2, 0] = False  # row 2 loses sight of position 0
        report = verify_no_leakage(replace(m, query=crippled), 1)
        assert not report.passed
        assert report.self_leaks == {}


class TestRender:
    def test_ascii_uses_fig_convention(self):
        text = render_masks(build_masks(3), "ascii")
        assert "# forward [3x3]" in text
        assert "#.." in text and "###..." not in text.split("# query")[0]
        q_section = text.split("# query [3x6]\n")[1].splitlines()
        assert q_section[0] == "...###"
        assert q_section[1] == "#....#"
        assert q_section[2] == "##...."

    def test_csv(self):
        text = render_masks(build_masks(3), "csv")
        assert "1,0,0" in text

    def test_render_deterministic(self):
        a = render_masks(build_masks(5), "ascii")
        b = render_masks(build_masks(5), "ascii")
        assert a == b
