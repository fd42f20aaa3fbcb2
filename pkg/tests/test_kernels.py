import pytest
from hypothesis import given, settings, strategies as st

from xmodal import kernels

masks = st.lists(st.integers(min_value=0, max_value=2**130 - 1), max_size=40)


def test_backend_selected():
    assert kernels.BACKEND in kernels.available_backends()


@settings(max_examples=100, deadline=None)
@given(masks, masks)
def test_support_counts_backends_agree(tx, cands):
    expected = [sum(1 for t in tx if t & c == c) for c in cands]
    for backend in kernels.available_backends():
        assert kernels.support_counts(tx, cands, 130, backend=backend) == expected


@settings(max_examples=100, deadline=None)
@given(masks, st.lists(st.tuples(st.integers(0, 2**70 - 1), st.integers(0, 3)), max_size=20))
def test_match_counts_backends_agree(itemsets, rules):
    rule_masks = [m for m, _ in rules]
    groups = [g for _, g in rules]
    expected = [[sum(1 for m, g in rules if g == k and s & m == m) for k in range(4)] for s in itemsets]
    for backend in kernels.available_backends():
        assert kernels.match_counts(itemsets, rule_masks, groups, 4, 130, backend=backend) == expected


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.support_counts([1], [1], 1, backend="gpu")


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled kernels not built")
def test_pack_layout():
    packed = kernels.pack([1 | (1 << 64) | (1 << 129)], 130)
    assert packed.shape == (1, 3)
    assert packed.tolist() == [[1, 1, 2]]


def test_empty_inputs():
    for backend in kernels.available_backends():
        assert kernels.support_counts([], [3], 2, backend=backend) == [0]
        assert kernels.support_counts([3], [], 2, backend=backend) == []
        assert kernels.match_counts([], [1], [0], 1, 1, backend=backend) == []
