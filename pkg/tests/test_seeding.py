"""Counter-based seed derivation."""

from hypothesis import given, settings
from hypothesis import strategies as st

from zstrans.seeding import derive_seed


def test_deterministic():
    assert derive_seed(0, "batch_sem", 17) == derive_seed(0, "batch_sem", 17)


def test_distinct_tags_and_counters():
    values = {
        derive_seed(0, "batch_sem", 0),
        derive_seed(0, "batch_sem", 1),
        derive_seed(0, "batch_tr", 0),
        derive_seed(1, "batch_sem", 0),
        derive_seed(0, "gp_s", 0),
        derive_seed(0, "gp_d", 0),
    }
    assert len(values) == 6


def test_no_concatenation_collision():
    # parts are joined with a separator, so ("ab", "c") != ("a", "bc")
    assert derive_seed(0, "ab", "c") != derive_seed(0, "a", "bc")
    assert derive_seed(12, "x") != derive_seed(1, "2x")


@given(st.integers(0, 2 ** 62), st.text(max_size=20), st.integers(0, 10 ** 9))
@settings(max_examples=100, deadline=None)
def test_property_range_fits_torch_generator(base, tag, counter):
    value = derive_seed(base, tag, counter)
    assert 0 <= value < 2 ** 63
