import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from st_impute.errors import ContractError
from st_impute.missingness import (
    MissingnessSpec,
    apply_fixed_blocks,
    apply_mcar,
    apply_pattern,
    apply_variable_blocks,
    fixed_block_steps,
    normalize_pattern,
    variable_block_steps,
)


def _runs(steps):
    """Lengths of the maximal runs of True."""
    padded = np.r_[False, steps, False].astype(int)
    d = np.diff(padded)
    return list(np.flatnonzero(d == -1) - np.flatnonzero(d == 1))


class TestMcar:
    def test_rate_zero(self):
        x = np.arange(10.0)
        out, hold = apply_mcar(x, 0.0, 1)
        assert not hold.any()
        np.testing.assert_array_equal(out[:, 0], x)

    def test_rate_09_length_48(self):
        _, hold = apply_mcar(np.zeros(48), 0.9, 0)
        assert abs(hold.sum() - 43) <= 5
        counts = [apply_mcar(np.zeros(48), 0.9, s)[1].sum() for s in range(400)]
        # binomial mean 43.2, standard error of the average ~0.1
        assert abs(np.mean(counts) - 43.2) < 0.5

    def test_ground_truth_round_trip(self):
        x = np.random.default_rng(0).normal(size=(30, 2))
        out, hold = apply_mcar(x, 0.5, 3)
        assert np.isnan(out[hold]).all()
        np.testing.assert_array_equal(out[~hold], x[~hold])
        restored = out.copy()
        restored[hold] = x[hold]
        np.testing.assert_array_equal(restored, x)

    def test_keeps_one_observed(self):
        x = np.array([1.0, 2.0])
        for seed in range(30):
            out, _ = apply_mcar(x, 0.99, seed)
            assert (~np.isnan(out)).sum() >= 1

    def test_channels_independent(self):
        _, hold = apply_mcar(np.zeros((200, 2)), 0.5, 0)
        assert not np.array_equal(hold[:, 0], hold[:, 1])


class TestFixedBlocks:
    def test_n40_rate05(self):
        steps, lengths = fixed_block_steps(40, 0.5, 0)
        assert lengths == [4] * 5
        assert steps.sum() == 20

    def test_n40_rate01(self):
        steps, lengths = fixed_block_steps(40, 0.1, 7)
        assert lengths == [4]
        assert _runs(steps) == [4]

    @pytest.mark.parametrize("seed", range(10))
    def test_no_overlap(self, seed):
        steps, lengths = fixed_block_steps(100, 0.7, seed)
        assert steps.sum() == sum(lengths)

    def test_whole_timesteps_dropped(self):
        x = np.random.default_rng(1).normal(size=(40, 3))
        out, hold = apply_fixed_blocks(x, 0.3, 2)
        rows = hold.any(axis=1)
        assert np.all(hold[rows]) and rows.sum() == 12

    def test_short_series_rejected(self):
        with pytest.raises(ContractError):
            apply_fixed_blocks(np.zeros(9), 0.5, 0)

    def test_truncated_final_block(self):
        _, lengths = fixed_block_steps(40, 0.25, 0)
        assert sum(lengths) == 10 and sorted(lengths) == [2, 4, 4]


class TestVariableBlocks:
    @pytest.mark.parametrize("seed", range(20))
    def test_lengths_in_interval(self, seed):
        steps, lengths = variable_block_steps(40, 0.5, seed)
        # every block but a truncated final one is drawn from [2, 6]
        assert all(2 <= l <= 6 for l in lengths[:-1])
        assert 1 <= lengths[-1] <= 6
        assert steps.sum() == sum(lengths)

    def test_achieved_within_one_block(self):
        for seed in range(20):
            steps, _ = variable_block_steps(40, 0.3, seed)
            assert abs(steps.sum() - 12) <= 6

    def test_deterministic(self):
        x = np.random.default_rng(2).normal(size=(48, 2))
        a = apply_variable_blocks(x, 0.4, 5)
        b = apply_variable_blocks(x, 0.4, 5)
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[0], b[0])


class TestMissingnessSpec:
    def test_pattern_names(self):
        assert normalize_pattern("fixed-block") == "fixed_block"
        with pytest.raises(ContractError):
            normalize_pattern("mnar")

    @pytest.mark.parametrize("kw", [dict(rate=0.0), dict(rate=1.0), dict(block_ratio=(0.2, 0.1))])
    def test_invalid(self, kw):
        args = dict(pattern="variable_block", rate=0.5)
        args.update(kw)
        with pytest.raises(ContractError):
            MissingnessSpec(**args)

    def test_defaults(self):
        assert MissingnessSpec("fixed_block", 0.5).block_ratio == 0.10
        assert MissingnessSpec("variable-block", 0.5).block_ratio == (0.05, 0.15)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["mcar", "fixed_block", "variable_block"]),
    st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
    st.integers(0, 2**31),
)
def test_pattern_invariants(pattern, rate, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 2))
    natural = rng.random(x.shape) < 0.1
    x[natural] = np.nan
    out, hold = apply_pattern(x, pattern, rate, seed)
    assert not (hold & natural).any()
    again = apply_pattern(x, pattern, rate, seed)
    np.testing.assert_array_equal(hold, again[1])
    if pattern != "mcar":
        steps, lengths = (fixed_block_steps if pattern == "fixed_block" else variable_block_steps)(60, rate, seed)
        assert abs(steps.mean() - rate) <= max(0.05, max(lengths) / 60)
        np.testing.assert_array_equal(hold, steps[:, None] & ~natural)


@pytest.mark.parametrize("rate", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_mcar_achieved_rate(rate):
    x = np.zeros((60, 2))
    for seed in range(10):
        _, hold = apply_mcar(x, rate, seed)
        assert abs(hold.mean() - rate) <= max(0.05, 3 * np.sqrt(rate * (1 - rate) / x.size))
