"""Schedule policies: ten-stage, continuous ramp, and random draw."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effcl.curriculum import CurriculumPolicy, level_at, level_menu
from effcl.errors import ConfigError

DISCRETE = CurriculumPolicy(mode="discrete")
CONTINUOUS = CurriculumPolicy(mode="continuous")
NONE = CurriculumPolicy(mode="none")

DECIMAL_GRID = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10]


class TestPolicyValidation:
    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            CurriculumPolicy(mode="linear")

    def test_bounds_ordering(self):
        with pytest.raises(ConfigError):
            CurriculumPolicy(mode="discrete", min_level=0.1, max_level=0.1)

    def test_stage_count(self):
        with pytest.raises(ConfigError):
            CurriculumPolicy(mode="discrete", num_stages=0)


class TestDiscrete:
    def test_endpoints_exact(self):
        total = 3000
        assert level_at(DISCRETE, 0, total).level == 0.01
        assert level_at(DISCRETE, total - 1, total).level == 0.1

    def test_ten_stage_grid(self):
        total = 3000
        levels = np.array([level_at(DISCRETE, s, total).level for s in range(total)])
        distinct = np.unique(levels)
        assert len(distinct) == 10
        np.testing.assert_allclose(distinct, DECIMAL_GRID, atol=1e-12)
        assert np.all(np.diff(levels) >= 0)
        # every stage occupies exactly total/10 steps here
        _, counts = np.unique(levels, return_counts=True)
        assert np.all(counts == 300)

    def test_stage_widths_with_remainder(self):
        total = 1003
        levels = [level_at(DISCRETE, s, total).level for s in range(total)]
        _, counts = np.unique(levels, return_counts=True)
        assert len(counts) == 10
        assert counts.max() - counts.min() <= 1

    def test_requires_enough_steps(self):
        with pytest.raises(ValueError):
            level_at(DISCRETE, 0, 5)

    def test_rng_independent(self):
        r = np.random.default_rng(0)
        state_before = r.bit_generator.state
        a = level_at(DISCRETE, 100, 1000, r)
        assert r.bit_generator.state == state_before
        b = level_at(DISCRETE, 100, 1000, np.random.default_rng(999))
        assert a.level == b.level


class TestContinuous:
    def test_endpoints_exact(self):
        assert level_at(CONTINUOUS, 0, 3000).level == 0.01
        assert level_at(CONTINUOUS, 2999, 3000).level == 0.1

    def test_linear_formula(self):
        total = 3000
        got = level_at(CONTINUOUS, 1500, total).level
        expected = 0.01 + (0.1 - 0.01) * 1500 / 2999
        assert got == pytest.approx(expected, abs=1e-12)

    def test_strictly_increasing(self):
        total = 500
        levels = [level_at(CONTINUOUS, s, total).level for s in range(total)]
        assert np.all(np.diff(levels) > 0)

    def test_rng_independent(self):
        r = np.random.default_rng(1)
        state_before = r.bit_generator.state
        level_at(CONTINUOUS, 10, 100, r)
        assert r.bit_generator.state == state_before


class TestNoCurriculum:
    def test_uniform_frequencies(self):
        rng = np.random.default_rng(77)
        n = 100_000
        menu = level_menu(NONE)
        draws = np.array([level_at(NONE, s, n, rng).level for s in range(n)])
        for value in menu:
            freq = np.mean(draws == value)
            assert abs(freq - 0.1) <= 0.005

    def test_draws_come_from_discrete_grid(self):
        rng = np.random.default_rng(3)
        menu = set(level_menu(NONE).tolist())
        discrete_image = {level_at(DISCRETE, s, 1000).level for s in range(1000)}
        assert discrete_image == menu
        draws = {level_at(NONE, s, 50, rng).level for s in range(50)}
        assert draws <= menu

    def test_requires_rng(self):
        with pytest.raises(ValueError):
            level_at(NONE, 0, 10, None)


class TestSharedInvariants:
    @given(step=st.integers(0, 9999), total=st.integers(10, 10000),
           mode=st.sampled_from(["discrete", "continuous", "none"]))
    @settings(max_examples=200, deadline=None)
    def test_always_within_bounds(self, step, total, mode):
        if step >= total:
            return
        policy = CurriculumPolicy(mode=mode)
        lv = level_at(policy, step, total, np.random.default_rng(0))
        assert 0.01 <= lv.level <= 0.1

    def test_step_out_of_range(self):
        with pytest.raises(ValueError):
            level_at(DISCRETE, 10, 10)
        with pytest.raises(ValueError):
            level_at(CONTINUOUS, -1, 10)

    def test_menu_endpoints_exact_for_custom_policy(self):
        policy = CurriculumPolicy(mode="discrete", min_level=0.02, max_level=0.2,
                                  num_stages=7)
        menu = level_menu(policy)
        assert menu[0] == 0.02 and menu[-1] == 0.2
        assert len(menu) == 7
