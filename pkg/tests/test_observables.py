import numpy as np
import pytest

from soswall import observables as obs
from soswall.model import HeightField, ModelParams, equilibrium_height

PARAMS = ModelParams(L=6, beta=0.4, n_plus=4)  # H = floor(ln 6 / 1.6) = 1
H = equilibrium_height(PARAMS)


def test_occupation_event_flat_at_H():
    assert H >= 1
    eta = HeightField.constant(6, 6, H)
    assert obs.occupies_level_fraction(eta, 0.5, PARAMS)
    assert obs.occupies_level_fraction(eta, 0.99, PARAMS, fraction=0.99)


def test_occupation_event_all_zero():
    eta = HeightField.constant(6, 6, 0)
    assert not obs.occupies_level_fraction(eta, 0.5, PARAMS)


def test_occupation_threshold_is_strict():
    # exactly fraction * |box| sites at the level -> event fails
    p = ModelParams(L=2, beta=0.2, n_plus=2)  # H = floor(ln2/0.8) = 0 -> use a with ceil(aH)... need H>=1
    p = ModelParams(L=4, beta=0.25, n_plus=2)  # ln4 = 1.386,/1 = 1.386 -> H = 1
    assert equilibrium_height(p) == 1
    eta = HeightField.constant(4, 4, 0)
    eta.heights[:2, :] = 1  # exactly half the sites at level 1
    assert not obs.occupies_level_fraction(eta, 0.5, p, fraction=0.5)
    eta.heights[2, 0] = 1  # one more site -> strictly above half
    assert obs.occupies_level_fraction(eta, 0.5, p, fraction=0.5)


def test_occupation_requires_a_in_unit_interval():
    eta = HeightField.constant(6, 6, 0)
    with pytest.raises(ValueError):
        obs.occupies_level_fraction(eta, 1.0, PARAMS)


def test_diagonal_lines_partition():
    for L in (2, 3, 5):
        lines = obs.diagonal_lines(L)
        assert len(lines) == 2 * L - 1
        sizes = [len(r) for r in lines]
        assert sizes == [min(i, 2 * L - i) for i in range(1, 2 * L)]
        assert sizes[:L] == list(range(1, L + 1))
        allsites = [s for r in lines for s in r]
        assert len(allsites) == L * L and len(set(allsites)) == L * L


def test_diagonal_lines_L2_sizes():
    assert [len(r) for r in obs.diagonal_lines(2)] == [1, 2, 1]


def test_diagonal_budget_flat_at_H():
    eta = HeightField.constant(6, 6, H)
    for variant in (obs.VARIANT_ABOVE, obs.VARIANT_BELOW, obs.VARIANT_ABS):
        assert obs.within_diagonal_budget(eta, 0.0, variant, PARAMS)


def test_diagonal_budget_zero_budget_pins_heights():
    eta = HeightField.constant(6, 6, H)
    eta.heights[3, 3] = H + 1
    assert not obs.within_diagonal_budget(eta, 0.0, obs.VARIANT_ABS, PARAMS)
    assert obs.within_diagonal_budget(eta, 1.0, obs.VARIANT_ABS, PARAMS)


def test_diagonal_budget_sandwich_identity():
    # between a below-budget and an above-budget configuration, the absolute
    # budget is at most the sum of the two one-sided budgets
    rng = np.random.default_rng(8)
    L = PARAMS.L
    for _ in range(100):
        three = np.sort(rng.integers(0, 5, size=(3, L, L)), axis=0)
        lower, mid, upper = (HeightField(a) for a in three)

        def worst(eta, variant):
            dev = eta.heights - H
            if variant == obs.VARIANT_ABOVE:
                per = np.maximum(dev, 0)
            elif variant == obs.VARIANT_BELOW:
                per = np.maximum(-dev, 0)
            else:
                per = np.abs(dev)
            return max(per.diagonal(offset=d).sum()
                       for d in range(-(L - 1), L)) / L

        ell_below = worst(lower, obs.VARIANT_BELOW)
        ell_above = worst(upper, obs.VARIANT_ABOVE)
        assert obs.within_diagonal_budget(lower, ell_below, obs.VARIANT_BELOW, PARAMS)
        assert obs.within_diagonal_budget(upper, ell_above, obs.VARIANT_ABOVE, PARAMS)
        assert obs.within_diagonal_budget(mid, ell_below + ell_above,
                                          obs.VARIANT_ABS, PARAMS)


def test_budget_events_are_monotone():
    rng = np.random.default_rng(21)
    for _ in range(60):
        a = rng.integers(0, 4, size=(6, 6))
        b = np.minimum(a + rng.integers(0, 2, size=(6, 6)), 4)
        lo, hi = HeightField(a), HeightField(b)
        for ell in (0.5, 1.0, 2.0):
            # above-budget is a decreasing event, below-budget increasing
            if obs.within_diagonal_budget(hi, ell, obs.VARIANT_ABOVE, PARAMS):
                assert obs.within_diagonal_budget(lo, ell, obs.VARIANT_ABOVE, PARAMS)
            if obs.within_diagonal_budget(lo, ell, obs.VARIANT_BELOW, PARAMS):
                assert obs.within_diagonal_budget(hi, ell, obs.VARIANT_BELOW, PARAMS)
        if obs.occupies_level_fraction(lo, 0.5, PARAMS):
            assert obs.occupies_level_fraction(hi, 0.5, PARAMS)


def test_diagonal_budget_rejects_non_square():
    p = ModelParams(L=4, m=3, beta=0.25, n_plus=2)
    eta = HeightField.constant(4, 3, 0)
    with pytest.raises(ValueError):
        obs.within_diagonal_budget(eta, 1.0, obs.VARIANT_ABS, p)


def test_level_statistics_flat():
    eta = HeightField.constant(6, 6, H)
    st = obs.level_statistics(eta, PARAMS)
    assert st.H == H and st.n_sites == 36
    assert st.count_at_most(1) == 0 and st.count_at_least(1) == 0
    assert sum(st.down) == 36 and sum(st.up) == 36
    assert st.mean_height == H


def test_level_statistics_counts_and_monotonicity():
    rng = np.random.default_rng(4)
    eta = HeightField(rng.integers(0, 5, size=(6, 6)))
    st = obs.level_statistics(eta, PARAMS)
    for k in range(1, 5):
        assert st.count_at_most(k) == (eta.heights <= H - k).sum()
        assert st.count_at_least(k) == (eta.heights >= H + k).sum()
        assert st.count_at_most(k) >= st.count_at_most(k + 1)
        assert st.count_at_least(k) >= st.count_at_least(k + 1)


def test_fraction_at_or_above():
    eta = HeightField.constant(6, 6, H)
    eta.heights[0, 0] = H + 2
    st = obs.level_statistics(eta, PARAMS)
    assert st.fraction_at_or_above(H) == 1.0
    assert st.fraction_at_or_above(H + 1) == pytest.approx(1 / 36)
    assert st.fraction_at_or_above(H + 2) == pytest.approx(1 / 36)


def test_standard_observables_names():
    names = set(obs.standard_observables(PARAMS))
    assert {"mean_height", "max_height", "min_height"} <= names
    assert "frac_ge_1" in names
