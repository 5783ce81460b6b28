import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exact_counting import (Provenance, SlotVector, compositions, enumerate_EX2_linear,
                            enumerate_EX2_mod3, enumerate_ue_constraints, exact_K_mod3, exact_Ktilde_ue,
                            exact_M, exact_N0, exact_N_mod3, exact_second_moment_linear,
                            exact_second_moment_ue, M_local_limit, M_local_ratio, multinomial,
                            ue_pair_count_table)
from generating_functions import DomainError, SizeGuardError, p_eval


def test_M_small_values():
    assert exact_M(6, 3).value == 90
    assert exact_M(4, 2).value == 6
    assert exact_M(5, 3).value == 0


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=30))
def test_M_paths_agree(n, m):
    series = exact_M(m, n, method='series').value
    inclusion = exact_M(m, n, method='inclusion_exclusion').value
    assert series == inclusion


def test_M_reports_its_path():
    count = exact_M(40, 6, method='both')
    assert count.provenance is Provenance.INCLUSION_EXCLUSION
    assert count.to_dict()['value'] == str(count.value)


@given(st.integers(min_value=0, max_value=12), st.integers(min_value=1, max_value=4))
def test_composition_count(total, parts):
    found = list(compositions(total, parts))
    assert len(found) == math.comb(total + parts - 1, parts - 1)
    assert all(sum(c) == total for c in found)


def test_multinomial():
    assert multinomial((2, 2, 2)) == 90
    assert multinomial((3,)) == 1


@pytest.mark.parametrize('ratio', [2.5, 4.0, 8.0])
def test_M_local_ratio_converges(ratio):
    limit = M_local_limit(ratio)
    ratios = [math.exp(M_local_ratio(int(ratio * n), n)) / limit for n in (50, 100, 200, 300)]
    assert all(1 / 3 < r < 3 for r in ratios)
    drift = [abs(r - 1.0) for r in ratios]
    assert all(later < earlier for earlier, later in zip(drift, drift[1:]))


def test_agreeing_pairs_count_every_formula():
    n, k, m = 3, 3, 2
    slots = SlotVector((n, 0, 0), (k * m, 0, 0), n, m, k)
    assert exact_K_mod3(slots.l, k, m).value == 1
    assert exact_N_mod3(slots).value == exact_N0(n, k, m).value


def test_slot_vector_validation():
    with pytest.raises(DomainError):
        SlotVector((1, 1, 1), (2, 2, 1), 3, 2, 3)
    slots = SlotVector((1, 1, 1), (2, 2, 2), 3, 2, 3)
    assert slots.omega == (Fraction(1, 3),) * 3


def test_enumeration_matches_decomposition():
    result = enumerate_EX2_mod3(3, 3, 2)
    assert result.formulas == 810
    assert result.first_moment == 3
    assert result.passed
    assert result.second_moment == exact_second_moment_linear(3, 3, 2, 3)


def test_parity_enumeration():
    result = enumerate_EX2_linear(3, 3, 2, 2)
    assert result.first_moment == 2
    assert result.passed


def test_enumeration_guard():
    with pytest.raises(SizeGuardError):
        enumerate_EX2_mod3(6, 3, 8)


def test_N0_counts_slot_maps():
    assert exact_N0(3, 3, 2).value == 90
    assert exact_N0(6, 3, 2).value == 0


@pytest.mark.parametrize('d, k, count', [(2, 2, 2), (2, 3, 2), (2, 4, 2), (3, 2, 6), (3, 3, 12),
                                         (4, 2, 24), (4, 3, 576)])
def test_ue_constraint_counts(d, k, count):
    family = enumerate_ue_constraints(d, k)
    assert family.size == count
    assert family.matches


def test_ue_constraints_are_extendible():
    family = enumerate_ue_constraints(3, 3)
    for table in family.tables:
        grid = np.asarray(table).reshape(3, 3)
        for row in grid:
            assert sorted(row) == [0, 1, 2]
        for col in grid.T:
            assert sorted(col) == [0, 1, 2]


@pytest.mark.parametrize('k, m, d', [(3, 2, 4), (4, 3, 3), (3, 5, 2)])
def test_Ktilde_sums_to_p_at_one(k, m, d):
    total = sum(exact_Ktilde_ue(l, k, m, d).value for l in range(k * m + 1))
    assert float(total) == pytest.approx(p_eval(1.0, k, d)**m)


@pytest.mark.parametrize('n, k, m', [(4, 3, 3), (5, 3, 4)])
def test_ue_second_moment_reduces_to_parity(n, k, m):
    assert exact_second_moment_ue(n, k, m, 2) == exact_second_moment_linear(n, k, m, 2)


def test_ue_pair_table_is_positive():
    table = ue_pair_count_table(4, 3, 3, 4)
    assert len(table) > 0
    assert all(value > 0 for value in table['N'])
    assert set(table.columns) == {'w', 'l', 'N'}


def test_ue_second_moment_dominates_first_squared():
    n, k, m, d = 5, 3, 4, 4
    first = Fraction(d**(n - m))
    assert exact_second_moment_ue(n, k, m, d) >= first**2
