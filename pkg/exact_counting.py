"""
Exact Counting Oracles for Random Constraint Systems

This module implements:
- M(m, n): slot maps with every variable used at least twice (series DP and
  inclusion-exclusion, which must agree exactly)
- K(l): column-constrained slot labelings for linear equations mod 2 and mod 3
- N_hat(w, l) and N(w, l), the pair counts of the second-moment decomposition
- E[X^2] from the decomposition and from brute-force enumeration of every formula
- K~(l) and E[X^2] for uniquely extendible constraints, with |Gamma| cancelled
- Enumeration of uniquely extendible constraint tables and their exact p_i

No floating point enters an oracle path; integers and Fractions only.
"""

import itertools
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pandas as pd

from generating_functions import (DomainError, SizeGuardError, UnsupportedError, Q_eval,
                                  C_eval, Q_inverse, log_q, p_coefficients, p_i_closed, r_coeff)
from lab_config import DEFAULTS

logger = logging.getLogger(__name__)

_CFG = DEFAULTS['exact']


class Provenance(str, Enum):
    COEFF_DP = 'CoeffDP'
    INCLUSION_EXCLUSION = 'InclusionExclusion'
    ENUMERATION = 'Enumeration'
    DECOMPOSITION = 'Decomposition'


@dataclass(frozen=True)
class ExactCount:
    """An exact integer or rational result with the path that produced it."""

    quantity: str
    value: object
    provenance: Provenance
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {'quantity': self.quantity, 'params': dict(self.params),
                'value': str(self.value), 'provenance': Provenance(self.provenance).value}

    def __int__(self):
        return int(self.value)


@dataclass(frozen=True)
class SlotVector:
    """
    Class sizes w = (w_0, ..., w_{q-1}) and slot counts l = (l_0, ..., l_{q-1}).

    Class 0 holds the variables where the two assignments agree.
    """

    w: tuple
    l: tuple
    n: int
    m: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, 'w', tuple(int(v) for v in self.w))
        object.__setattr__(self, 'l', tuple(int(v) for v in self.l))
        if len(self.w) != len(self.l):
            raise DomainError("w and l must have the same number of classes")
        if min(self.w + self.l) < 0:
            raise DomainError("class sizes and slot counts must be nonnegative")
        if sum(self.w) != self.n:
            raise DomainError(f"sum(w)={sum(self.w)} differs from n={self.n}")
        if sum(self.l) != self.k * self.m:
            raise DomainError(f"sum(l)={sum(self.l)} differs from k*m={self.k * self.m}")

    @property
    def omega(self):
        return tuple(Fraction(v, self.n) for v in self.w)

    @property
    def lam(self):
        return tuple(Fraction(v, self.k * self.m) for v in self.l)


def compositions(total, parts):
    """All tuples of `parts` nonnegative integers summing to `total`, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in compositions(total - head, parts - 1):
            yield (head,) + tail


def multinomial(counts):
    result, running = 1, 0
    for c in counts:
        running += c
        result *= math.comb(running, c)
    return result


# ----------------------------------------------------------------------------
# M(m, n)
# ----------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _q_series(m):
    """Coefficients of e^x - x - 1 up to x^m."""
    return tuple(Fraction(0) if j < 2 else Fraction(1, math.factorial(j)) for j in range(m + 1))


def _M_series(m, n):
    series = _q_series(m)
    poly = [Fraction(1)] + [Fraction(0)] * m
    for _ in range(n):
        nxt = [Fraction(0)] * (m + 1)
        for i, a in enumerate(poly):
            if a:
                for j in range(2, m + 1 - i):
                    nxt[i + j] += a * series[j]
        poly = nxt
    value = poly[m] * math.factorial(m)
    if value.denominator != 1:
        raise ArithmeticError(f"M({m},{n}) series coefficient is not integral")
    return int(value)


def _M_inclusion_exclusion(m, n):
    total = 0
    falling = [1]
    for b in range(1, min(m, n) + 1):
        falling.append(falling[-1] * (m - b + 1))
    for a in range(n + 1):
        for b in range(min(m, n - a) + 1):
            c = n - a - b
            term = math.factorial(n) // (math.factorial(a) * math.factorial(b) * math.factorial(c))
            term *= falling[b] * c**(m - b)
            total += -term if (a + b) % 2 else term
    return total


def exact_M(m, n, method='auto'):
    """
    M(m, n) = sum over v_1..v_n >= 2 of multinomial(m; v), the number of maps from m
    slots onto n variables using every variable at least twice.

    Parameters:
    -----------
    method : str
        'series', 'inclusion_exclusion', 'both' (cross-checked) or 'auto'
        ('both' up to the configured dual-path size, inclusion-exclusion beyond)
    """
    if m < 0 or n < 0:
        raise DomainError(f"M needs m, n >= 0, got ({m}, {n})")
    params = {'m': m, 'n': n}
    if m < 2 * n:
        return ExactCount('M', 0, Provenance.INCLUSION_EXCLUSION, params)
    if method == 'auto':
        method = 'both' if m <= _CFG['dual_path_max_m'] else 'inclusion_exclusion'
    if method == 'series':
        return ExactCount('M', _M_series(m, n), Provenance.COEFF_DP, params)
    value = _M_inclusion_exclusion(m, n)
    if method == 'both':
        other = _M_series(m, n)
        if other != value:
            raise ArithmeticError(f"M({m},{n}): series {other} != inclusion-exclusion {value}")
    elif method != 'inclusion_exclusion':
        raise DomainError(f"Unknown method {method!r}")
    return ExactCount('M', value, Provenance.INCLUSION_EXCLUSION, params)


@lru_cache(maxsize=None)
def _M(m, n):
    return exact_M(m, n, method='inclusion_exclusion').value


def M_local_ratio(m, n):
    """
    ln M(m,n) - [m ln(m/(a e)) + n ln q(a)] with Q(a) = m/n.

    The ratio tends to 1/sqrt(Q C(a)) (see M_local_limit) as n grows at fixed m/n.
    """
    if not m > 2 * n:
        raise DomainError(f"M_local_ratio needs m > 2n, got ({m}, {n})")
    a = Q_inverse(m / n)
    exact_log = math.log(_M(m, n))
    return exact_log - (m * (math.log(m / a) - 1.0) + n * log_q(a))


def M_local_limit(ratio):
    """Limit of exp(M_local_ratio) along m/n = ratio."""
    a = Q_inverse(ratio)
    return 1.0 / math.sqrt(Q_eval(a) * C_eval(a))


# ----------------------------------------------------------------------------
# K(l) for linear equations
# ----------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _column_polynomial(k, q):
    """Class-count vectors of one equation whose weighted sum vanishes mod q."""
    column = {}
    for counts in compositions(k, q):
        if q == 3:
            coeff = r_coeff(counts[1], counts[2], k)
        elif sum(i * c for i, c in enumerate(counts)) % q == 0:
            coeff = multinomial(counts)
        else:
            coeff = 0
        if coeff:
            column[counts] = coeff
    return column


@lru_cache(maxsize=None)
def column_power(k, m, q):
    """All coefficients of (column polynomial)^m as a dict l -> K(l)."""
    column = _column_polynomial(k, q)
    power = {(0,) * q: 1}
    for _ in range(m):
        nxt = defaultdict(int)
        for l, a in power.items():
            for c, b in column.items():
                nxt[tuple(x + y for x, y in zip(l, c))] += a * b
        power = dict(nxt)
    return power


def exact_K_linear(l, k, m, q):
    """K(l): labelings of the k*m slots with classes 0..q-1, every equation balanced mod q."""
    l = tuple(int(v) for v in l)
    if len(l) != q or sum(l) != k * m or min(l) < 0:
        raise DomainError(f"Slot vector {l} inconsistent with k={k}, m={m}, q={q}")
    value = column_power(k, m, q).get(l, 0)
    return ExactCount('K', value, Provenance.COEFF_DP, {'l': l, 'k': k, 'm': m, 'q': q})


def exact_K_mod3(l, k, m):
    """K(l) = Coeff[x^l, r(x0, x1, x2)^m]."""
    return exact_K_linear(l, k, m, 3)


def exact_Nhat_linear(slots, q):
    k_value = exact_K_linear(slots.l, slots.k, slots.m, q).value
    value = k_value
    for li, wi in zip(slots.l, slots.w):
        if not value:
            break
        value *= _M(li, wi)
    return ExactCount('N_hat', value, Provenance.DECOMPOSITION,
                      {'w': slots.w, 'l': slots.l, 'q': q})


def exact_N_linear(slots, q):
    nhat = exact_Nhat_linear(slots, q).value
    return ExactCount('N', multinomial(slots.w) * nhat, Provenance.DECOMPOSITION,
                      {'w': slots.w, 'l': slots.l, 'q': q})


def exact_Nhat_mod3(slots):
    """N_hat(w, l) = K(l) * prod_i M(l_i, w_i)."""
    return exact_Nhat_linear(slots, 3)


def exact_N_mod3(slots):
    """N(w, l) = multinomial(n; w) * N_hat(w, l)."""
    return exact_N_linear(slots, 3)


def exact_N0(n, k, m):
    return ExactCount('N0', _M(k * m, n), Provenance.INCLUSION_EXCLUSION,
                      {'n': n, 'k': k, 'm': m})


def pair_count_table(n, k, m, q):
    """DataFrame of every (w, l) with N(w, l) > 0."""
    rows = []
    for l, k_value in column_power(k, m, q).items():
        for w in compositions(n, q):
            count = exact_N_linear(SlotVector(w, l, n, m, k), q).value
            if count:
                rows.append({'w': w, 'l': l, 'N': count})
    return pd.DataFrame(rows, columns=['w', 'l', 'N'])


def exact_second_moment_linear(n, k, m, q):
    """E[X^2] = q^n * sum N(w, l) / (q^m N0), exact."""
    n0 = exact_N0(n, k, m).value
    if n0 == 0:
        raise DomainError(f"No formulas exist for n={n}, k={k}, m={m}")
    total = sum(pair_count_table(n, k, m, q)['N'].tolist())
    return Fraction(q**n * total, q**m * n0)


# ----------------------------------------------------------------------------
# brute-force enumeration
# ----------------------------------------------------------------------------

@dataclass
class EnumerationResult:
    """Outcome of enumerating every formula of a tiny instance."""

    n: int
    k: int
    m: int
    q: int
    formulas: int
    first_moment: Fraction
    second_moment: Fraction
    buckets: pd.DataFrame
    mismatches: list

    @property
    def passed(self):
        return not self.mismatches

    def summary(self):
        return {'n': self.n, 'k': self.k, 'm': self.m, 'q': self.q,
                'formulas': self.formulas, 'E[X]': str(self.first_moment),
                'E[X^2]': str(self.second_moment), 'buckets': len(self.buckets),
                'mismatches': len(self.mismatches), 'passed': self.passed}


def slot_maps(n, k, m):
    """Slot maps in lexicographic order with every variable used at least twice."""
    if n**(k * m) > _CFG['slot_map_limit']:
        raise SizeGuardError(f"{n}^{k * m} slot maps exceed the enumeration guard")
    for phi in itertools.product(range(n), repeat=k * m):
        if min(np.bincount(phi, minlength=n)) >= 2:
            yield np.array(phi)


def enumerate_EX2_linear(n, k, m, q):
    """
    Enumerate every formula (slot map and right-hand sides) and every ordered pair of
    satisfying assignments; bucket pairs by the (w, l) of their difference and compare
    each bucket with q^n * N(w, l).
    """
    n0 = exact_N0(n, k, m).value
    if n0 * q**m > _CFG['enumeration_limit']:
        raise SizeGuardError(f"{n0 * q**m} formulas exceed the enumeration guard")
    assignments = np.array(list(itertools.product(range(q), repeat=n)))
    buckets = Counter()
    sum_x = sum_x2 = 0
    maps_seen = 0
    for phi in slot_maps(n, k, m):
        maps_seen += 1
        sums = assignments[:, phi].reshape(len(assignments), m, k).sum(axis=2) % q
        keys = sums @ (q ** np.arange(m))
        for key in np.unique(keys):
            members = np.flatnonzero(keys == key)
            sum_x += len(members)
            sum_x2 += len(members)**2
            diffs = (assignments[members][np.newaxis, :, :]
                     - assignments[members][:, np.newaxis, :]) % q
            diffs = diffs.reshape(-1, n)
            for row in diffs:
                w = tuple(np.bincount(row, minlength=q))
                l = tuple(np.bincount(row[phi], minlength=q))
                buckets[(w, l)] += 1
    formulas = maps_seen * q**m
    if maps_seen != n0:
        raise ArithmeticError(f"Enumerated {maps_seen} slot maps, expected N0={n0}")

    exact = {(tuple(r.w), tuple(r.l)): r.N for r in pair_count_table(n, k, m, q).itertuples()}
    rows, mismatches = [], []
    for key in sorted(set(buckets) | set(exact)):
        expected = q**n * exact.get(key, 0)
        rows.append({'w': key[0], 'l': key[1], 'enumerated': buckets.get(key, 0),
                     'expected': expected})
        if buckets.get(key, 0) != expected:
            mismatches.append({'w': key[0], 'l': key[1], 'enumerated': buckets.get(key, 0),
                               'expected': expected})
    logger.info("Enumerated %d formulas, %d buckets, %d mismatches",
                formulas, len(rows), len(mismatches))
    return EnumerationResult(n, k, m, q, formulas, Fraction(sum_x, formulas),
                             Fraction(sum_x2, formulas), pd.DataFrame(rows), mismatches)


def enumerate_EX2_mod3(n, k, m):
    return enumerate_EX2_linear(n, k, m, 3)


# ----------------------------------------------------------------------------
# uniquely extendible constraints
# ----------------------------------------------------------------------------

@lru_cache(maxsize=None)
def ue_column_power(k, m, d):
    """Exact coefficients of p(z)^m."""
    base = p_coefficients(k, d)
    poly = [Fraction(1)]
    for _ in range(m):
        nxt = [Fraction(0)] * (len(poly) + k)
        for i, a in enumerate(poly):
            if a:
                for j, b in enumerate(base):
                    nxt[i + j] += a * b
        poly = nxt
    return tuple(poly)


def exact_Ktilde_ue(l, k, m, d):
    """K(l) / (|Gamma|/d)^m = Coeff[z^l, p(z)^m], exact."""
    if not 0 <= l <= k * m:
        raise DomainError(f"K~ needs 0 <= l <= k*m, got l={l}")
    return ExactCount('K_tilde', ue_column_power(k, m, d)[l], Provenance.COEFF_DP,
                      {'l': l, 'k': k, 'm': m, 'd': d})


def ue_pair_count_table(n, k, m, d):
    """
    DataFrame of every (w, l) with N(w, l) > 0, where N counts pairs (b, F) over
    constraints with |Gamma| scaled out: C(n,w) (d-1)^w M(l,w) M(km-l, n-w) K~(l).
    """
    power = ue_column_power(k, m, d)
    rows = []
    for w in range(n + 1):
        weight = math.comb(n, w) * (d - 1)**w
        for l in range(k * m + 1):
            if not power[l]:
                continue
            count = weight * _M(l, w) * _M(k * m - l, n - w) * power[l]
            if count:
                rows.append({'w': w, 'l': l, 'N': count})
    return pd.DataFrame(rows, columns=['w', 'l', 'N'])


def exact_second_moment_ue(n, k, m, d):
    """
    E[X^2] for uniquely extendible constraints, exact:
    d^n sum_{w,l} C(n,w) (d-1)^w M(l,w) M(km-l, n-w) K~(l) / (d^m N0).
    """
    n0 = exact_N0(n, k, m).value
    if n0 == 0:
        raise DomainError(f"No formulas exist for n={n}, k={k}, m={m}")
    total = sum(ue_pair_count_table(n, k, m, d)['N'].tolist(), Fraction(0))
    return Fraction(d**n) * total / (d**m * n0)


@dataclass
class UEConstraintFamily:
    """All uniquely extendible constraints of arity k over a d-element domain."""

    d: int
    k: int
    tables: np.ndarray
    p_empirical: list
    p_closed: list

    @property
    def size(self):
        return len(self.tables)

    @property
    def matches(self):
        return self.p_empirical == self.p_closed

    def satisfied(self, table, values):
        """Whether the constraint with this table accepts the k-tuple `values`."""
        index = 0
        for v in values[:-1]:
            index = index * self.d + int(v)
        return int(table[index]) == int(values[-1])


def _latin_hypercubes(d, dims):
    cells = list(itertools.product(range(d), repeat=dims))
    position = {cell: i for i, cell in enumerate(cells)}
    table = [-1] * len(cells)
    found = []

    def conflicts(i, value):
        cell = cells[i]
        for axis in range(dims):
            for other in range(d):
                if other == cell[axis]:
                    continue
                neighbour = cell[:axis] + (other,) + cell[axis + 1:]
                if table[position[neighbour]] == value:
                    return True
        return False

    def fill(i):
        if len(found) > _CFG['backtrack_limit']:
            raise SizeGuardError("Constraint enumeration exceeded the backtracking guard")
        if i == len(cells):
            found.append(tuple(table))
            return
        for value in range(d):
            if not conflicts(i, value):
                table[i] = value
                fill(i + 1)
                table[i] = -1

    fill(0)
    return found


def enumerate_ue_constraints(d, k):
    """
    Enumerate every uniquely extendible constraint of arity k over {0..d-1}.

    A constraint is the graph of a Latin hypercube f: D^{k-1} -> D; the table holds
    f in row-major order. Empirical p_i is counted exactly against the all-zero tuple
    and compared with p_i_closed.
    """
    if d < 2 or k < 2 or d > 4 or d**(k - 1) > _CFG['ue_table_limit']:
        raise UnsupportedError(f"Constraint enumeration supports d <= 4 and d^(k-1) <= "
                               f"{_CFG['ue_table_limit']}, got d={d}, k={k}")
    tables = np.array(_latin_hypercubes(d, k - 1), dtype=np.int8)
    family = UEConstraintFamily(d, k, tables, [], [p_i_closed(i, d) for i in range(k + 1)])
    zero = (0,) * k
    hits = [0] * (k + 1)
    trials = [0] * (k + 1)
    accepting = [t for t in tables if family.satisfied(t, zero)]
    for values in itertools.product(range(d), repeat=k):
        i = sum(1 for v in values if v)
        for table in accepting:
            trials[i] += 1
            hits[i] += family.satisfied(table, values)
    family.p_empirical = [Fraction(h, t) for h, t in zip(hits, trials)]
    logger.debug("d=%d k=%d: %d constraints", d, k, family.size)
    return family
