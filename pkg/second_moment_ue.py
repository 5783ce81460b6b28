"""
Second-Moment Analysis for Uniquely Extendible Constraints

This module implements:
- ln Psi(omega, lambda, x, y, z) for a pair of assignments differing on an omega
  fraction of the variables, with the differing variables in a lambda fraction of slots
- OPT = OPT1 * OPT2 * OPT3, which bounds d^(2 gamma) Psi once lambda/(1-lambda) = ac/b
- Grid verification of the five optimization lemmas over the rectangles b = 1,
  0 <= a <= 1, 0 <= c <= 3 and a = 1, c >= 3 (d = 4)
- The region split that picks (a, b, c) for every lambda in (0, 1)
- The critical point at omega = lambda = 1 - 1/d and its Hessian
- Exact tiny-instance checks against the pair counts

All evaluation happens in log-domain; the column polynomial is factored as
(1+z)^k [1 + (d-1) ((1 - z/(d-1))/(1+z))^k] so large z never overflows.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import optimize
from scipy.special import gammaln, xlogy

from exact_counting import (exact_N0, exact_second_moment_linear, exact_second_moment_ue,
                            ue_pair_count_table)
from generating_functions import (C_eval, DomainError, Model, ModelParams, P_inverse, Q_eval,
                                  Q_inverse, UnsupportedError, log_q)
from lab_config import DEFAULTS, merged
from lab_reports import GridSpec, VerificationReport

logger = logging.getLogger(__name__)

THIRD = 1.0 / 3.0

# lowest s each lemma is stated for
LEMMA_FLOORS = {'flagekl': 7.0, 'stgekl': 6.0, 'einmi': 7.0, 'pukl': 6.0, 'lagr': 5.0}
MAX_RECORDED = 50

# (a, c) as functions of Q, the scale at which each stated cap holds, and the cap
PUKL_CAPS = {
    1: (5.0, 3.913),
    2: (4.0, 3.962),
    3: (6.0, 3.985),
    4: (4.0, 3.9),
}


@dataclass(frozen=True)
class PartitionPointUE:
    """A partition point (omega, lambda) with its parameters (a, b, c) and ln Psi."""

    omega: float
    lam: float
    a: float
    b: float
    c: float
    log_psi: float

    def to_dict(self):
        return asdict(self)


def _out(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def log_column_ue(z, k, d):
    """ln(d p(z)) = ln[(1+z)^k + (d-1)(1 - z/(d-1))^k] for z >= 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("The column polynomial is evaluated on z >= 0 only")
    ratio = (1.0 - z / (d - 1)) / (1.0 + z)
    return _out(k * np.log1p(z) + np.log1p((d - 1) * ratio**k))


def log_psi_ue(omega, lam, x, y, z, params, d=None):
    """
    ln Psi = omega [ln((d-1) q(x)) - ln(q(s) omega)]
           + (1-omega) [ln q(y) - ln(q(s)(1-omega))]
           + lambda k gamma ln(lambda s/(x z)) + (1-lambda) k gamma ln((1-lambda) s/y)
           + gamma ln(p(z)/d).

    Arguments broadcast. Terms with a zero weight contribute 0.
    """
    d = params.d if d is None else d
    omega, lam, x, y, z = (np.asarray(v, dtype=float) for v in (omega, lam, x, y, z))
    if np.any((omega < 0) | (omega > 1)) or np.any((lam < 0) | (lam > 1)):
        raise DomainError("Psi needs omega and lambda in [0, 1]")
    if np.any(x <= 0) or np.any(y <= 0) or np.any(z <= 0):
        raise DomainError("Psi needs x, y, z > 0")
    s, kg = params.s, params.kgamma
    rest, free = 1.0 - omega, 1.0 - lam
    ls = log_q(s)
    with np.errstate(divide='ignore', invalid='ignore'):
        variables = (np.where(omega > 0, omega * (math.log(d - 1) + np.asarray(log_q(x)) - ls), 0.0)
                     - xlogy(omega, omega)
                     + np.where(rest > 0, rest * (np.asarray(log_q(y)) - ls), 0.0)
                     - xlogy(rest, rest))
        slots = kg * (xlogy(lam, lam * s) - xlogy(lam, x * z)
                      + xlogy(free, free * s) - xlogy(free, y))
    column = params.gamma * (np.asarray(log_column_ue(z, params.k, d)) - 2 * math.log(d))
    return _out(variables + slots + column)


def log_opt_ue(x, y, z, s, d=4):
    """
    (ln OPT1, ln OPT2, ln OPT3) with

    OPT1 = (d-1) q(s x)/q(s) + q(s y)/q(s), OPT2 = (y + x z)^-Q,
    OPT3 = (1+z)^Q + (d-1) |1 - z/(d-1)|^Q.
    """
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    if np.any(x < 0) or np.any(y < 0) or np.any(z < 0):
        raise DomainError("OPT needs nonnegative parameters")
    inner = y + x * z
    if np.any(inner <= 0):
        raise DomainError("OPT2 needs y + x z > 0")
    Q = Q_eval(s)
    with np.errstate(divide='ignore'):
        log_opt1 = (np.logaddexp(math.log(d - 1) + np.asarray(log_q(s * x)),
                                 np.asarray(log_q(s * y))) - log_q(s))
        log_opt2 = -Q * np.log(inner)
        log_opt3 = np.logaddexp(Q * np.log1p(z),
                                math.log(d - 1) + Q * np.log(np.abs(1.0 - z / (d - 1))))
    return _out(log_opt1), _out(log_opt2), _out(log_opt3)


def opt_ue(x, y, z, s, d=4, components=False):
    """OPT(x, y, z, s); with components=True also the three factors."""
    logs = log_opt_ue(x, y, z, s, d)
    value = _out(np.exp(sum(np.asarray(v) for v in logs)))
    if components:
        return value, tuple(_out(np.exp(v)) for v in logs)
    return value


def inverted_opt(b, u, s):
    """
    OPT(1, b, 1/u, s) for d = 4 rewritten in u = 1/c, finite at u = 0:
    (3 + q(s b)/q(s)) (1 + b u)^-Q [(1+u)^Q + 3 |1/3 - u|^Q].
    """
    b, u = np.asarray(b, dtype=float), np.asarray(u, dtype=float)
    Q = Q_eval(s)
    with np.errstate(divide='ignore'):
        log_opt1 = np.logaddexp(math.log(3.0), np.asarray(log_q(s * b)) - log_q(s))
        log_opt2 = -Q * np.log1p(b * u)
        log_opt3 = np.logaddexp(Q * np.log1p(u), math.log(3.0) + Q * np.log(np.abs(THIRD - u)))
    return _out(np.exp(log_opt1 + log_opt2 + log_opt3))


def column_sum(x, y):
    """(1+x)^y + 3 (1 - x/3)^y."""
    x = np.asarray(x, dtype=float)
    return (1.0 + x)**y + 3.0 * (1.0 - x / 3.0)**y


def column_diff(x, y):
    """(1+x)^y - (1 - x/3)^y."""
    x = np.asarray(x, dtype=float)
    return (1.0 + x)**y - (1.0 - x / 3.0)**y


def inverted_sum(x, y):
    """(x+1)^y + 3 (1/3 - x)^y."""
    x = np.asarray(x, dtype=float)
    return (1.0 + x)**y + 3.0 * (THIRD - x)**y


def inverted_diff(x, y):
    """(x+1)^y - 3 (1/3 - x)^y."""
    x = np.asarray(x, dtype=float)
    return (1.0 + x)**y - 3.0 * (THIRD - x)**y


def pukl_points(Q):
    """The six (a, c) points joined by the bridge between the steep and flat regions."""
    edge = 1.0 - 7.0 / (15.0 * Q)
    return [(0.5, 1.0 / Q), (0.5, 2.0 / Q), (2.0 / 3.0, 2.0 / Q), (2.0 / 3.0, 3.0 / Q),
            (edge, 3.0 / Q), (edge, 1.0)]


def _sign_changes(values, tol):
    """
    Sign changes of the discrete derivative along the last axis, steps within the
    scaled tolerance counted as zero. Returns (changes, starts_rising) per row.
    """
    diffs = np.diff(values, axis=-1)
    scale = tol * np.maximum(1.0, np.abs(values[..., 1:]))
    signs = np.where(np.abs(diffs) <= scale, 0, np.sign(diffs))
    changes, rising = [], []
    for row in np.atleast_2d(signs):
        row = row[row != 0]
        changes.append(int(np.count_nonzero(row[1:] != row[:-1])))
        rising.append(bool(len(row) and row[0] > 0))
    return np.array(changes), np.array(rising)


def _monotone_failures(values, increasing, tol):
    """Indices of steps that break strict monotonicity."""
    diffs = np.diff(values, axis=-1)
    scale = tol * np.maximum(1.0, np.abs(values[..., 1:]))
    bad = diffs <= scale if increasing else diffs >= -scale
    return np.flatnonzero(bad)


def _record_failures(report, rule, failures, coords, description):
    for index in failures[:MAX_RECORDED]:
        report.add_violation(rule, description,
                             **{name: float(grid[index]) for name, grid in coords.items()})
    if len(failures) > MAX_RECORDED:
        report.add_violation(rule, f"{len(failures) - MAX_RECORDED} further failures "
                                   f"not listed", severity='WARNING')


def _log_fraction(value):
    return math.log(value.numerator) - math.log(value.denominator)


class UniqueExtSecondMoment:
    """Second-moment analysis for random uniquely extendible constraints."""

    def __init__(self, params, **overrides):
        """
        Parameters:
        -----------
        params : ModelParams
            'ue' parameters with a derived scale s (Q(s) = k gamma)
        **overrides
            Any key of DEFAULTS['momue']
        """
        if Model(params.model) is not Model.UE:
            raise DomainError(f"UniqueExtSecondMoment needs a 'ue' model, got {params.model}")
        if not params.s > 0:
            raise DomainError("UniqueExtSecondMoment needs parameters with a derived scale s")
        self.params = params
        self.parameters = merged('momue', **overrides)
        self.d = int(self.parameters['d'])
        if self.d < 2:
            raise DomainError(f"Domain size must be at least 2, got {self.d}")

    def _require_d4(self, what):
        if self.d != 4:
            raise UnsupportedError(f"{what} is stated for d = 4 only, got d={self.d}")

    # ------------------------------------------------------------------
    # Psi, stationary point, OPT
    # ------------------------------------------------------------------

    def log_psi(self, omega, lam, x, y, z):
        return log_psi_ue(omega, lam, x, y, z, self.params, self.d)

    def stationary_params(self, omega, lam):
        """Q(a) = l/w, Q(b) = (km-l)/(n-w), P(c) = k lambda."""
        omega, lam = float(omega), float(lam)
        if not (0 < omega < 1 and 0 < lam < 1):
            raise DomainError("stationary_params needs 0 < omega, lambda < 1")
        kg, k = self.params.kgamma, self.params.k
        a = Q_inverse(kg * lam / omega)
        b = Q_inverse(kg * (1.0 - lam) / (1.0 - omega))
        c = P_inverse(k * lam, k, self.d)
        return PartitionPointUE(omega, lam, a, b, c, self.log_psi(omega, lam, a, b, c))

    def opt(self, a, b, c, s=None):
        return opt_ue(a, b, c, self.params.s if s is None else s, self.d)

    def lagrkl_bound_check(self, omega, lam, a, b, c):
        """
        Compare ln Psi(omega, lambda, a s, b s, c) with -2 gamma ln d + ln OPT(a, b, c, s).

        Requires lambda/(1-lambda) = a c / b to 1e-10. Works on arrays of points.
        """
        omega, lam, a, b, c = (np.asarray(v, dtype=float) for v in (omega, lam, a, b, c))
        with np.errstate(divide='ignore'):
            ratio = lam / (1.0 - lam)
        if np.any(np.abs(ratio - a * c / b) > 1e-10 * np.maximum(1.0, ratio)):
            raise DomainError("lagrkl_bound_check needs lambda/(1-lambda) = a c / b")
        s = self.params.s
        lhs = np.asarray(self.log_psi(omega, lam, a * s, b * s, c))
        rhs = (-2.0 * self.params.gamma * math.log(self.d)
               + sum(np.asarray(v) for v in log_opt_ue(a, b, c, s, self.d)))
        return {'lhs': _out(lhs), 'rhs': _out(rhs), 'gap': _out(lhs - rhs),
                'holds': bool(np.all(lhs <= rhs + self.parameters['bound_tol']))}

    def lagrkl_sweep(self, points=None, seed=None):
        """Random sweep of the OPT bound over (omega, lambda) and matched (a, b, c)."""
        points = self.parameters['sweep_points'] if points is None else points
        seed = DEFAULTS['cli']['seed'] if seed is None else seed
        rng = np.random.default_rng(seed)
        omega = rng.uniform(0.01, 0.99, size=points)
        lam = rng.uniform(0.01, 0.99, size=points)
        a = rng.uniform(0.05, 2.0, size=points)
        b = rng.uniform(0.05, 2.0, size=points)
        c = b * lam / ((1.0 - lam) * a)
        gap = np.asarray(self.lagrkl_bound_check(omega, lam, a, b, c)['gap'])
        report = VerificationReport('lagrkl', parameters=self.params.to_dict(),
                                    grid={'points': points, 'seed': seed})
        for i in np.flatnonzero(gap > self.parameters['bound_tol'])[:MAX_RECORDED]:
            report.add_violation('lagrkl', 'ln Psi exceeds -2 gamma ln d + ln OPT',
                                 omega=float(omega[i]), lam=float(lam[i]), a=float(a[i]),
                                 b=float(b[i]), c=float(c[i]), gap=float(gap[i]))
        report.max_observed = float(gap.max())
        report.margin = float(-gap.max())
        logger.info("OPT bound sweep: %d points, max gap %.3e", points, gap.max())
        return report

    # ------------------------------------------------------------------
    # optimization lemmas
    # ------------------------------------------------------------------

    def verify_lemma(self, lemma_id, s=None, grid=None):
        """
        Verify one optimization lemma on a grid.

        Parameters:
        -----------
        lemma_id : str
            'flagekl', 'stgekl', 'einmi', 'pukl' or 'lagr'
        s : float
            Scale; defaults to the model's s
        grid : GridSpec
            Grid resolution and slice count

        Returns:
        --------
        VerificationReport. For the monotonicity lemmas and pukl the margin is
        4 minus the largest value off the touching endpoint; for einmi it is
        1 minus the worst sign-change count.
        """
        if lemma_id not in LEMMA_FLOORS:
            raise UnsupportedError(f"Unknown lemma id {lemma_id!r}")
        self._require_d4(lemma_id)
        s = self.params.s if s is None else float(s)
        grid = GridSpec() if grid is None else grid
        Q = Q_eval(s)
        report = VerificationReport(lemma_id, parameters={'s': s, 'Q': Q, 'd': self.d},
                                    grid=grid.to_dict())
        if s < LEMMA_FLOORS[lemma_id] - 1e-9:
            report.add_violation('precondition',
                                 f"s={s:g} is below the floor {LEMMA_FLOORS[lemma_id]:g} "
                                 f"of {lemma_id}", s=s,
                                 action='Rerun at or above the stated floor')
        frame, peak = getattr(self, '_verify_' + lemma_id)(report, s, Q, grid)
        report.values = frame
        report.max_observed = float(peak)
        report.margin = (1.0 if lemma_id == 'einmi' else 4.0) - report.max_observed
        logger.info("%s at s=%g: max %.6f, %d violations", lemma_id, s,
                    report.max_observed, len(report.violations))
        return report

    @staticmethod
    def flat_A(c, Q):
        """a on the flat line from 1 - 7/(10Q) at c = 0 to 1 at c = 3."""
        return 7.0 * np.asarray(c, dtype=float) / (30.0 * Q) + 1.0 - 7.0 / (10.0 * Q)

    @staticmethod
    def steep_A(c, Q):
        return Q * np.asarray(c, dtype=float) / 2.0

    @staticmethod
    def lagr_B(u, Q):
        """b along the a = 1 edge, with u = 1/c in (0, 1/3]."""
        return 1.0 + 3.0 * np.asarray(u, dtype=float) / (2.0 * Q) - 1.0 / (2.0 * Q)

    def _verify_flagekl(self, report, s, Q, grid):
        c = np.linspace(1.0, 3.0, grid.resolution_1d)
        A = self.flat_A(c, Q)
        values = np.asarray(self.opt(A, 1.0, c, s))
        report.add_check('flagekl: OPT(1, 1, 3) = 4', abs(values[-1] - 4.0),
                         self.parameters['bound_tol'], '<=')
        failures = _monotone_failures(values, True, self.parameters['monotone_tol'])
        _record_failures(report, 'strictly_increasing', failures, {'c': c[1:]},
                         'OPT(A(c), 1, c) does not strictly increase')
        self._flagekl_checks(report, s, Q)
        return pd.DataFrame({'c': c, 'a': A, 'opt': values}), values[:-1].max()

    @staticmethod
    def flagekl_slope(s):
        """Derivative of the K-side at c = 3, written in s only."""
        s = np.asarray(s, dtype=float)
        em1 = np.expm1(s)
        q = em1 - s
        return _out(7 * np.exp(s) * q / (10 * em1**2) + 21 * q / (10 * s * em1))

    def _flagekl_checks(self, report, s, Q):
        report.add_check('flagekl: slope at c=3 for s=7', self.flagekl_slope(7.0), 0.995, '<')
        report.add_check('flagekl: slope at c=3', self.flagekl_slope(s), 1.0, '<')
        grid_s = np.linspace(7.0, 40.0, 512)
        report.add_check('flagekl: slope decreasing on s in [7, 40]',
                         float(np.diff(self.flagekl_slope(grid_s)).max()), 0.0, '<')
        report.add_check('flagekl: 4 (1/3)^(Q-1) < 7/(15Q)', 4.0 * THIRD**(Q - 1),
                         7.0 / (15.0 * Q), '<')
        c = np.linspace(0.0, 3.0, 1025)
        lhs = column_sum(c, Q) - c * column_diff(c, Q - 1)
        residual = np.abs(lhs - column_sum(c, Q - 1)) / column_sum(c, Q - 1)
        report.add_check('flagekl: column sum identity', float(residual.max()), 1e-12, '<=')
        c = np.linspace(1.0, 3.0, 1025)[:-1]
        gap = self.flat_A(c, Q) - column_diff(c, Q - 1) / column_sum(c, Q - 1)
        report.add_check('flagekl: A below the column ratio on [1, 3)', float(gap.max()),
                         0.0, '<')

    def _verify_stgekl(self, report, s, Q, grid):
        c = np.linspace(0.0, 1.0 / Q, grid.resolution_1d)
        A = self.steep_A(c, Q)
        values = np.asarray(self.opt(A, 1.0, c, s))
        report.add_check('stgekl: OPT(0, 1, 0) = 4', abs(values[0] - 4.0),
                         self.parameters['bound_tol'], '<=')
        failures = _monotone_failures(values, False, self.parameters['monotone_tol'])
        _record_failures(report, 'strictly_decreasing', failures, {'c': c[1:]},
                         'OPT(Qc/2, 1, c) does not strictly decrease')
        report.add_check('stgekl: 3s e^(s/2) < e^s - 1',
                         math.log(3 * s) + s / 2, math.log(math.expm1(s)), '<')
        inner = c[1:]
        gap = self.steep_A(inner, Q) - column_diff(inner, Q - 1) / column_sum(inner, Q - 1)
        report.add_check('stgekl: A above the column ratio on (0, 1/Q]', float(gap.min()),
                         0.0, '>')
        return pd.DataFrame({'c': c, 'a': A, 'opt': values}), values[1:].max()

    def _verify_einmi(self, report, s, Q, grid):
        tol = self.parameters['monotone_tol']
        fixed_a = np.linspace(0.0, 1.0, grid.slices)
        fixed_c = np.linspace(0.0, 3.0, grid.slices)
        c_axis = np.linspace(0.0, 3.0, grid.resolution_1d)
        a_axis = np.linspace(0.0, 1.0, grid.resolution_1d)
        frames = []
        worst = 0
        for label, fixed, axis, values in (
                ('a', fixed_a, c_axis,
                 np.asarray(self.opt(fixed_a[:, np.newaxis], 1.0, c_axis[np.newaxis, :], s))),
                ('c', fixed_c, a_axis,
                 np.asarray(self.opt(a_axis[np.newaxis, :], 1.0, fixed_c[:, np.newaxis], s)))):
            changes, rising = _sign_changes(values, tol)
            bad = (changes > 1) | ((changes == 1) & rising)
            for i in np.flatnonzero(bad)[:MAX_RECORDED]:
                report.add_violation('unique_minimum',
                                     f"OPT along a frozen-{label} slice has "
                                     f"{changes[i]} slope sign changes", **{label: float(fixed[i])},
                                     starts_rising=bool(rising[i]))
            worst = max(worst, int(changes.max()))
            frames.append(pd.DataFrame({'slice': label, 'fixed': fixed, 'sign_changes': changes,
                                        'argmin': axis[np.argmin(values, axis=1)],
                                        'min': values.min(axis=1)}))
        return pd.concat(frames, ignore_index=True), worst

    def _verify_pukl(self, report, s, Q, grid):
        cap = 4.0 - self.parameters['margin']
        points = pukl_points(Q)
        rows = []
        for index, (a, c) in enumerate(points):
            value = float(self.opt(a, 1.0, c, s))
            row = {'point': index, 'a': a, 'c': c, 'opt': value,
                   'bound_s': np.nan, 'bound': np.nan, 'cap': np.nan}
            if value >= cap:
                report.add_violation('below_4', f"OPT reaches 4 - {self.parameters['margin']:g}",
                                     a=a, c=c, opt=value)
            if index in PUKL_CAPS:
                bound_s, stated = PUKL_CAPS[index]
                bound = self.pukl_bound(index, bound_s)
                report.add_check(f"pukl: point {index} bound at s={bound_s:g}", bound, stated, '<')
                row.update(bound_s=bound_s, bound=bound, cap=stated)
            rows.append(row)
        s_axis = np.linspace(4.0, 40.0, 361)
        for a in (0.5, 2.0 / 3.0):
            opt1 = np.exp(np.asarray(np.logaddexp(math.log(3.0) + np.asarray(log_q(s_axis * a))
                                                  - np.asarray(log_q(s_axis)), 0.0)))
            report.add_check(f"pukl: OPT1({a:.4g}, s) decreasing in s",
                             float(np.diff(opt1).max()), 0.0, '<')
        s_axis = np.linspace(4.0, 20.0, 161)
        edge = 1.0 - 7.0 / (15.0 * np.asarray(Q_eval(s_axis)))
        ratio = np.exp(np.asarray(log_q(s_axis * edge)) - np.asarray(log_q(s_axis)))
        report.add_check('pukl: q(sa)/q(s) below e^(-7/15) on the flat edge',
                         float(ratio.max()), math.exp(-7.0 / 15.0), '<')
        frame = pd.DataFrame(rows)
        return frame, frame['opt'].max()

    @staticmethod
    def pukl_bound(index, s):
        """
        The split bound OPT1 (first + second) at scale s for the bridge points 1-4,
        with the first summand replaced by its exponential cap where one applies.
        """
        Q = Q_eval(s)
        a, c = pukl_points(Q)[index]
        second = 3.0 * ((1.0 - c / 3.0) / (1.0 + a * c))**Q
        if index == 4:
            first = ((1.0 + c) / (1.0 + a * c))**Q
            return (3.0 * math.exp(-7.0 / 15.0) + 1.0) * (first + second)
        first = math.exp(Q * c * (1.0 - a))
        opt1 = 3.0 * math.exp(log_q(s * a) - log_q(s)) + 1.0
        return opt1 * (first + second)

    def _verify_lagr(self, report, s, Q, grid):
        u = np.linspace(1e-3, THIRD, grid.resolution_1d)
        B = self.lagr_B(u, Q)
        values = np.asarray(inverted_opt(B, u, s))
        report.add_check('lagr: OPT(1, B(1/3), 3) = 4', abs(values[-1] - 4.0),
                         self.parameters['bound_tol'], '<=')
        direct = np.asarray(self.opt(1.0, B, 1.0 / u, s))
        report.add_check('lagr: rescaled form matches OPT',
                         float(np.max(np.abs(direct - values) / values)), 1e-10, '<=')
        failures = _monotone_failures(values, True, self.parameters['monotone_tol'])
        _record_failures(report, 'strictly_decreasing_in_c', failures, {'c': 1.0 / u[1:]},
                         'OPT(1, B(1/c), c) does not strictly decrease in c')
        self._lagr_checks(report, s, Q)
        return pd.DataFrame({'c': 1.0 / u, 'b': B, 'opt': values}), values[:-1].max()

    @staticmethod
    def lagr_slope(s):
        """K'(1 + Bc - c) + K (B'c + B - 1) at c = 1/3, written in s only."""
        s = np.asarray(s, dtype=float)
        em1 = np.expm1(s)
        q = em1 - s
        return _out(3 * q * np.exp(s) / (2 * em1**2) + q / (2 * s * em1))

    def _lagr_checks(self, report, s, Q):
        report.add_check('lagr: slope at c=1/3', self.lagr_slope(s), 3.0, '<')
        report.add_check('lagr: slope on s in [2, 50]',
                         float(np.max(self.lagr_slope(np.linspace(2.0, 50.0, 961)))), 3.0, '<')
        tail = THIRD**(Q - 2)
        report.add_check('lagr: B(0) below the inverted ratio', 1.0 - 1.0 / (2.0 * Q),
                         (1.0 - tail) / (1.0 + tail), '<')
        u = np.linspace(0.0, THIRD, 1025)[:-1]
        gap = self.lagr_B(u, Q) - inverted_diff(u, Q - 1) / inverted_sum(u, Q - 1)
        report.add_check('lagr: B below the inverted ratio on [0, 1/3)', float(gap.max()),
                         0.0, '<')

    # ------------------------------------------------------------------
    # region split over lambda
    # ------------------------------------------------------------------

    @staticmethod
    def region_bounds(Q):
        """Upper ends of P = lambda/(1-lambda) for the steep, bridge and flat regions."""
        return 1.0 / (2.0 * Q), 1.0 - 7.0 / (15.0 * Q), 3.0

    @classmethod
    def region_params(cls, region, P, Q):
        """(a, b, c) chosen by one region of the split, with a c / b = P."""
        P = np.asarray(P, dtype=float)
        ones = np.ones_like(P)
        if region == 'steep':
            c = np.sqrt(2.0 * P / Q)
            return cls.steep_A(c, Q), ones, c
        if region == 'bridge':
            points = pukl_points(Q)
            a, c = np.full_like(P, np.nan), np.full_like(P, np.nan)
            for (a0, c0), (a1, c1) in zip(points[:-1], points[1:]):
                on = (P >= a0 * c0 * (1 - 1e-12)) & (P <= a1 * c1 * (1 + 1e-12)) & np.isnan(a)
                if a0 == a1:
                    a[on], c[on] = a0, P[on] / a0
                else:
                    a[on], c[on] = P[on] / c0, c0
            return a, ones, c
        if region == 'flat':
            alpha = 7.0 / (30.0 * Q)
            beta = 1.0 - 7.0 / (10.0 * Q)
            c = (-beta + np.sqrt(beta**2 + 4 * alpha * P)) / (2 * alpha)
            return cls.flat_A(c, Q), ones, c
        if region == 'edge':
            alpha = 3.0 / (2.0 * Q)
            beta = 1.0 - 1.0 / (2.0 * Q)
            u = (-beta + np.sqrt(beta**2 + 4 * alpha / P)) / (2 * alpha)
            return ones, cls.lagr_B(u, Q), 1.0 / u
        raise UnsupportedError(f"Unknown region {region!r}")

    def _psi_level_bound(self, a, b, c, s):
        """d^(2 gamma) max_omega Psi: OPT1 * OPT2 * (d p(c))^gamma."""
        log_opt1, log_opt2, _ = log_opt_ue(a, b, c, s, self.d)
        column = np.asarray(log_column_ue(c, self.params.k, self.d))
        return np.exp(np.asarray(log_opt1) + np.asarray(log_opt2) + self.params.gamma * column)

    def verify_theorem_unopt(self, lambda_grid=None):
        """
        For every lambda on a grid in (0, 1) pick (a, b, c) by the region split on
        P = lambda/(1-lambda) and check OPT <= 4 everywhere and the Psi-level bound
        <= 4 - margin outside the epsilon-neighborhood of 3/4.
        """
        self._require_d4('unopt')
        N = self.parameters['lambda_grid'] if lambda_grid is None else lambda_grid
        s, Q = self.params.s, self.params.Q
        eps = self.parameters['epsilon']
        report = VerificationReport('unopt', parameters=self.params.to_dict(),
                                    grid={'lambda_grid': N, 'epsilon': eps})
        if s < 7 - 1e-9:
            report.add_violation('precondition', f"s={s:g} is below 7", s=s,
                                 action='Choose k, gamma with Q(s) = k gamma >= Q(7)')

        lam = np.arange(1, N + 1) / (N + 1.0)
        P = lam / (1.0 - lam)
        steep, bridge, flat = self.region_bounds(Q)
        region = np.select([P <= steep, P <= bridge, P <= flat], ['steep', 'bridge', 'flat'],
                           default='edge')
        a, b, c = np.full_like(P, np.nan), np.full_like(P, np.nan), np.full_like(P, np.nan)
        for label in ('steep', 'bridge', 'flat', 'edge'):
            mask = region == label
            if mask.any():
                for target, value in zip((a, b, c), self.region_params(label, P[mask], Q)):
                    target[mask] = value
        uncovered = np.flatnonzero(np.isnan(a) | np.isnan(c))
        for index in uncovered[:MAX_RECORDED]:
            report.add_violation('region_gap', 'no region of the split covers this lambda',
                                 lam=float(lam[index]), P=float(P[index]))
        covered = ~(np.isnan(a) | np.isnan(c))

        values = np.full_like(P, np.nan)
        psi_bound = np.full_like(P, np.nan)
        values[covered] = self.opt(a[covered], b[covered], c[covered])
        psi_bound[covered] = self._psi_level_bound(a[covered], b[covered], c[covered], s)
        inside = np.abs(lam - 0.75) < eps

        over = np.flatnonzero(values > 4.0 + self.parameters['bound_tol'])
        for index in over[:MAX_RECORDED]:
            report.add_violation('opt_above_4', 'OPT exceeds 4', lam=float(lam[index]),
                                 region=str(region[index]), opt=float(values[index]))
        cap = 4.0 - self.parameters['margin']
        weak = np.flatnonzero(~inside & (psi_bound > cap))
        for index in weak[:MAX_RECORDED]:
            report.add_violation('no_margin', 'Psi-level bound reaches 4 outside the '
                                              'epsilon-neighborhood',
                                 lam=float(lam[index]), region=str(region[index]),
                                 psi_bound=float(psi_bound[index]))
        report.add_check('region continuity (relative OPT jump)', self._region_continuity(Q, s),
                         self.parameters['continuity_rtol'], '<=')

        report.values = pd.DataFrame({'lambda': lam, 'P': P, 'region': region, 'a': a, 'b': b,
                                      'c': c, 'opt': values, 'psi_bound': psi_bound,
                                      'inside': inside})
        report.max_observed = float(np.nanmax(values))
        report.margin = float(4.0 - np.nanmax(psi_bound[~inside]))
        logger.info("Region split on %d lambda points: max OPT %.6f, margin %.3e",
                    N, report.max_observed, report.margin)
        return report

    def _region_continuity(self, Q, s):
        """Largest relative OPT jump between adjacent regions at their common P."""
        worst = 0.0
        order = ('steep', 'bridge', 'flat', 'edge')
        for left, boundary in zip(order, self.region_bounds(Q)):
            right = order[order.index(left) + 1]
            one = float(self.opt(*(np.asarray(v).item() for v in
                                   self.region_params(left, [boundary], Q)), s=s))
            two = float(self.opt(*(np.asarray(v).item() for v in
                                   self.region_params(right, [boundary], Q)), s=s))
            worst = max(worst, abs(one - two) / max(one, two))
        return worst

    # ------------------------------------------------------------------
    # critical point
    # ------------------------------------------------------------------

    @property
    def center(self):
        return 1.0 - 1.0 / self.d

    def hessian_closed_form(self):
        """
        Hessian of ln Psi in (omega, lambda) at omega = lambda = 1 - 1/d with stationary
        (a, b, c): [[-e (1 + 1/C), X], [X, -X]], e = d^2/(d-1), X = e/C(s).
        """
        e = self.d**2 / (self.d - 1.0)
        X = e / C_eval(self.params.s)
        return np.array([[-e - X, X], [X, -X]])

    def _log_psi_reduced(self, v):
        return self.stationary_params(v[0], v[1]).log_psi

    def gradient_analytic(self, omega, lam):
        """
        d/d omega = ln(d-1) + ln q(a) - ln q(b) - ln omega + ln(1-omega),
        d/d lambda = k gamma ln(lambda b / ((1-lambda) a c)), with (a, b, c) stationary.
        """
        p = self.stationary_params(omega, lam)
        d_omega = (math.log(self.d - 1) + log_q(p.a) - log_q(p.b)
                   - math.log(p.omega) + math.log1p(-p.omega))
        d_lam = self.params.kgamma * (math.log(p.lam * p.b) - math.log1p(-p.lam)
                                      - math.log(p.a * p.c))
        return np.array([d_omega, d_lam])

    def _central(self, v, h):
        grad = np.zeros(len(v))
        for i in range(len(v)):
            e = np.zeros(len(v))
            e[i] = h
            grad[i] = (self._log_psi_reduced(v + e) - self._log_psi_reduced(v - e)) / (2 * h)
        return grad

    def _second_differences(self, v, h):
        f = self._log_psi_reduced
        n = len(v)
        H = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                ei, ej = np.zeros(n), np.zeros(n)
                ei[i], ej[j] = h, h
                H[i, j] = (f(v + ei + ej) - f(v + ei - ej)
                           - f(v - ei + ej) + f(v - ei - ej)) / (4 * h * h)
                H[j, i] = H[i, j]
        return H

    def gradient_numeric(self, v=None):
        """Central differences with one Richardson step; v defaults to the center."""
        v = np.full(2, self.center) if v is None else np.asarray(v, dtype=float)
        h = self.parameters['hessian_step']
        return (4 * self._central(v, h / 2) - self._central(v, h)) / 3

    def hessian_numeric(self):
        v = np.full(2, self.center)
        h = self.parameters['hessian_step']
        return (4 * self._second_differences(v, h / 2) - self._second_differences(v, h)) / 3

    def critical_point_check(self):
        """Stationary solve, value, gradient and Hessian at omega = lambda = 1 - 1/d."""
        report = VerificationReport('critical-ue', parameters=self.params.to_dict(),
                                    grid={'hessian_step': self.parameters['hessian_step']})
        s, d = self.params.s, self.d
        point = self.stationary_params(self.center, self.center)
        report.add_check('a = s at the center', abs(point.a - s) / s, 1e-9, '<=')
        report.add_check('b = s at the center', abs(point.b - s) / s, 1e-9, '<=')
        report.add_check('c = d - 1 at the center', abs(point.c - (d - 1)), 1e-8, '<=')
        expected = (1.0 - 2.0 * self.params.gamma) * math.log(d)
        report.add_check('ln Psi = (1 - 2 gamma) ln d', abs(point.log_psi - expected),
                         self.parameters['bound_tol'], '<=')

        tol = self.parameters['gradient_tol']
        report.add_check('analytic gradient at center',
                         float(np.abs(self.gradient_analytic(self.center, self.center)).max()),
                         tol, '<=')
        report.add_check('numeric gradient at center',
                         float(np.abs(self.gradient_numeric()).max()), tol, '<=')

        closed = self.hessian_closed_form()
        numeric = self.hessian_numeric()
        rel = np.abs(numeric - closed) / np.abs(closed)
        for i, j in np.argwhere(rel > self.parameters['hessian_rtol']):
            report.add_violation('hessian_entry', 'numeric and closed-form Hessian differ',
                                 row=int(i), col=int(j), numeric=float(numeric[i, j]),
                                 closed=float(closed[i, j]))
        eigenvalues = np.linalg.eigvalsh(numeric)
        report.add_check('eigenvalues of H_numeric', float(eigenvalues.max()), 0.0, '<')

        report.values = pd.DataFrame({'closed': closed.ravel(), 'numeric': numeric.ravel()})
        report.max_observed = float(eigenvalues.max())
        report.margin = float(-eigenvalues.max())
        return report

    # ------------------------------------------------------------------
    # tiny instances
    # ------------------------------------------------------------------

    def tiny_instance_check(self, n, k, m, d=None):
        """
        For every (w, l) with 0 < l < km compare the exact N/(N0 |Gamma|^m) with
        Psi^n * B, B = q(s)^n (km/s)^km l! (km-l)! / (l^l (km-l)^(km-l) N0), minimizing
        Psi over log-parameters. Also reports E[X^2]/E[X]^2 and, for d = 2, the
        agreement with the parity count.
        """
        d = self.d if d is None else d
        params = ModelParams(Model.UE, k, m / n)
        s = params.s
        km = k * m
        n0 = exact_N0(n, k, m).value
        if n0 == 0:
            raise DomainError(f"No formulas exist for n={n}, k={k}, m={m}")
        report = VerificationReport('tiny-ue', parameters={'n': n, 'k': k, 'm': m, 'd': d,
                                                           's': s})
        rows = []
        for row in ue_pair_count_table(n, k, m, d).itertuples():
            if row.l in (0, km):
                continue
            log_psi = self._minimize_log_psi(n, km, row.w, row.l, params, d)
            slots = np.array([row.l, km - row.l], dtype=float)
            log_B = (n * log_q(s) + km * math.log(km / s)
                     + float(np.sum(gammaln(slots + 1.0) - xlogy(slots, slots)))
                     - math.log(n0))
            log_ratio = _log_fraction(row.N) - m * math.log(d) - math.log(n0)
            rows.append({'w': row.w, 'l': row.l, 'log_N_over_N0': log_ratio,
                         'n_log_psi': n * log_psi, 'log_B': log_B,
                         'slack': log_ratio - n * log_psi - log_B})
        frame = pd.DataFrame(rows, columns=['w', 'l', 'log_N_over_N0', 'n_log_psi', 'log_B',
                                            'slack'])
        for row in frame[frame['slack'] > self.parameters['bound_tol']].itertuples():
            report.add_violation('bound', 'N/N0 exceeds Psi^n * B', w=row.w, l=row.l,
                                 slack=row.slack)
        second = exact_second_moment_ue(n, k, m, d)
        report.add_check('E[X^2]/E[X]^2', float(second / (d**(n - m))**2), 10.0, '<=')
        if d == 2:
            report.add_check('agrees with parity count',
                             float(abs(second - exact_second_moment_linear(n, k, m, 2))),
                             0.0, '==')
        report.values = frame
        report.max_observed = float(second / (d**(n - m))**2)
        report.margin = float(-frame['slack'].max()) if len(frame) else np.nan
        return report

    @staticmethod
    def _minimize_log_psi(n, km, w, l, params, d):
        omega, lam = w / n, l / km

        def start(slots, variables):
            t = slots / variables
            return math.log(Q_inverse(t)) if t > 2 + 1e-6 else math.log(1e-3)

        u0 = np.array([start(l, w), start(km - l, n - w),
                       math.log(P_inverse(params.k * lam, params.k, d))])

        def objective(u):
            x, y, z = np.exp(u)
            return log_psi_ue(omega, lam, x, y, z, params, d)

        result = optimize.minimize(objective, u0, method='L-BFGS-B',
                                   bounds=[(-30.0, math.log(50.0))] * 2 + [(-10.0, 10.0)])
        return min(float(result.fun), objective(u0))

    # ------------------------------------------------------------------
    # surfaces
    # ------------------------------------------------------------------

    def surface(self, which='fig2', s_values=None, resolution=None):
        """
        fig2: OPT(a, 1, c) on [0, 1] x [0, 3]; fig3: OPT(1, b, 1/u) in u = 1/c on
        [0, 1] x [0, 1/3]. Rows (param1, param2, s, value).
        """
        s_values = DEFAULTS['cli']['surface_s'] if s_values is None else s_values
        resolution = DEFAULTS['cli']['surface_resolution'] if resolution is None else resolution
        if which == 'fig2':
            upper = 3.0
        elif which == 'fig3':
            self._require_d4('fig3')
            upper = THIRD
        else:
            raise UnsupportedError(f"The UE analysis draws fig2 and fig3, got {which!r}")
        p1, p2 = np.meshgrid(np.linspace(0.0, 1.0, resolution),
                             np.linspace(0.0, upper, resolution), indexing='ij')
        frames = []
        for s in s_values:
            if which == 'fig2':
                values = opt_ue(p1, 1.0, p2, s, self.d)
            else:
                values = inverted_opt(p1, p2, s)
            frames.append(pd.DataFrame({'param1': p1.ravel(), 'param2': p2.ravel(),
                                        's': float(s), 'value': np.ravel(values)}))
        return pd.concat(frames, ignore_index=True)
