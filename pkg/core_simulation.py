"""
Random Constraint Systems: Generation, 2-Core Peeling and Threshold Location

This module implements:
- Reproducible generation of random k-ary systems (mod 2, mod 3, uniquely extendible)
- Peeling to the 2-core and the Poisson fixed-point predictor of its size
- Exact solvers: packed Gaussian elimination for equations, propagation with
  backtracking for extendible tables, both back-filling peeled variables
- Monte Carlo estimation of the satisfiability threshold by bisection with Wilson
  intervals, transition sweeps and width, and the analytic core-density-1 value

Every random draw comes from a Philox stream keyed by (seed, trial, purpose), so a
result does not depend on the number of worker threads.
"""

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy import optimize, stats

import sim_kernels
from exact_counting import enumerate_ue_constraints
from generating_functions import (ConvergenceError, DomainError, Model, ModelParams,
                                  SizeGuardError, ThresholdLabError, UnsupportedError)
from lab_config import DEFAULTS, merged

logger = logging.getLogger(__name__)

_CFG = DEFAULTS['sim']

# third word of every stream key
PURPOSES = {'generate': 0, 'tables': 1, 'order': 2}


def stream(seed, trial, purpose='generate'):
    """Counter-based generator for one (seed, trial, purpose) triple."""
    key = np.random.SeedSequence([int(seed), int(trial), PURPOSES[purpose]])
    return np.random.Generator(np.random.Philox(key))


@dataclass
class Formula:
    """
    A random system over n variables.

    clause_vars holds the k variable indices of each clause (repeats allowed);
    payload holds the right-hand side for equations and the table id for
    extendible constraints, which index rows of `tables`.
    """

    params: ModelParams
    n: int
    clause_vars: np.ndarray
    payload: np.ndarray
    tables: np.ndarray = None
    seed: int = None
    trial: int = 0

    def __post_init__(self):
        self.clause_vars = np.ascontiguousarray(self.clause_vars, dtype=np.int64).reshape(-1, self.params.k)
        self.payload = np.ascontiguousarray(self.payload, dtype=np.int64)
        if len(self.payload) != len(self.clause_vars):
            raise DomainError("Every clause needs exactly one payload")
        if len(self.clause_vars) and (self.clause_vars.min() < 0 or self.clause_vars.max() >= self.n):
            raise DomainError(f"Variable indices must lie in [0, {self.n})")
        if self.params.model is Model.UE:
            if self.tables is None:
                raise DomainError("Extendible systems need their constraint tables")
            self.tables = np.ascontiguousarray(self.tables, dtype=np.int8)
        elif len(self.payload) and (self.payload.min() < 0 or self.payload.max() >= self.d):
            raise DomainError(f"Right-hand sides must lie in [0, {self.d})")

    @property
    def m(self):
        return len(self.clause_vars)

    @property
    def k(self):
        return self.params.k

    @property
    def d(self):
        return self.params.d

    @property
    def clauses(self):
        return [(tuple(int(v) for v in vs), int(p)) for vs, p in zip(self.clause_vars, self.payload)]

    def restrict(self, clause_mask):
        """The subsystem keeping the masked clauses, over the same n variables."""
        clause_mask = np.asarray(clause_mask, dtype=bool)
        return Formula(self.params, self.n, self.clause_vars[clause_mask],
                       self.payload[clause_mask], self.tables, self.seed, self.trial)

    def clause_status(self, values):
        """
        Which clauses an assignment satisfies.

        `values` may stack several assignments along leading axes; the result has
        shape values.shape[:-1] + (m,).
        """
        values = np.asarray(values, dtype=np.int64)
        cells = values[..., self.clause_vars]
        if self.params.model.is_linear:
            return (cells.sum(axis=-1) - self.payload) % self.d == 0
        weights = self.d ** np.arange(self.k - 2, -1, -1, dtype=np.int64)
        index = cells[..., :-1] @ weights
        return self.tables[self.payload, index] == cells[..., -1]

    def satisfied_by(self, values):
        return bool(self.clause_status(values).all())


@dataclass
class CoreReport:
    """Result of peeling a formula to its 2-core."""

    n_core: int
    m_core: int
    rounds: int
    var_in_core: np.ndarray = field(repr=False)
    clause_in_core: np.ndarray = field(repr=False)
    peel_clause: np.ndarray = field(repr=False)
    peel_pivot: np.ndarray = field(repr=False)

    @property
    def density(self):
        return self.m_core / self.n_core if self.n_core else 0.0

    @property
    def empty(self):
        return self.n_core == 0

    def to_dict(self):
        return {'n_core': self.n_core, 'm_core': self.m_core,
                'density': self.density, 'rounds': self.rounds}


@dataclass
class ThresholdEstimate:
    """Bisection estimate of the gamma where Pr[SAT] = 1/2."""

    gamma_hat: float
    ci_low: float
    ci_high: float
    trials_per_point: int
    n: int
    seed: int
    model: str
    k: int
    points: pd.DataFrame = field(repr=False, default=None)
    log: pd.DataFrame = field(repr=False, default=None)

    def __post_init__(self):
        if not self.ci_low <= self.gamma_hat <= self.ci_high:
            raise ConvergenceError(f"Estimate {self.gamma_hat} outside [{self.ci_low}, {self.ci_high}]")

    def overlaps(self, other):
        return self.ci_low <= other.ci_high and other.ci_low <= self.ci_high

    def to_dict(self):
        return {'gamma_hat': self.gamma_hat, 'ci_low': self.ci_low, 'ci_high': self.ci_high,
                'trials_per_point': self.trials_per_point, 'n': self.n, 'seed': self.seed,
                'model': self.model, 'k': self.k}


# ----------------------------------------------------------------------
# Extendible constraint tables
# ----------------------------------------------------------------------

@lru_cache(maxsize=None)
def latin_squares(d):
    """Every order-d Latin square as a row-major table of x3 = L(x1, x2)."""
    return enumerate_ue_constraints(d, 3).tables


def compose_tables(squares, k, d):
    """
    The arity-k table f(x1..x_{k-1}) = L_{k-2}(...L_2(L_1(x1, x2), x3)..., x_{k-1}).

    Each step is a quasigroup operation, so f is extendible in every slot.
    """
    cells = np.array(list(itertools.product(range(d), repeat=k - 1)), dtype=np.int64)
    acc = cells[:, 0]
    for j, square in enumerate(squares, start=1):
        acc = square[acc * d + cells[:, j]].astype(np.int64)
    return acc.astype(np.int8)


def ue_tables(k, d, rng, pool=None):
    """
    Constraint tables for one trial.

    Arity 3 uses the whole Latin-square family, so a uniform id is a uniform
    constraint. Larger arities draw `pool` composed tables, which are not uniform
    over all extendible constraints.
    """
    squares = latin_squares(d)
    if k == 3:
        return squares
    pool = pool or _CFG['ue_table_pool']
    picks = rng.integers(0, len(squares), size=(pool, k - 2))
    return np.stack([compose_tables([squares[i] for i in row], k, d) for row in picks])


# ----------------------------------------------------------------------
# Core predictor and analytic threshold
# ----------------------------------------------------------------------

def predict_core(k, gamma, tol=None, max_iter=None):
    """
    Predict the 2-core of a random k-uniform system with gamma n clauses.

    Iterates x = k gamma (1 - e^-x)^(k-1) down from x = k gamma to its largest root.

    Returns:
    --------
    tuple
        (nu, mu, density): core variables per n, core clauses per n, and mu / nu
        (all zero when only the trivial root exists)
    """
    if k < 3:
        raise DomainError(f"predict_core needs k >= 3, got {k}")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    tol = tol or _CFG['core_tol']
    max_iter = max_iter or _CFG['core_max_iter']
    kg = k * gamma
    x = kg
    for _ in range(max_iter):
        nxt = kg * (-math.expm1(-x)) ** (k - 1)
        if abs(nxt - x) <= tol * max(1.0, x):
            x = nxt
            break
        x = nxt
    else:
        logger.debug("predict_core(k=%d, gamma=%.6f): fixed point not settled after %d steps", k, gamma, max_iter)
    if x < 1e-8:
        return 0.0, 0.0, 0.0
    nu = -math.expm1(-x) - x * math.exp(-x)
    mu = gamma * (-math.expm1(-x)) ** k
    return nu, mu, mu / nu


def analytic_T(k):
    """The gamma at which the predicted core density crosses 1."""
    def excess(gamma):
        return predict_core(k, gamma)[2] - 1.0

    return optimize.brentq(excess, 1.0 / k, 1.0, xtol=1e-12)


# ----------------------------------------------------------------------
# Statistics
# ----------------------------------------------------------------------

def wilson_interval(successes, trials, confidence=None):
    """Wilson score interval for a binomial proportion."""
    confidence = confidence or _CFG['confidence']
    if trials <= 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _crossing(gammas, values, level):
    """First gamma where a (decreasing) curve drops below level, by linear interpolation."""
    gammas = np.asarray(gammas, dtype=float)
    values = np.asarray(values, dtype=float)
    below = np.flatnonzero(values < level)
    if len(below) == 0:
        return float(gammas[-1])
    i = below[0]
    if i == 0:
        return float(gammas[0])
    g0, g1, v0, v1 = gammas[i - 1], gammas[i], values[i - 1], values[i]
    return float(g0 + (v0 - level) * (g1 - g0) / (v0 - v1))


def transition_width(sweep, upper=0.9, lower=0.1):
    """Gamma distance between the p_sat = upper and p_sat = lower crossings."""
    frame = sweep.sort_values('gamma')
    return _crossing(frame['gamma'], frame['p_sat'], lower) - _crossing(frame['gamma'], frame['p_sat'], upper)


def degree_check(f, bins=None):
    """
    Chi-square test of the variable degrees against Poisson(k m / n).

    The last bin pools the tail.
    """
    bins = bins or _CFG['degree_bins']
    degrees = np.bincount(f.clause_vars.ravel(), minlength=f.n)
    observed = np.bincount(np.minimum(degrees, bins - 1), minlength=bins)
    rate = f.k * f.m / f.n
    probs = stats.poisson.pmf(np.arange(bins - 1), rate)
    probs = np.append(probs, max(0.0, 1.0 - probs.sum()))
    expected = probs * f.n
    keep = expected >= 5.0
    observed_kept = observed[keep]
    expected_kept = expected[keep] * observed_kept.sum() / expected[keep].sum()
    statistic, pvalue = stats.chisquare(observed_kept, expected_kept)
    return {'rate': rate, 'statistic': float(statistic), 'pvalue': float(pvalue),
            'bins': int(keep.sum())}


# ----------------------------------------------------------------------
# Oracles
# ----------------------------------------------------------------------

def brute_force_sat(f, max_n=None, chunk=4096):
    """Try every assignment, a chunk at a time; returns (sat, witness or None)."""
    max_n = max_n or _CFG['brute_force_max_n']
    if f.n > max_n:
        raise SizeGuardError(f"Brute force is limited to n <= {max_n}, got {f.n}")
    place = f.d ** np.arange(f.n - 1, -1, -1, dtype=np.int64)
    total = f.d ** f.n
    for start in range(0, total, chunk):
        index = np.arange(start, min(start + chunk, total), dtype=np.int64)
        values = (index[:, None] // place) % f.d
        ok = f.clause_status(values).all(axis=-1)
        if ok.any():
            return True, values[int(np.argmax(ok))]
    return False, None


def peel_randomized(f, seed):
    """
    Peel in a random removal order, one variable at a time.

    Returns the boolean core masks (variables, clauses).
    """
    rng = stream(seed, 0, 'order')
    clause_alive = np.ones(f.m, dtype=bool)
    var_alive = np.ones(f.n, dtype=bool)
    while True:
        degrees = np.bincount(f.clause_vars[clause_alive].ravel(), minlength=f.n)
        candidates = np.flatnonzero(var_alive & (degrees <= 1))
        if len(candidates) == 0:
            return var_alive, clause_alive
        v = rng.choice(candidates)
        var_alive[v] = False
        owners = np.flatnonzero(clause_alive & (f.clause_vars == v).any(axis=1))
        clause_alive[owners] = False


# ----------------------------------------------------------------------
# Simulator
# ----------------------------------------------------------------------

class ThresholdSimulator:
    """Monte Carlo experiments on one model family (model, k)."""

    def __init__(self, model='mod2', k=3, **overrides):
        """
        Parameters:
        -----------
        model : Model or str
            'mod2', 'mod3' or 'ue'
        k : int
            Clause arity, at least 3
        **overrides
            Any key of DEFAULTS['sim']
        """
        self.model = Model(model)
        self.k = int(k)
        self.parameters = merged('sim', **overrides)
        self.params_at(0.5)

    def params_at(self, gamma):
        return ModelParams(self.model, self.k, gamma, derive_scale=False)

    # ------------------------------------------------------------------
    # Generation and peeling
    # ------------------------------------------------------------------

    def generate(self, params, n, seed, trial=0, poisson_m=None):
        """
        Draw a formula with m = round(gamma n) clauses (or m ~ Poisson(gamma n)).

        Parameters:
        -----------
        params : ModelParams or float
            Model parameters, or a bare gamma for this simulator's family
        n : int
            Number of variables, at least k
        seed, trial : int
            Stream key; the same key always gives the same formula
        """
        if not isinstance(params, ModelParams):
            params = self.params_at(float(params))
        if n < params.k:
            raise DomainError(f"Need n >= k, got n={n}, k={params.k}")
        if poisson_m is None:
            poisson_m = self.parameters['poisson_m']
        rng = stream(seed, trial, 'generate')
        mean = params.gamma * n
        m = int(rng.poisson(mean)) if poisson_m else int(round(mean))
        clause_vars = rng.integers(0, n, size=(m, params.k), dtype=np.int64)
        tables = None
        if params.model is Model.UE:
            tables = ue_tables(params.k, params.d, stream(seed, trial, 'tables'),
                               self.parameters['ue_table_pool'])
            payload = rng.integers(0, len(tables), size=m, dtype=np.int64)
        else:
            payload = rng.integers(0, params.d, size=m, dtype=np.int64)
        return Formula(params, n, clause_vars, payload, tables, seed, trial)

    def peel_2core(self, f):
        """Remove variables occurring at most once, with their clause, to a fixed point."""
        start = time.perf_counter()
        var_alive, clause_alive, peel_clause, peel_pivot, n_peeled, rounds = \
            sim_kernels.peel_core(f.clause_vars, f.n)
        report = CoreReport(int(var_alive.sum()), int(clause_alive.sum()), int(rounds),
                            var_alive.astype(bool), clause_alive.astype(bool),
                            peel_clause[:n_peeled], peel_pivot[:n_peeled])
        logger.debug("peeled n=%d m=%d to core %s in %.1f ms", f.n, f.m, report.to_dict(),
                     1e3 * (time.perf_counter() - start))
        return report

    # ------------------------------------------------------------------
    # Solvers
    # ------------------------------------------------------------------

    def _finish(self, f, sat, values):
        if not sat:
            return False, None
        if not f.satisfied_by(values):
            raise ThresholdLabError(f"Witness fails {int((~f.clause_status(values)).sum())} clauses")
        return True, values

    def _cross_check(self, f, sat):
        if sat or f.n > self.parameters['brute_force_max_n']:
            return
        if brute_force_sat(f, self.parameters['brute_force_max_n'])[0]:
            raise ThresholdLabError("Solver reported UNSAT for a satisfiable system")

    def solve_linear(self, f, q=None, core=None):
        """
        Decide a system of equations mod q by elimination on its 2-core.

        The default structured elimination peels weight-one rows and inactivates
        columns when stuck, so the dense solve only spans the inactive columns.
        `elimination='dense'` eliminates the whole core instead.

        Returns:
        --------
        tuple
            (sat, witness); the witness is verified against every clause
        """
        if not f.params.model.is_linear:
            raise DomainError("solve_linear needs a mod2 or mod3 system")
        q = q or f.d
        if q not in (2, 3):
            raise DomainError(f"Elimination supports q in (2, 3), got {q}")
        core = self.peel_2core(f) if core is None else core
        start = time.perf_counter()
        core_vars = np.flatnonzero(core.var_in_core)
        col_of_var = np.full(f.n, -1, dtype=np.int64)
        col_of_var[core_vars] = np.arange(len(core_vars))
        rows = np.flatnonzero(core.clause_in_core).astype(np.int64)
        ncols = len(core_vars)
        method = self.parameters['elimination']
        inactive = ncols
        if method == 'structured':
            sat, solution, inactive = sim_kernels.structured_solve(
                f.clause_vars, f.payload, rows, col_of_var, q, ncols)
        elif method == 'dense':
            lo, hi = sim_kernels.pack_rows(f.clause_vars, f.payload, rows, col_of_var, q, ncols)
            if q == 2:
                sat, solution = sim_kernels.eliminate_gf2(lo, ncols)
            else:
                sat, solution = sim_kernels.eliminate_gf3(lo, hi, ncols)
        else:
            raise UnsupportedError(f"Unknown elimination method {method!r}")
        logger.debug("GF(%d) %s elimination on %dx%d core, %d inactive, %.1f ms", q, method,
                     len(rows), ncols, inactive, 1e3 * (time.perf_counter() - start))
        values = None
        if sat:
            values = np.zeros(f.n, dtype=np.int64)
            values[core_vars] = solution
            sim_kernels.backfill_linear(f.clause_vars, f.payload, core.peel_clause, core.peel_pivot,
                                        len(core.peel_clause), values, q)
        self._cross_check(f, sat)
        return self._finish(f, sat, values)

    def solve_ue(self, f, core=None):
        """
        Decide an extendible system: backtracking search with unit propagation on the
        2-core, then the unique completion of each peeled clause in reverse order.
        """
        if f.params.model is not Model.UE:
            raise DomainError("solve_ue needs an extendible system")
        core = self.peel_2core(f) if core is None else core
        if core.n_core > self.parameters['ue_backtrack_max_n']:
            raise SizeGuardError(f"Backtracking is limited to cores of {self.parameters['ue_backtrack_max_n']} "
                                 f"variables, got {core.n_core}")
        core_clauses = f.clause_vars[core.clause_in_core]
        degree = np.bincount(core_clauses.ravel(), minlength=f.n)
        core_vars = np.flatnonzero(core.var_in_core)
        order = core_vars[np.argsort(-degree[core_vars], kind='stable')].astype(np.int64)
        status, values, nodes = sim_kernels.search_ue(
            f.clause_vars, f.payload, f.tables, f.d, f.n,
            core.clause_in_core.astype(np.uint8), order, self.parameters['ue_max_nodes'])
        logger.debug("extendible search on core %s: status %d after %d decisions",
                     core.to_dict(), status, nodes)
        if status == sim_kernels.STATUS_ABORTED:
            raise ConvergenceError(f"Search exceeded {self.parameters['ue_max_nodes']} decisions")
        sat = status == sim_kernels.STATUS_SAT
        if sat:
            values = values.copy()
            values[values < 0] = 0
            sim_kernels.backfill_ue(f.clause_vars, f.payload, f.tables, f.d, core.peel_clause,
                                    core.peel_pivot, len(core.peel_clause), values)
        else:
            values = None
        self._cross_check(f, sat)
        return self._finish(f, sat, values)

    def solve(self, f, core=None):
        if f.params.model is Model.UE:
            return self.solve_ue(f, core)
        return self.solve_linear(f, core=core)

    # ------------------------------------------------------------------
    # Trials and threshold estimation
    # ------------------------------------------------------------------

    def run_trial(self, gamma, n, trial, seed):
        """One generate-peel-solve trial; returns its log record."""
        start = time.perf_counter()
        f = self.generate(gamma, n, seed, trial)
        core = self.peel_2core(f)
        sat, _ = self.solve(f, core)
        return {'trial': int(trial), 'gamma': float(gamma), 'n': int(n), 'seed': int(seed),
                'sat': bool(sat), 'core_n': core.n_core, 'core_m': core.m_core,
                'wall_ms': 1e3 * (time.perf_counter() - start)}

    def run_point(self, gamma, n, trials, seed, first_trial=0):
        """
        Run `trials` trials at one gamma; returns (records, summary).

        Records come back ordered by trial index whatever the thread count.
        """
        indices = range(first_trial, first_trial + trials)
        threads = self.parameters['threads']
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(lambda t: self.run_trial(gamma, n, t, seed), indices))
        else:
            records = [self.run_trial(gamma, n, t, seed) for t in indices]
        hits = sum(r['sat'] for r in records)
        low, high = wilson_interval(hits, trials, self.parameters['confidence'])
        summary = {'gamma': float(gamma), 'p_sat': hits / trials, 'ci_low': low,
                   'ci_high': high, 'trials': int(trials)}
        logger.info("gamma=%.5f: p_sat=%.3f [%.3f, %.3f] over %d trials",
                    gamma, summary['p_sat'], low, high, trials)
        return records, summary

    def _check_trials(self, trials):
        trials = trials or self.parameters['trials']
        if trials < self.parameters['min_trials']:
            raise DomainError(f"At least {self.parameters['min_trials']} trials per point are needed, got {trials}")
        return trials

    def sweep(self, gammas, n, trials=None, seed=0):
        """
        p_sat with Wilson intervals at each gamma.

        Returns:
        --------
        tuple
            (sweep frame with gamma, p_sat, ci_low, ci_high, trials; trial log frame)
        """
        trials = self._check_trials(trials)
        rows, log = [], []
        for i, gamma in enumerate(gammas):
            records, summary = self.run_point(gamma, n, trials, seed, first_trial=i * trials)
            rows.append(summary)
            log.extend(records)
        return pd.DataFrame(rows), pd.DataFrame(log)

    def estimate_threshold(self, n, trials=None, bracket=None, seed=0, steps=None):
        """
        Bisect on gamma for Pr[SAT] = 1/2.

        Parameters:
        -----------
        n : int
            Number of variables
        trials : int
            Trials per evaluated gamma (at least min_trials)
        bracket : tuple
            (low, high) with Pr[SAT] above 1/2 at low and below it at high
        seed : int
            Stream seed; point i uses trial indices i*trials .. (i+1)*trials - 1
        steps : int
            Bisection steps after the two bracket points

        Returns:
        --------
        ThresholdEstimate
            The estimate interpolates p_sat = 1/2 between evaluated points; the
            interval is where the Wilson band contains 1/2.
        """
        trials = self._check_trials(trials)
        low, high = bracket or self.parameters['gamma_bracket']
        steps = self.parameters['bisection_steps'] if steps is None else steps
        points, log = [], []

        def evaluate(gamma):
            records, summary = self.run_point(gamma, n, trials, seed, first_trial=len(points) * trials)
            points.append(summary)
            log.extend(records)
            return summary['p_sat']

        p_low, p_high = evaluate(low), evaluate(high)
        if not p_low > 0.5 > p_high:
            raise DomainError(f"Bracket ({low}, {high}) does not straddle Pr[SAT] = 1/2: "
                              f"observed {p_low:.3f} and {p_high:.3f}")
        for _ in range(steps):
            mid = 0.5 * (low + high)
            if evaluate(mid) > 0.5:
                low = mid
            else:
                high = mid

        frame = pd.DataFrame(points).sort_values('gamma', kind='stable').reset_index(drop=True)
        g = frame['gamma']
        gamma_hat = _crossing(g, frame['p_sat'], 0.5)
        ci_low = min(_crossing(g, frame['ci_low'], 0.5), gamma_hat)
        ci_high = max(_crossing(g, frame['ci_high'], 0.5), gamma_hat)
        logger.info("%s k=%d n=%d: gamma_hat=%.5f [%.5f, %.5f]", self.model.value, self.k, n,
                    gamma_hat, ci_low, ci_high)
        return ThresholdEstimate(gamma_hat, ci_low, ci_high, trials, int(n), int(seed),
                                 self.model.value, self.k, frame, pd.DataFrame(log))


def main():
    """Print a short desk-scale threshold comparison for k = 3."""
    print("=" * 80)
    print("RANDOM k-XORSAT THRESHOLD SIMULATION")
    print("=" * 80)
    T = analytic_T(3)
    print(f"\nAnalytic core-density-1 threshold, k=3: {T:.5f}")
    for gamma in (0.80, 0.85, 0.90):
        nu, mu, density = predict_core(3, gamma)
        print(f"  gamma={gamma:.2f}: core vars {nu:.4f} n, core clauses {mu:.4f} n, density {density:.4f}")
    for model in ('mod2', 'mod3'):
        estimate = ThresholdSimulator(model, 3).estimate_threshold(2000, trials=50, steps=4, seed=1)
        print(f"  {model}: gamma_hat={estimate.gamma_hat:.4f} "
              f"[{estimate.ci_low:.4f}, {estimate.ci_high:.4f}]")


if __name__ == "__main__":
    main()
