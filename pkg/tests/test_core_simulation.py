import os

import numpy as np
import pandas as pd
import pytest

import sim_kernels
from core_simulation import (CoreReport, Formula, ThresholdEstimate, ThresholdSimulator,
                             analytic_T, brute_force_sat, compose_tables, degree_check,
                             latin_squares, peel_randomized, predict_core, transition_width,
                             wilson_interval)
from generating_functions import (ConvergenceError, DomainError, Model, ModelParams,
                                  SizeGuardError, UnsupportedError)

ADDITIVE = np.array([[(i + j) % 4 for i in range(4) for j in range(4)],
                     [(i + j + 1) % 4 for i in range(4) for j in range(4)]], dtype=np.int8)


def formula(model, n, clauses, payload, tables=None, k=3):
    params = ModelParams(model, k, 0.9, derive_scale=False)
    return Formula(params, n, np.array(clauses, dtype=np.int64).reshape(-1, k), payload, tables)


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------

def test_generation_is_reproducible(parity_sim):
    one = parity_sim.generate(0.9, 1000, seed=11, trial=3)
    two = parity_sim.generate(0.9, 1000, seed=11, trial=3)
    other = parity_sim.generate(0.9, 1000, seed=11, trial=4)
    assert np.array_equal(one.clause_vars, two.clause_vars)
    assert np.array_equal(one.payload, two.payload)
    assert not np.array_equal(one.clause_vars, other.clause_vars)


def test_clause_count(parity_sim):
    assert parity_sim.generate(0.9, 1000, seed=1).m == 900
    poisson = parity_sim.generate(0.9, 1000, seed=1, poisson_m=True)
    assert abs(poisson.m - 900) < 150


def test_generation_needs_n_at_least_k(parity_sim):
    with pytest.raises(DomainError):
        parity_sim.generate(0.9, 2, seed=1)


def test_degrees_look_poisson(parity_sim):
    f = parity_sim.generate(0.9, 20000, seed=5)
    result = degree_check(f)
    assert result['rate'] == pytest.approx(2.7)
    assert result['pvalue'] > 1e-3


@pytest.mark.parametrize('model', ['mod2', 'mod3'])
def test_right_hand_sides_are_uniform(model):
    f = ThresholdSimulator(model, 3).generate(0.9, 30000, seed=2)
    counts = np.bincount(f.payload, minlength=f.d)
    assert len(counts) == f.d
    assert counts.min() > 0.9 * f.m / f.d


def test_formula_validation():
    with pytest.raises(DomainError):
        formula(Model.MOD2, 3, [0, 1, 3], [0])
    with pytest.raises(DomainError):
        formula(Model.MOD2, 3, [0, 1, 2], [2])
    with pytest.raises(DomainError):
        formula(Model.UE, 3, [0, 1, 2], [0])


def test_extendible_tables():
    squares = latin_squares(4)
    assert squares.shape == (576, 16)
    table = compose_tables([squares[3], squares[100]], 4, 4).reshape(4, 4, 4)
    for axis in range(3):
        assert (np.sort(table, axis=axis) == np.arange(4).reshape([-1 if i == axis else 1
                                                                  for i in range(3)])).all()


def test_clause_status_batches(mod3_sim):
    f = mod3_sim.generate(0.9, 6, seed=3)
    values = np.array([[0, 1, 2, 0, 1, 2], [1, 1, 1, 1, 1, 1]])
    batched = f.clause_status(values)
    assert batched.shape == (2, f.m)
    assert np.array_equal(batched[1], f.clause_status(values[1]))


# ----------------------------------------------------------------------
# peeling
# ----------------------------------------------------------------------

def test_single_clause_peels_away(parity_sim):
    core = parity_sim.peel_2core(formula(Model.MOD2, 3, [0, 1, 2], [1]))
    assert core.empty
    assert core.density == 0.0
    assert len(core.peel_clause) == 1


def test_doubled_clause_is_its_own_core(parity_sim):
    core = parity_sim.peel_2core(formula(Model.MOD2, 4, [[0, 1, 2], [0, 1, 2]], [0, 1]))
    assert (core.n_core, core.m_core) == (3, 2)
    assert core.density == pytest.approx(2 / 3)
    assert not core.var_in_core[3]


def test_peeling_is_idempotent(parity_sim):
    f = parity_sim.generate(0.9, 5000, seed=8)
    core = parity_sim.peel_2core(f)
    again = parity_sim.peel_2core(f.restrict(core.clause_in_core))
    assert (again.n_core, again.m_core) == (core.n_core, core.m_core)
    assert np.array_equal(again.var_in_core, core.var_in_core)


@pytest.mark.parametrize('seed', [1, 2, 3])
def test_peeling_order_does_not_matter(parity_sim, seed):
    f = parity_sim.generate(0.88, 400, seed=seed)
    core = parity_sim.peel_2core(f)
    var_alive, clause_alive = peel_randomized(f, seed + 100)
    assert np.array_equal(var_alive, core.var_in_core)
    assert np.array_equal(clause_alive, core.clause_in_core)


def test_core_report_dict():
    core = CoreReport(4, 6, 2, np.ones(4, bool), np.ones(6, bool), np.array([]), np.array([]))
    assert core.to_dict() == {'n_core': 4, 'm_core': 6, 'density': 1.5, 'rounds': 2}


def test_core_size_follows_the_prediction(parity_sim):
    n = 100000
    for gamma in (0.85, 0.9):
        core = parity_sim.peel_2core(parity_sim.generate(gamma, n, seed=4))
        nu, mu, density = predict_core(3, gamma)
        assert core.n_core / n == pytest.approx(nu, abs=0.01)
        assert core.m_core / n == pytest.approx(mu, abs=0.01)


def test_no_core_below_the_peeling_point(parity_sim):
    core = parity_sim.peel_2core(parity_sim.generate(0.7, 50000, seed=6))
    assert core.n_core < 100
    assert predict_core(3, 0.7) == (0.0, 0.0, 0.0)


# ----------------------------------------------------------------------
# solvers
# ----------------------------------------------------------------------

@pytest.mark.parametrize('model', [Model.MOD2, Model.MOD3])
def test_contradiction_is_unsat(model):
    sim = ThresholdSimulator(model, 3)
    assert sim.solve(formula(model, 3, [[0, 1, 2], [0, 1, 2]], [0, 1])) == (False, None)


def test_empty_system_is_sat(parity_sim):
    sat, witness = parity_sim.solve(formula(Model.MOD2, 5, np.empty((0, 3)), []))
    assert sat
    assert len(witness) == 5


def test_repeated_variables_count_per_slot(mod3_sim):
    # x0 + x0 + x1 = 2 x0 + x1 over GF(3)
    f = formula(Model.MOD3, 3, [[0, 0, 1], [0, 1, 2], [1, 2, 2]], [1, 2, 0])
    sat, witness = mod3_sim.solve(f)
    assert sat == brute_force_sat(f)[0]
    if sat:
        assert f.satisfied_by(witness)


def test_extendible_single_clause_is_sat(ue_sim):
    f = formula(Model.UE, 3, [0, 1, 2], [0], ADDITIVE)
    sat, witness = ue_sim.solve(f)
    assert sat
    assert (witness[0] + witness[1]) % 4 == witness[2]


def test_extendible_contradiction(ue_sim):
    f = formula(Model.UE, 3, [[0, 1, 2], [0, 1, 2]], [0, 1], ADDITIVE)
    assert ue_sim.solve(f) == (False, None)


def test_extendible_search_guard():
    sim = ThresholdSimulator('ue', 3, ue_backtrack_max_n=1)
    f = formula(Model.UE, 3, [[0, 1, 2], [0, 1, 2]], [0, 1], ADDITIVE)
    with pytest.raises(SizeGuardError):
        sim.solve(f)


def test_solver_model_checks(parity_sim, ue_sim):
    with pytest.raises(DomainError):
        parity_sim.solve_ue(formula(Model.MOD2, 3, [0, 1, 2], [0]))
    with pytest.raises(DomainError):
        ue_sim.solve_linear(formula(Model.UE, 3, [0, 1, 2], [0], ADDITIVE))


@pytest.mark.parametrize('model, k', [('mod2', 3), ('mod3', 3), ('ue', 3), ('mod2', 4),
                                      ('ue', 4)])
def test_solvers_agree_with_brute_force(model, k):
    sim = ThresholdSimulator(model, k)
    outcomes = set()
    for trial in range(40):
        gamma = (0.5, 1.0, 1.5)[trial % 3]
        f = sim.generate(gamma, 8, seed=21, trial=trial)
        sat, witness = sim.solve(f)
        assert sat == brute_force_sat(f)[0]
        if sat:
            assert f.satisfied_by(witness)
        outcomes.add(sat)
    assert outcomes == {True, False}


@pytest.mark.parametrize('model', ['mod2', 'mod3', 'ue'])
def test_core_decides_satisfiability(model):
    sim = ThresholdSimulator(model, 3)
    for trial in range(10):
        f = sim.generate(0.92, 300, seed=9, trial=trial)
        core = sim.peel_2core(f)
        assert sim.solve(f, core)[0] == sim.solve(f.restrict(core.clause_in_core))[0]


@pytest.mark.parametrize('model', ['mod2', 'mod3'])
def test_structured_and_dense_elimination_agree(model):
    structured = ThresholdSimulator(model, 3)
    dense = ThresholdSimulator(model, 3, elimination='dense')
    outcomes = set()
    for trial in range(30):
        f = structured.generate((0.9, 0.93, 0.96)[trial % 3], 400, seed=31, trial=trial)
        sat, witness = structured.solve(f)
        assert sat == dense.solve(f)[0]
        if sat:
            assert f.satisfied_by(witness)
        outcomes.add(sat)
    assert outcomes == {True, False}


def test_fully_peelable_system_needs_no_inactivation():
    # x0 + x0 + x1 = x1 over GF(2), so every row resolves one column in turn
    clause_vars = np.array([[0, 0, 1], [1, 1, 2], [2, 2, 0], [0, 1, 2]], dtype=np.int64)
    rows = np.arange(4, dtype=np.int64)
    cols = np.arange(3, dtype=np.int64)
    sat, solution, inactive = sim_kernels.structured_solve(
        clause_vars, np.array([1, 0, 1, 0], dtype=np.int64), rows, cols, 2, 3)
    assert (sat, inactive) == (True, 0)
    assert solution.tolist() == [1, 1, 0]
    sat, _, inactive = sim_kernels.structured_solve(
        clause_vars, np.array([1, 0, 1, 1], dtype=np.int64), rows, cols, 2, 3)
    assert (sat, inactive) == (False, 0)


@pytest.mark.parametrize('model', ['mod2', 'mod3'])
def test_core_elimination_inactivates_a_fraction(model):
    sim = ThresholdSimulator(model, 3)
    f = sim.generate(0.95, 3000, seed=2)
    core = sim.peel_2core(f)
    core_vars = np.flatnonzero(core.var_in_core)
    col_of_var = np.full(f.n, -1, dtype=np.int64)
    col_of_var[core_vars] = np.arange(len(core_vars))
    rows = np.flatnonzero(core.clause_in_core).astype(np.int64)
    _, _, inactive = sim_kernels.structured_solve(f.clause_vars, f.payload, rows, col_of_var,
                                                  f.d, len(core_vars))
    assert 0 < inactive < len(core_vars)


def test_unknown_elimination_method():
    sim = ThresholdSimulator('mod2', 3, elimination='lu')
    with pytest.raises(UnsupportedError):
        sim.solve(sim.generate(0.9, 50, seed=1))


def test_brute_force_guard(parity_sim):
    f = parity_sim.generate(0.5, 20, seed=1)
    with pytest.raises(SizeGuardError):
        brute_force_sat(f)


# ----------------------------------------------------------------------
# predictor and statistics
# ----------------------------------------------------------------------

def test_analytic_thresholds():
    assert analytic_T(3) == pytest.approx(0.91794, abs=1e-4)
    assert analytic_T(4) == pytest.approx(0.97677, abs=1e-4)
    assert predict_core(3, 0.9)[2] < 1.0 < predict_core(3, 0.95)[2]


def test_predict_core_domain():
    with pytest.raises(DomainError):
        predict_core(2, 0.9)
    with pytest.raises(DomainError):
        predict_core(3, 0.0)


def test_wilson_interval():
    low, high = wilson_interval(50, 100)
    assert low == pytest.approx(0.4038, abs=1e-3)
    assert high == pytest.approx(0.5962, abs=1e-3)
    low, high = wilson_interval(0, 10)
    assert low == pytest.approx(0.0, abs=1e-12)
    assert high == pytest.approx(0.2775, abs=1e-3)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_transition_width():
    sweep = pd.DataFrame({'gamma': [1.0, 0.8, 0.9], 'p_sat': [0.0, 1.0, 0.5]})
    assert transition_width(sweep) == pytest.approx(0.16)


def test_estimate_must_lie_in_its_interval():
    with pytest.raises(ConvergenceError):
        ThresholdEstimate(0.5, 0.6, 0.7, 50, 100, 0, 'mod2', 3)


def test_trials_below_minimum(parity_sim):
    with pytest.raises(DomainError):
        parity_sim.sweep([0.9], 200, trials=10)


def test_bracket_must_straddle_one_half(parity_sim):
    with pytest.raises(DomainError):
        parity_sim.estimate_threshold(200, trials=50, bracket=(0.3, 0.4), steps=0)


def test_results_do_not_depend_on_threads():
    serial, _ = ThresholdSimulator('mod2', 3).run_point(0.92, 500, 50, seed=5)
    pooled, _ = ThresholdSimulator('mod2', 3, threads=4).run_point(0.92, 500, 50, seed=5)
    strip = lambda records: [{k: v for k, v in r.items() if k != 'wall_ms'} for r in records]
    assert strip(serial) == strip(pooled)


def test_sweep_shapes(parity_sim):
    frame, log = parity_sim.sweep([0.8, 1.0], 300, trials=50, seed=2)
    assert list(frame.columns) == ['gamma', 'p_sat', 'ci_low', 'ci_high', 'trials']
    assert len(log) == 100
    assert sorted(log['trial']) == list(range(100))
    assert frame['p_sat'].iloc[0] > frame['p_sat'].iloc[1]


@pytest.mark.slow
@pytest.mark.parametrize('gamma', [0.80, 0.85, 0.90])
def test_large_core_matches_prediction(parity_sim, gamma):
    n = 1000000
    core = parity_sim.peel_2core(parity_sim.generate(gamma, n, seed=12))
    nu, mu, density = predict_core(3, gamma)
    assert core.n_core / n == pytest.approx(nu, rel=0.01, abs=1e-4)
    assert core.m_core / n == pytest.approx(mu, rel=0.01, abs=1e-4)
    assert core.density == pytest.approx(density, rel=0.01, abs=1e-4)


@pytest.mark.slow
def test_parity_and_mod3_thresholds_coincide():
    estimates = {model: ThresholdSimulator(model, 3).estimate_threshold(
        3000, trials=100, bracket=(0.85, 1.0), steps=5, seed=17) for model in ('mod2', 'mod3')}
    assert estimates['mod2'].overlaps(estimates['mod3'])
    for estimate in estimates.values():
        assert estimate.gamma_hat == pytest.approx(analytic_T(3), abs=0.03)
        assert estimate.ci_low <= estimate.gamma_hat <= estimate.ci_high


@pytest.mark.slow
def test_thresholds_at_scale_contain_the_analytic_value():
    threads = os.cpu_count() or 1
    estimates = {model: ThresholdSimulator(model, 3, threads=threads).estimate_threshold(
        100000, trials=200, bracket=(0.90, 0.935), steps=6, seed=23) for model in ('mod2', 'mod3')}
    assert estimates['mod2'].overlaps(estimates['mod3'])
    for estimate in estimates.values():
        assert estimate.ci_low <= analytic_T(3) <= estimate.ci_high


@pytest.mark.slow
@pytest.mark.parametrize('model', ['mod2', 'mod3'])
def test_structured_elimination_handles_large_cores(model):
    sim = ThresholdSimulator(model, 3)
    f = sim.generate(0.91, 100000, seed=4)
    core = sim.peel_2core(f)
    sat, witness = sim.solve_linear(f, core=core)
    assert sat
    assert f.satisfied_by(witness)
