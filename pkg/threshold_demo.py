"""
Demo: Satisfiability Thresholds of Random Equation Systems
Run the numbered walkthroughs by name, or `all`
"""

import sys

import numpy as np

from core_simulation import ThresholdSimulator, analytic_T, predict_core
from exact_counting import enumerate_EX2_mod3, enumerate_ue_constraints, exact_M
from generating_functions import Model, ModelParams, Q_eval, Q_inverse, p_coefficients
from second_moment_mod3 import Mod3SecondMoment
from second_moment_ue import UniqueExtSecondMoment, opt_ue


def demo_generating_functions():
    """Demonstrate the scale s and the column polynomials"""
    print("\n" + "="*80)
    print("DEMO: GENERATING FUNCTIONS")
    print("="*80)

    for kgamma in (2.5, 4.0, 8.0, 15.0):
        s = Q_inverse(kgamma)
        print(f"  Q(s) = {kgamma:5.1f}  ->  s = {s:.6f}  (check {Q_eval(s):.12f})")
    print("\nColumn coefficients p_i, k=3, d=4:")
    print("  " + ", ".join(str(p) for p in p_coefficients(3, 4)))


def demo_exact_counts():
    """Demonstrate the exact oracles"""
    print("\n" + "="*80)
    print("DEMO: EXACT COUNTING")
    print("="*80)

    print(f"  M(6, 3) = {int(exact_M(6, 3))}")
    result = enumerate_EX2_mod3(3, 3, 2)
    status = "✓" if result.passed else "⚠"
    print(f"  {status} n=3, k=3, m=2: {result.formulas} formulas, E[X] = {result.first_moment}, "
          f"E[X^2] = {result.second_moment}")
    family = enumerate_ue_constraints(4, 3)
    print(f"  {'✓' if family.matches else '⚠'} {family.size} extendible constraints for d=4, k=3")


def demo_mod3_lemmas():
    """Demonstrate the mod-3 lemma verifiers"""
    print("\n" + "="*80)
    print("DEMO: MOD-3 OPTIMIZATION LEMMAS")
    print("="*80)

    analysis = Mod3SecondMoment(ModelParams.from_scale(Model.MOD3, 16, 15.0))
    for lemma_id, s in (('lem1', 8.0), ('lem2', 7.0), ('lem3', 7.0), ('lem4', 15.0)):
        print("  " + analysis.verify_lemma(lemma_id, s).summary()['message'])
    print("\nBelow its floor:")
    print("  " + analysis.verify_lemma('lem1', 4.0).summary()['message'])


def demo_mod3_center():
    """Demonstrate the Hessian at the symmetric point"""
    print("\n" + "="*80)
    print("DEMO: HESSIAN AT THE CENTER")
    print("="*80)

    analysis = Mod3SecondMoment(ModelParams(Model.MOD3, 15, 0.9))
    report = analysis.hessian_check()
    print("  " + report.summary()['message'])
    print(np.array2string(analysis.hessian_closed_form(), precision=4))


def demo_ue_lemmas():
    """Demonstrate the extendible-constraint lemmas and the case split"""
    print("\n" + "="*80)
    print("DEMO: UNIQUELY EXTENDIBLE CONSTRAINTS")
    print("="*80)

    analysis = UniqueExtSecondMoment(ModelParams.from_scale(Model.UE, 9, 7.0))
    print(f"  Corners at s=7: OPT(0,0)={opt_ue(0, 1, 0, 7.0):.6f}, OPT(1,3)={opt_ue(1, 1, 3, 7.0):.6f}")
    for lemma_id, s in (('flagekl', 7.0), ('stgekl', 6.0), ('einmi', 7.0), ('pukl', 6.0), ('lagr', 5.0)):
        print("  " + analysis.verify_lemma(lemma_id, s).summary()['message'])
    print("  " + analysis.verify_theorem_unopt().summary()['message'])
    print("  " + analysis.critical_point_check().summary()['message'])


def demo_core():
    """Demonstrate 2-core peeling against the fixed-point prediction"""
    print("\n" + "="*80)
    print("DEMO: 2-CORE PEELING")
    print("="*80)

    sim = ThresholdSimulator('mod2', 3)
    n = 100000
    for gamma in (0.80, 0.85, 0.90, 0.95):
        core = sim.peel_2core(sim.generate(gamma, n, seed=7))
        nu, mu, density = predict_core(3, gamma)
        print(f"  gamma={gamma:.2f}: core {core.n_core / n:.4f} n (predicted {nu:.4f}), "
              f"density {core.density:.4f} (predicted {density:.4f}), {core.rounds} rounds")
    print(f"\n  Analytic threshold k=3: {analytic_T(3):.5f}, k=4: {analytic_T(4):.5f}")


def demo_threshold():
    """Demonstrate the Monte Carlo threshold for mod 2 and mod 3"""
    print("\n" + "="*80)
    print("DEMO: THRESHOLD ESTIMATION")
    print("="*80)

    estimates = {}
    for model in ('mod2', 'mod3'):
        sim = ThresholdSimulator(model, 3)
        estimates[model] = sim.estimate_threshold(2000, trials=50, steps=5, seed=3)
        e = estimates[model]
        print(f"  {model}: gamma_hat = {e.gamma_hat:.4f} [{e.ci_low:.4f}, {e.ci_high:.4f}]")
    same = estimates['mod2'].overlaps(estimates['mod3'])
    print(f"  {'✓' if same else '⚠'} intervals overlap: {same}")


demos = {
    'genfn': demo_generating_functions,
    'exact': demo_exact_counts,
    'lemmas': demo_mod3_lemmas,
    'hessian': demo_mod3_center,
    'ue': demo_ue_lemmas,
    'core': demo_core,
    'threshold': demo_threshold,
}


if __name__ == "__main__":
    if len(sys.argv) > 1:
        demo_name = sys.argv[1].lower()
        if demo_name in demos:
            demos[demo_name]()
        elif demo_name == 'all':
            for demo_func in demos.values():
                demo_func()
            print("\n✓ All demos completed!")
        else:
            print(f"Unknown demo: {demo_name}")
            print(f"Available: {', '.join(demos.keys())}, all")
    else:
        for number, (name, demo_func) in enumerate(demos.items(), start=1):
            print(f"{number}. {name:<10} {demo_func.__doc__}")
        print("\nUsage: python threshold_demo.py <name>|all")
