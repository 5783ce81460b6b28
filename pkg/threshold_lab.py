#!/usr/bin/env python3
"""
Threshold Lab Command Line

Subcommands:
- verify    run one lemma or theorem verifier and write its report
- surface   emit an OPT surface grid as CSV
- exact     compute an exact counting oracle
- simulate  peel, solve or locate the threshold of random systems

Exit codes: 0 when the run passed, 1 for a failed verification or a size guard,
2 for usage errors.
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields

import second_moment_mod3
import second_moment_ue
from core_simulation import ThresholdSimulator, analytic_T, predict_core
from exact_counting import (enumerate_EX2_linear, enumerate_EX2_mod3, enumerate_ue_constraints,
                            exact_M, exact_N0, exact_second_moment_linear, exact_second_moment_ue)
from generating_functions import (DomainError, Model, ModelParams, Q_eval, SizeGuardError,
                                  UnsupportedError)
from lab_config import DEFAULTS, SCHEMA_VERSION
from lab_reports import GridSpec, dumps, write_csv, write_json, write_jsonl

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FINDING = 1
EXIT_USAGE = 2

MOD3_LEMMAS = ('lem1', 'lem1a', 'lem1b', 'lem2', 'lem3', 'lem4', 'lem4a', 'lem4b')
UE_LEMMAS = ('flagekl', 'stgekl', 'einmi', 'pukl', 'lagr')
VERIFY_IDS = MOD3_LEMMAS + ('lemopt', 'opt-mod3', 'hessian', 'laplace', 'tiny-mod3') \
    + UE_LEMMAS + ('lagrkl', 'unopt', 'critical-ue', 'tiny-ue')

# scale used when --s is not given
DEFAULT_S = {'lemopt': 8.0, 'opt-mod3': 15.0, 'lagrkl': 7.0, 'unopt': 7.0, 'critical-ue': 7.0}
DEFAULT_TINY = (4, 3, 3)
DEFAULT_HESSIAN = (15, 0.9)

FIGURES = {'fig1': Model.MOD3, 'fig2': Model.UE, 'fig3': Model.UE}
EXACT_QUANTITIES = ('M', 'N0', 'EX2', 'enumerate', 'ue-constraints')
SIM_MODES = ('core', 'solve', 'threshold', 'sweep')
TARGETS = {'verify': VERIFY_IDS, 'surface': tuple(FIGURES), 'exact': EXACT_QUANTITIES,
           'simulate': SIM_MODES}


@dataclass
class RunConfig:
    """Everything that determines one CLI run; embedded in every output header."""

    subcommand: str
    target: str
    model: str = None
    k: int = None
    gamma: list = None
    s: list = None
    n: int = None
    m: int = None
    d: int = None
    grid_1d: int = None
    grid_2d: int = None
    slices: int = None
    resolution: int = None
    trials: int = None
    bracket: list = None
    steps: int = None
    poisson_m: bool = False
    seed: int = DEFAULTS['cli']['seed']
    threads: int = DEFAULTS['sim']['threads']
    format: str = DEFAULTS['cli']['format']
    out: str = None
    verbose: bool = field(default=False, compare=False)

    @classmethod
    def from_namespace(cls, namespace):
        names = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in vars(namespace).items() if key in names})

    def validate(self):
        if self.target not in _lookup(TARGETS, self.subcommand, 'subcommand'):
            raise UnsupportedError(f"Unknown {self.subcommand} target {self.target!r}")
        if self.threads < 1:
            raise DomainError(f"--threads must be at least 1, got {self.threads}")
        if self.seed < 0 or self.seed >= 2**64:
            raise DomainError(f"--seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.format not in ('json', 'csv'):
            raise DomainError(f"--format must be json or csv, got {self.format}")
        for name in ('n', 'm', 'd', 'k', 'resolution', 'trials'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise DomainError(f"--{name} must be positive, got {value}")
        return self

    def to_dict(self):
        payload = asdict(self)
        payload.pop('verbose')
        payload['schema_version'] = SCHEMA_VERSION
        return payload

    def to_argv(self):
        """Command line that reproduces this run."""
        argv = [self.subcommand, self.target]
        for f in fields(self):
            if f.name in ('subcommand', 'target', 'verbose'):
                continue
            value = getattr(self, f.name)
            if value is None or value is False:
                continue
            flag = '--' + f.name.replace('_', '-')
            if value is True:
                argv.append(flag)
            elif isinstance(value, (list, tuple)):
                argv.extend([flag, *[repr(v) if isinstance(v, float) else str(v) for v in value]])
            else:
                argv.extend([flag, str(value)])
        return argv


def _common(parser):
    parser.add_argument('--format', choices=('json', 'csv'), default=DEFAULTS['cli']['format'],
                        help='Output format (default: %(default)s)')
    parser.add_argument('--out', help='Output path; stdout when omitted')
    parser.add_argument('--seed', type=int, default=DEFAULTS['cli']['seed'])
    parser.add_argument('--threads', type=int, default=DEFAULTS['sim']['threads'])
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='threshold_lab',
        description='Second-moment verification and simulation of random constraint systems')
    sub = parser.add_subparsers(dest='subcommand', required=True)

    verify = sub.add_parser('verify', help='Verify a lemma or theorem on a grid')
    verify.add_argument('target', choices=VERIFY_IDS, metavar='ID')
    verify.add_argument('--s', type=float, nargs='+', help='Scale s (first value is used)')
    verify.add_argument('--k', type=int)
    verify.add_argument('--gamma', type=float, nargs='+')
    verify.add_argument('--n', type=int)
    verify.add_argument('--m', type=int)
    verify.add_argument('--d', type=int)
    verify.add_argument('--grid-1d', type=int)
    verify.add_argument('--grid-2d', type=int)
    verify.add_argument('--slices', type=int)
    _common(verify)

    surface = sub.add_parser('surface', help='Emit an OPT surface grid')
    surface.add_argument('target', choices=tuple(FIGURES), metavar='FIGURE')
    surface.add_argument('--s', type=float, nargs='+')
    surface.add_argument('--resolution', type=int)
    _common(surface)
    surface.set_defaults(format='csv')

    exact = sub.add_parser('exact', help='Exact counting oracles')
    exact.add_argument('target', choices=EXACT_QUANTITIES, metavar='QUANTITY')
    exact.add_argument('--model', choices=[model.value for model in Model], default='mod3')
    exact.add_argument('--n', type=int)
    exact.add_argument('--k', type=int)
    exact.add_argument('--m', type=int)
    exact.add_argument('--d', type=int)
    _common(exact)

    simulate = sub.add_parser('simulate', help='Random-system simulation')
    simulate.add_argument('target', choices=SIM_MODES, metavar='MODE')
    simulate.add_argument('--model', choices=[model.value for model in Model], default='mod2')
    simulate.add_argument('--k', type=int, default=3)
    simulate.add_argument('--gamma', type=float, nargs='+')
    simulate.add_argument('--n', type=int, default=10000)
    simulate.add_argument('--trials', type=int)
    simulate.add_argument('--bracket', type=float, nargs=2)
    simulate.add_argument('--steps', type=int)
    simulate.add_argument('--poisson-m', action='store_true')
    _common(simulate)
    return parser


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------

def _emit(config, payload=None, frame=None):
    """Write a JSON payload or a frame in the requested format."""
    header = config.to_dict()
    if config.format == 'csv' and frame is not None:
        if config.out:
            write_csv(frame, config.out, header)
        else:
            sys.stdout.write('# config: ' + json.dumps(header) + '\n')
            frame.to_csv(sys.stdout, index=False)
        return
    if payload is None:
        payload = {'records': frame}
    document = {'schema_version': SCHEMA_VERSION, 'config': header, **payload}
    if config.out:
        write_json(document, config.out)
    else:
        sys.stdout.write(dumps(document) + '\n')


def _banner(title, config):
    if not config.out:
        return
    print("=" * 80)
    print(title)
    print("=" * 80)


def _status(config, message):
    if config.out:
        print(message)


# ----------------------------------------------------------------------
# verify
# ----------------------------------------------------------------------

def _lookup(table, key, what):
    try:
        return table[key]
    except KeyError:
        raise UnsupportedError(f"Unknown {what} {key!r}") from None


def _params_for(model, s, k=None):
    """Model parameters with derived scale s, at the smallest arity that admits it."""
    k = k or max(3, int(math.floor(Q_eval(s))) + 1)
    return ModelParams.from_scale(model, k, s)


def _default_s(target):
    if target in DEFAULT_S:
        return DEFAULT_S[target]
    if target in second_moment_mod3.LEMMA_PARTS:
        return second_moment_mod3.LEMMA_FLOORS[second_moment_mod3.LEMMA_PARTS[target][0]]
    if target in second_moment_mod3.LEMMA_FLOORS:
        return second_moment_mod3.LEMMA_FLOORS[target]
    return _lookup(second_moment_ue.LEMMA_FLOORS, target, 'verify target')


def _grid(config):
    return GridSpec(resolution_1d=config.grid_1d or DEFAULTS['momed3']['grid_1d'],
                    resolution_2d=config.grid_2d or DEFAULTS['momed3']['grid_2d'],
                    slices=config.slices or DEFAULTS['momue']['slice_count'])


def run_verification(config):
    """Dispatch a verify target; returns its VerificationReport."""
    target = config.target
    if target in ('hessian', 'laplace'):
        k = config.k or DEFAULT_HESSIAN[0]
        gamma = config.gamma[0] if config.gamma else DEFAULT_HESSIAN[1]
        analysis = second_moment_mod3.Mod3SecondMoment(ModelParams(Model.MOD3, k, gamma))
        return analysis.hessian_check() if target == 'hessian' else analysis.laplace_sum_check()
    if target in ('tiny-mod3', 'tiny-ue'):
        n, k, m = (config.n or DEFAULT_TINY[0], config.k or DEFAULT_TINY[1],
                   config.m or DEFAULT_TINY[2])
        if target == 'tiny-mod3':
            analysis = second_moment_mod3.Mod3SecondMoment(ModelParams(Model.MOD3, k, m / n))
            return analysis.tiny_instance_check(n, k, m)
        analysis = second_moment_ue.UniqueExtSecondMoment(ModelParams(Model.UE, k, m / n))
        return analysis.tiny_instance_check(n, k, m, config.d)

    s = config.s[0] if config.s else _default_s(target)
    if target in MOD3_LEMMAS + ('lemopt', 'opt-mod3'):
        analysis = second_moment_mod3.Mod3SecondMoment(_params_for(Model.MOD3, s, config.k))
        if target == 'lemopt':
            return analysis.lemopt_sweep(seed=config.seed)
        if target == 'opt-mod3':
            return analysis.verify_theorem_opt()
        return analysis.verify_lemma(target, s, _grid(config))

    overrides = {'d': config.d} if config.d else {}
    analysis = second_moment_ue.UniqueExtSecondMoment(_params_for(Model.UE, s, config.k), **overrides)
    if target == 'lagrkl':
        return analysis.lagrkl_sweep(seed=config.seed)
    if target == 'unopt':
        return analysis.verify_theorem_unopt()
    if target == 'critical-ue':
        return analysis.critical_point_check()
    return analysis.verify_lemma(target, s, _grid(config))


def cmd_verify(config):
    report = run_verification(config)
    summary = report.summary()
    _banner(f"VERIFY {config.target.upper()}", config)
    _status(config, summary['message'])
    if config.format == 'csv':
        frame = report.violations_frame() if report.violations else report.values
        _emit(config, frame=frame)
    else:
        _emit(config, payload={'report': report.to_dict(config.to_dict())})
    return EXIT_PASS if report.passed else EXIT_FINDING


# ----------------------------------------------------------------------
# surface
# ----------------------------------------------------------------------

def cmd_surface(config):
    model = _lookup(FIGURES, config.target, 'figure')
    s_values = config.s or DEFAULTS['cli']['surface_s']
    resolution = config.resolution or DEFAULTS['cli']['surface_resolution']
    if model is Model.MOD3:
        analysis = second_moment_mod3.Mod3SecondMoment(_params_for(Model.MOD3, s_values[0]))
    else:
        analysis = second_moment_ue.UniqueExtSecondMoment(_params_for(Model.UE, s_values[0]))
    frame = analysis.surface(config.target, s_values, resolution)
    _banner(f"SURFACE {config.target}", config)
    _status(config, f"✓ {len(frame)} grid values at s = {', '.join(f'{s:g}' for s in s_values)}")
    _emit(config, frame=frame)
    return EXIT_PASS


# ----------------------------------------------------------------------
# exact
# ----------------------------------------------------------------------

def _require(config, *names):
    missing = [name for name in names if getattr(config, name) is None]
    if missing:
        raise DomainError(f"exact {config.target} needs --{', --'.join(missing)}")


def cmd_exact(config):
    target = config.target
    if target == 'M':
        _require(config, 'm', 'n')
        payload = {'result': exact_M(config.m, config.n).to_dict()}
    elif target == 'N0':
        _require(config, 'n', 'k', 'm')
        payload = {'result': exact_N0(config.n, config.k, config.m).to_dict()}
    elif target == 'EX2':
        _require(config, 'n', 'k', 'm')
        model = Model(config.model)
        if model is Model.UE:
            value = exact_second_moment_ue(config.n, config.k, config.m, config.d or model.domain_size)
        else:
            value = exact_second_moment_linear(config.n, config.k, config.m, model.domain_size)
        payload = {'result': {'quantity': 'E[X^2]', 'model': model.value, 'value': str(value),
                              'float': float(value)}}
    elif target == 'enumerate':
        _require(config, 'n', 'k', 'm')
        model = Model(config.model)
        if model is Model.UE:
            raise UnsupportedError("Formula enumeration covers mod2 and mod3")
        if model is Model.MOD3:
            result = enumerate_EX2_mod3(config.n, config.k, config.m)
        else:
            result = enumerate_EX2_linear(config.n, config.k, config.m, 2)
        _status(config, f"{'✓' if result.passed else '⚠'} {result.formulas} formulas enumerated")
        if config.format == 'csv':
            _emit(config, frame=result.buckets)
        else:
            _emit(config, payload={'result': result.summary(), 'mismatches': result.mismatches})
        return EXIT_PASS if result.passed else EXIT_FINDING
    else:
        _require(config, 'k')
        family = enumerate_ue_constraints(config.d or Model.UE.domain_size, config.k)
        payload = {'result': {'d': family.d, 'k': family.k, 'count': family.size,
                              'p_empirical': [str(p) for p in family.p_empirical],
                              'p_closed': [str(p) for p in family.p_closed],
                              'matches': family.matches}}
        _emit(config, payload=payload)
        return EXIT_PASS if family.matches else EXIT_FINDING
    _emit(config, payload=payload)
    return EXIT_PASS


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------

def cmd_simulate(config):
    sim = ThresholdSimulator(config.model, config.k, threads=config.threads,
                             trials=config.trials, bisection_steps=config.steps,
                             poisson_m=config.poisson_m)
    target = config.target
    if target in ('core', 'solve'):
        gamma = config.gamma[0] if config.gamma else DEFAULTS['sim']['gamma_bracket'][0]
        f = sim.generate(gamma, config.n, config.seed)
        core = sim.peel_2core(f)
        nu, mu, density = predict_core(config.k, gamma)
        result = {'gamma': gamma, 'n': config.n, 'm': f.m, **core.to_dict(),
                  'core_fraction': core.n_core / config.n, 'core_clauses_per_n': core.m_core / config.n,
                  'predicted': {'nu': nu, 'mu': mu, 'density': density}}
        if target == 'solve':
            sat, _ = sim.solve(f, core)
            result['sat'] = sat
        _status(config, f"✓ core {core.n_core} x {core.m_core}, density {core.density:.4f}")
        _emit(config, payload={'result': result})
        return EXIT_PASS

    if target == 'sweep':
        if not config.gamma:
            raise DomainError("simulate sweep needs --gamma values")
        frame, log = sim.sweep(config.gamma, config.n, seed=config.seed)
        if config.out:
            write_jsonl(log, config.out + '.trials.jsonl')
        _emit(config, payload={'sweep': frame}, frame=frame)
        return EXIT_PASS

    estimate = sim.estimate_threshold(config.n, bracket=config.bracket, seed=config.seed)
    if config.out:
        write_jsonl(estimate.log, config.out + '.trials.jsonl')
    _status(config, f"✓ gamma_hat = {estimate.gamma_hat:.5f} "
                    f"[{estimate.ci_low:.5f}, {estimate.ci_high:.5f}]")
    if config.format == 'csv':
        _emit(config, frame=estimate.points)
    else:
        _emit(config, payload={'estimate': estimate.to_dict(), 'points': estimate.points,
                               'analytic_T': analytic_T(config.k)})
    return EXIT_PASS


COMMANDS = {'verify': cmd_verify, 'surface': cmd_surface, 'exact': cmd_exact,
            'simulate': cmd_simulate}


def main(argv=None):
    parser = build_parser()
    try:
        namespace = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if namespace.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        config = RunConfig.from_namespace(namespace).validate()
        return _lookup(COMMANDS, config.subcommand, 'subcommand')(config)
    except SizeGuardError as exc:
        print(f"⚠ size guard: {exc}", file=sys.stderr)
        return EXIT_FINDING
    except (DomainError, UnsupportedError) as exc:
        print(f"⚠ usage: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
