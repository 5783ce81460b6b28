"""
Default Settings for the Threshold Lab

Every default used by the analysis modules and the command line lives in DEFAULTS,
grouped by the module that consumes it. Classes copy the relevant group into their
``self.parameters`` dict at construction; keyword arguments and CLI flags override.
"""

import copy

SCHEMA_VERSION = '1.0'

DEFAULTS = {
    'genfn': {
        'series_cutoff': 1e-4,        # below this q, Q and C use truncated series
        'q_inverse_guard': 1e-9,      # Q_inverse rejects t <= 2 + guard
        'root_tol': 1e-12,            # residual tolerance of scalar inverses
        'max_iter': 200,
        'r_imag_tol': 1e-10,          # relative imaginary residue allowed in r
        'r_inverse_tol': 1e-10,
        'r_inverse_radius': 0.15,     # neighborhood of (k/3, k/3), times k
        'p_inverse_tol': 1e-10,
    },
    'exact': {
        'dual_path_max_m': 120,       # largest m cross-checked by both M paths
        'enumeration_limit': 10**7,   # N0 * q^m formulas
        'slot_map_limit': 10**7,      # n^(k*m) raw slot maps
        'ue_table_limit': 16,         # d^(k-1) cells in a constraint table
        'backtrack_limit': 10**6,
    },
    'momed3': {
        'grid_1d': 4096,
        'grid_2d': 256,
        'monotone_tol': 1e-12,        # scaled one-sided difference tolerance
        'margin': 1e-6,               # "<= 3 - delta" means max <= 3 - margin
        'bound_tol': 1e-9,
        'epsilon': 0.02,              # radius of the neighborhood of (1/3, 1/3)
        'hessian_step': 1e-4,
        'hessian_rtol': 1e-5,
        'gradient_tol': 1e-8,
        'simplex_grid': 200,
        'laplace_n': (200, 400, 800, 1600),
        'max_axis_points': 49,
        'continuity_rtol': 0.10,
        'sweep_points': 100000,
    },
    'momue': {
        'd': 4,
        'grid_1d': 4096,
        'slice_count': 64,            # frozen a / frozen c slices for the minimum lemma
        'monotone_tol': 1e-12,
        'margin': 1e-6,
        'bound_tol': 1e-9,
        'epsilon': 0.02,              # radius around lambda = 3/4
        'gradient_tol': 1e-8,
        'hessian_step': 1e-4,
        'hessian_rtol': 1e-5,
        'continuity_rtol': 0.10,
        'sweep_points': 100000,
        'lambda_grid': 4096,
    },
    'sim': {
        'trials': 200,
        'min_trials': 50,
        'bisection_steps': 8,
        'confidence': 0.95,
        'ue_backtrack_max_n': 2000,
        'brute_force_max_n': 12,
        'threads': 1,
        'elimination': 'structured',  # or 'dense' on the whole core
        'gamma_bracket': (0.85, 1.0),
        'poisson_m': False,
        'ue_table_pool': 256,         # composed tables drawn per trial when k >= 4
        'ue_max_nodes': 1000000,
        'core_tol': 1e-13,
        'core_max_iter': 200000,
        'degree_bins': 12,
    },
    'cli': {
        'surface_s': (3.0, 14.0),
        'surface_resolution': 256,
        'format': 'json',
        'seed': 42,
    },
}


def get_defaults(section):
    """Return a deep copy of one DEFAULTS section, safe to mutate."""
    return copy.deepcopy(DEFAULTS[section])


def merged(section, **overrides):
    """Return the DEFAULTS section with non-None overrides applied."""
    settings = get_defaults(section)
    for key, value in overrides.items():
        if key not in settings:
            raise KeyError(f"Unknown {section} setting: {key}")
        if value is not None:
            settings[key] = value
    return settings
