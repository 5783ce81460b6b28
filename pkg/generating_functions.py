"""
Generating Functions for Random Constraint Systems

This module implements:
- q(x) = e^x - x - 1 with derivatives, Q(x) = x q'(x) / q(x) and its inverse
- The ratio triple (L, K, M) and the curvature function C(x)
- The mod-3 column polynomial r(x0, x1, x2), its partials, the R map and its inverse
- The uniquely-extendible polynomial p(z), its exact coefficients and the P map
- ModelParams, the (model, k, d, gamma, s) record shared by every other module

Everything that can overflow is also available in log-domain (log_q, log_qprime).
"""

import logging
import math
from dataclasses import InitVar, dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np
from scipy import optimize

from lab_config import DEFAULTS

logger = logging.getLogger(__name__)

_CFG = DEFAULTS['genfn']
W1 = complex(-0.5, math.sqrt(3.0) / 2.0)
W2 = W1.conjugate()


class ThresholdLabError(Exception):
    """Base class for errors raised by the threshold lab."""


class DomainError(ThresholdLabError, ValueError):
    """Argument outside the domain of a function."""


class NoSolutionError(DomainError):
    """An inverse map has no solution for the requested value."""


class ConvergenceError(ThresholdLabError, RuntimeError):
    """An iterative solver did not reach its tolerance."""


class SizeGuardError(ThresholdLabError, ValueError):
    """A computation exceeds its configured size guard."""


class UnsupportedError(ThresholdLabError, ValueError):
    """The requested parameter combination is not supported."""


class Model(str, Enum):
    MOD2 = 'mod2'
    MOD3 = 'mod3'
    UE = 'ue'

    @property
    def domain_size(self):
        return {Model.MOD2: 2, Model.MOD3: 3, Model.UE: 4}[self]

    @property
    def is_linear(self):
        return self is not Model.UE


@dataclass(frozen=True)
class ModelParams:
    """
    Model kind, arity, density and the derived scale s with Q(s) = k * gamma.

    Parameters:
    -----------
    model : Model or str
        'mod2', 'mod3' or 'ue'; fixes the domain size d (2, 3 or 4)
    k : int
        Constraint arity, at least 3
    gamma : float
        Constraints per variable
    derive_scale : bool
        Solve Q(s) = k * gamma. Requires 0 < gamma < 1 and k * gamma > 2.
        Simulation parameters pass False and carry s = nan.
    """

    model: Model
    k: int
    gamma: float
    derive_scale: InitVar[bool] = True
    d: int = field(init=False)
    s: float = field(init=False, compare=False)

    def __post_init__(self, derive_scale):
        model = Model(self.model)
        object.__setattr__(self, 'model', model)
        object.__setattr__(self, 'd', model.domain_size)
        if int(self.k) != self.k or self.k < 3:
            raise DomainError(f"Arity k must be an integer >= 3, got {self.k}")
        object.__setattr__(self, 'k', int(self.k))
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not derive_scale:
            object.__setattr__(self, 's', float('nan'))
            return
        if not self.gamma < 1:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.k * self.gamma > 2:
            raise DomainError(f"k*gamma must exceed 2, got {self.k * self.gamma}")
        s = Q_inverse(self.k * self.gamma)
        if abs(Q_eval(s) - self.k * self.gamma) > _CFG['root_tol'] * max(1.0, self.k):
            raise ConvergenceError(f"Scale residual too large for k*gamma={self.k * self.gamma}")
        object.__setattr__(self, 's', s)

    @classmethod
    def from_scale(cls, model, k, s):
        """Build parameters whose derived scale is s, i.e. gamma = Q(s)/k."""
        return cls(model, k, Q_eval(s) / k)

    @property
    def kgamma(self):
        return self.k * self.gamma

    @property
    def Q(self):
        """Q(s), equal to k * gamma."""
        return self.k * self.gamma

    def to_dict(self):
        return {'model': self.model.value, 'k': self.k, 'd': self.d,
                'gamma': self.gamma, 's': self.s}


def _out(value):
    """Return a Python float for 0-d results, the array otherwise."""
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def _check(x, condition, message):
    if not np.all(condition(x)):
        raise DomainError(message)


# ----------------------------------------------------------------------------
# q family
# ----------------------------------------------------------------------------

def q_eval(x, derivative=0):
    """
    q(x) = e^x - x - 1 and its derivatives q'(x) = e^x - 1, q''(x) = e^x.

    Parameters:
    -----------
    x : float or array
        Nonnegative argument
    derivative : int
        0, 1 or 2
    """
    x = np.asarray(x, dtype=float)
    _check(x, lambda v: v >= 0, "q is evaluated on x >= 0 only")
    if derivative == 1:
        return _out(np.expm1(x))
    if derivative == 2:
        return _out(np.exp(x))
    if derivative != 0:
        raise DomainError(f"Unsupported derivative order {derivative}")
    series = x**2 / 2 + x**3 / 6 + x**4 / 24 + x**5 / 120 + x**6 / 720
    with np.errstate(over='ignore'):
        direct = np.expm1(x) - x
    return _out(np.where(x < _CFG['series_cutoff'], series, direct))


def log_q(x):
    """ln q(x), finite for any x > 0 (ln q(0) = -inf)."""
    x = np.asarray(x, dtype=float)
    _check(x, lambda v: v >= 0, "log_q is evaluated on x >= 0 only")
    with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
        small = np.log(np.asarray(q_eval(np.minimum(x, 1.0))))
        large = x + np.log1p(-(x + 1.0) * np.exp(-x))
    return _out(np.where(x < 1.0, small, large))


def log_qprime(x):
    """ln q'(x) = ln(e^x - 1)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
        small = np.log(np.expm1(np.minimum(x, 1.0)))
        large = x + np.log1p(-np.exp(-x))
    return _out(np.where(x < 1.0, small, large))


def Q_eval(x):
    """Q(x) = x q'(x)/q(x), strictly increasing from Q(0+) = 2 with Q(x) > x."""
    x = np.asarray(x, dtype=float)
    _check(x, lambda v: v > 0, "Q is evaluated on x > 0 only")
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        series = (1 + x / 2 + x**2 / 6 + x**3 / 24) / (0.5 + x / 6 + x**2 / 24 + x**3 / 120)
        e = np.expm1(np.minimum(x, 1.0))
        middle = np.minimum(x, 1.0) * e / (e - np.minimum(x, 1.0))
        tail = np.exp(-x)
        large = x * (-np.expm1(-x)) / (1.0 - (x + 1.0) * tail)
    cutoff = _CFG['series_cutoff']
    return _out(np.where(x < cutoff, series, np.where(x < 1.0, middle, large)))


def C_eval(x):
    """
    C(x) = q(x)/(x q'(x)) + q''(x) q(x)/q'(x)^2 - 1, positive for x > 0.

    Near zero C(x) = x/12 - x^3/240 + O(x^5); for large x it tends to 1/x.
    """
    x = np.asarray(x, dtype=float)
    _check(x, lambda v: v > 0, "C is evaluated on x > 0 only")
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        inverse_Q = 1.0 / np.asarray(Q_eval(np.maximum(x, _CFG['series_cutoff'])))
        xm = np.minimum(x, 1.0)
        e = np.expm1(xm)
        b_middle = ((e - xm) - xm * e) / e**2
        t = np.exp(-x)
        b_large = (t * (1.0 - x) - t * t) / (-np.expm1(-x))**2
        b = np.where(x < 1.0, b_middle, b_large)
        series = x / 12 - x**3 / 240
    return _out(np.where(x < _CFG['series_cutoff'], series, inverse_Q + b))


def Q_derivative(x):
    """dQ/dx = Q(x)^2 C(x) / x."""
    x = np.asarray(x, dtype=float)
    return _out(np.asarray(Q_eval(x))**2 * np.asarray(C_eval(x)) / x)


def Q_inverse(t, guard=None):
    """
    Unique x > 0 with Q(x) = t.

    Raises NoSolutionError for t <= 2 + guard and ConvergenceError when the
    bracketed root search stalls.
    """
    guard = _CFG['q_inverse_guard'] if guard is None else guard
    t = float(t)
    if not t > 2.0 + guard:
        raise NoSolutionError(f"Q_inverse needs t > 2 + {guard:g}, got {t!r}")
    lo, hi = 1e-12, t
    try:
        x = optimize.brentq(lambda v: Q_eval(v) - t, lo, hi, xtol=1e-15,
                            rtol=4 * np.finfo(float).eps, maxiter=_CFG['max_iter'])
    except RuntimeError as exc:
        raise ConvergenceError(f"Q_inverse({t}) did not converge") from exc
    residual = Q_eval(x) - t
    if abs(residual) > _CFG['root_tol'] * max(1.0, t):
        raise ConvergenceError(f"Q_inverse({t}) residual {residual:.3e}")
    return x


def Q_inverse_array(t, guard=None):
    """Vectorized Q_inverse by safeguarded Newton inside a shrinking bracket."""
    guard = _CFG['q_inverse_guard'] if guard is None else guard
    t = np.asarray(t, dtype=float)
    if np.any(t <= 2.0 + guard):
        raise NoSolutionError(f"Q_inverse needs t > 2 + {guard:g}")
    lo = np.zeros_like(t)
    hi = t.copy()
    x = np.clip(np.maximum(t - 1.0, 3.0 * (t - 2.0)), 1e-12, t)
    tol = _CFG['root_tol'] * np.maximum(1.0, t)
    for _ in range(_CFG['max_iter']):
        f = np.asarray(Q_eval(x)) - t
        if np.all(np.abs(f) <= tol):
            return _out(x)
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        candidate = x - f / np.asarray(Q_derivative(x))
        outside = ~((candidate > lo) & (candidate < hi))
        x = np.where(outside, 0.5 * (lo + hi), candidate)
    raise ConvergenceError("Q_inverse_array did not converge")


def ratio_LKM(a, s):
    """
    Return (L, K, M) = (q(as)/q(s), q'(as)/q'(s), e^{as}/e^{s}).

    On 0 <= a <= 1 these satisfy aK <= L <= K <= M.
    """
    a = np.asarray(a, dtype=float)
    _check(a, lambda v: (v >= 0) & (v <= 1), "ratio_LKM needs 0 <= a <= 1")
    if not s > 0:
        raise DomainError(f"ratio_LKM needs s > 0, got {s}")
    with np.errstate(divide='ignore'):
        L = np.exp(np.asarray(log_q(a * s)) - log_q(s))
        K = np.exp(np.asarray(log_qprime(a * s)) - log_qprime(s))
    M = np.exp((a - 1.0) * s)
    return _out(L), _out(K), _out(M)


# ----------------------------------------------------------------------------
# mod-3 column polynomial r
# ----------------------------------------------------------------------------

def r_eval(x0, x1, x2, k, derivatives=False):
    """
    r(x0, x1, x2) = (1/3)[(x0+x1+x2)^k + (x0+w1 x1+w2 x2)^k + (x0+w2 x1+w1 x2)^k].

    Evaluated in complex arithmetic with w1 = e^{2 pi i/3}. The imaginary residue is
    checked against the magnitude and dropped. With derivatives=True returns a dict
    holding r and its partials r_x1, r_x2, r_x1x1, r_x1x2, r_x2x2.
    """
    if k < 1:
        raise DomainError(f"r needs k >= 1, got {k}")
    x0, x1, x2 = (np.asarray(v, dtype=complex) for v in (x0, x1, x2))
    total = x0 + x1 + x2
    z1 = x0 + W1 * x1 + W2 * x2
    z2 = x0 + W2 * x1 + W1 * x2
    value = (total**k + z1**k + z2**k) / 3.0
    magnitude = (np.abs(total)**k + np.abs(z1)**k + np.abs(z2)**k) / 3.0
    if np.any(np.abs(value.imag) > _CFG['r_imag_tol'] * np.maximum(magnitude, 1e-300)):
        raise ConvergenceError("r_eval imaginary residue above tolerance")
    if not derivatives:
        return _out(value.real)

    first = k / 3.0
    out = {
        'r': _out(value.real),
        'r_x1': _out((first * (total**(k - 1) + W1 * z1**(k - 1) + W2 * z2**(k - 1))).real),
        'r_x2': _out((first * (total**(k - 1) + W2 * z1**(k - 1) + W1 * z2**(k - 1))).real),
    }
    if k < 2:
        zero = _out(np.zeros_like(value.real))
        out.update({'r_x1x1': zero, 'r_x1x2': zero, 'r_x2x2': zero})
        return out
    second = k * (k - 1) / 3.0
    t2, a2, b2 = total**(k - 2), z1**(k - 2), z2**(k - 2)
    out['r_x1x1'] = _out((second * (t2 + W1 * W1 * a2 + W2 * W2 * b2)).real)
    out['r_x1x2'] = _out((second * (t2 + a2 + b2)).real)
    out['r_x2x2'] = _out((second * (t2 + W2 * W2 * a2 + W1 * W1 * b2)).real)
    return out


def log_r(y0, y1, y2, k):
    """ln r(y0, y1, y2); raises DomainError when r <= 0."""
    value = np.asarray(r_eval(y0, y1, y2, k))
    if np.any(value <= 0):
        raise DomainError("r(y) <= 0 is outside the domain of ln r")
    return _out(np.log(value))


def r_coeff(k1, k2, k):
    """Coefficient of x1^k1 x2^k2 in r(1, x1, x2): a trinomial when k1 = k2 (mod 3), else 0."""
    if k1 < 0 or k2 < 0 or k1 + k2 > k:
        raise DomainError(f"r_coeff needs k1, k2 >= 0 and k1 + k2 <= k, got ({k1}, {k2}, {k})")
    if (k1 - k2) % 3:
        return 0
    return math.comb(k, k1) * math.comb(k - k1, k2)


def R_map(x1, x2, k):
    """R(x1, x2) = (x1 r_x1 / r, x2 r_x2 / r) evaluated at (1, x1, x2)."""
    parts = r_eval(1.0, x1, x2, k, derivatives=True)
    r = parts['r']
    if np.any(np.asarray(r) <= 0):
        raise DomainError("R_map is undefined where r(1, x1, x2) <= 0")
    return _out(x1 * np.asarray(parts['r_x1']) / r), _out(x2 * np.asarray(parts['r_x2']) / r)


def R_jacobian(x1, x2, k, log_coords=False):
    """
    Jacobian of R at (x1, x2).

    In log coordinates the matrix is the covariance of the slot-class counts under the
    tilted column distribution and hence symmetric positive semidefinite.
    """
    parts = r_eval(1.0, x1, x2, k, derivatives=True)
    r = parts['r']
    t = np.array([x1 * parts['r_x1'] / r, x2 * parts['r_x2'] / r])
    x = np.array([x1, x2], dtype=float)
    second = np.array([[parts['r_x1x1'], parts['r_x1x2']],
                       [parts['r_x1x2'], parts['r_x2x2']]]) / r
    jac = np.diag(t) + np.outer(x, x) * second - np.outer(t, t)
    if log_coords:
        return jac
    return jac / x[np.newaxis, :]


def R_inverse(t1, t2, k, tol=None, radius=None):
    """
    Solve R(c1, c2) = (t1, t2) by damped Newton in u = ln c started from (1, 1).

    ln r(1, e^u1, e^u2) - t.u is convex in u, so backtracking on it keeps the
    iteration monotone. Raises DomainError outside the configured neighborhood of
    (k/3, k/3) and ConvergenceError when the tolerance is not reached.
    """
    tol = _CFG['r_inverse_tol'] if tol is None else tol
    radius = _CFG['r_inverse_radius'] if radius is None else radius
    target = np.array([t1, t2], dtype=float)
    if np.max(np.abs(target - k / 3.0)) > radius * k:
        raise DomainError(f"R_inverse target {target} outside radius {radius}*k of k/3")

    def objective(u):
        return math.log(r_eval(1.0, math.exp(u[0]), math.exp(u[1]), k)) - target @ u

    u = np.zeros(2)
    for iteration in range(_CFG['max_iter']):
        c = np.exp(u)
        residual = np.array(R_map(c[0], c[1], k)) - target
        if np.max(np.abs(residual)) <= tol:
            logger.debug("R_inverse converged in %d iterations", iteration)
            return float(c[0]), float(c[1])
        step = np.linalg.solve(R_jacobian(c[0], c[1], k, log_coords=True), residual)
        current = objective(u)
        slope = residual @ step
        damping = 1.0
        while damping > 1e-8:
            trial = u - damping * step
            if objective(trial) <= current - 1e-4 * damping * slope:
                break
            damping *= 0.5
        u = u - damping * step
    raise ConvergenceError(f"R_inverse({t1}, {t2}, k={k}) did not converge")


# ----------------------------------------------------------------------------
# uniquely-extendible polynomial p
# ----------------------------------------------------------------------------

def p_eval(z, k, d, derivative=0):
    """p(z) = (1/d)[(1+z)^k + (d-1)(1 - z/(d-1))^k] and its first two derivatives."""
    if d < 2:
        raise DomainError(f"p needs d >= 2, got {d}")
    z = np.asarray(z, dtype=float)
    u, v = 1.0 + z, 1.0 - z / (d - 1)
    if derivative == 0:
        return _out((u**k + (d - 1) * v**k) / d)
    if derivative == 1:
        return _out(k * (u**(k - 1) - v**(k - 1)) / d)
    if derivative == 2:
        return _out(k * (k - 1) * (u**(k - 2) + v**(k - 2) / (d - 1)) / d)
    raise DomainError(f"Unsupported derivative order {derivative}")


def p_i_closed(i, d):
    """Exact p_i = (1/d)(1 + (-1)^i (1/(d-1))^{i-1}), with p_0 = 1."""
    if i < 0 or d < 2:
        raise DomainError(f"p_i needs i >= 0 and d >= 2, got ({i}, {d})")
    if i == 0:
        return Fraction(1)
    return Fraction(1, d) * (1 + (-1)**i * Fraction(1, d - 1)**(i - 1))


def p_coefficients(k, d):
    """Exact coefficients [C(k,i) p_i for i = 0..k] of p(z)."""
    return [math.comb(k, i) * p_i_closed(i, d) for i in range(k + 1)]


def P_map(z, k, d):
    """P(z) = z p'(z)/p(z)."""
    p = np.asarray(p_eval(z, k, d))
    if np.any(p <= 0):
        raise DomainError("P is undefined where p(z) <= 0")
    return _out(np.asarray(z) * np.asarray(p_eval(z, k, d, derivative=1)) / p)


def P_derivative(z, k, d):
    """dP/dz from p, p', p''."""
    p = p_eval(z, k, d)
    p1 = p_eval(z, k, d, derivative=1)
    p2 = p_eval(z, k, d, derivative=2)
    return p1 / p + z * p2 / p - z * p1 * p1 / (p * p)


def P_inverse(t, k, d, tol=None):
    """
    Solve P(c) = t for c > 0.

    P increases from 0 to k in ln z because p has nonnegative coefficients; the root is
    bracketed around ln(d-1) and polished with brentq.
    """
    tol = _CFG['p_inverse_tol'] if tol is None else tol
    if not 0 < t < k:
        raise NoSolutionError(f"P_inverse needs 0 < t < k, got {t}")

    def f(u):
        return P_map(math.exp(u), k, d) - t

    center = math.log(d - 1) if d > 2 else 0.0
    lo, hi = center - 1.0, center + 1.0
    for _ in range(_CFG['max_iter']):
        if f(lo) < 0 < f(hi):
            break
        if f(lo) >= 0:
            lo -= 1.0
        if f(hi) <= 0:
            hi += 1.0
    else:
        raise ConvergenceError(f"P_inverse({t}) could not bracket the root")
    try:
        u = optimize.brentq(f, lo, hi, xtol=1e-15, maxiter=_CFG['max_iter'])
    except RuntimeError as exc:
        raise ConvergenceError(f"P_inverse({t}) did not converge") from exc
    c = math.exp(u)
    if abs(P_map(c, k, d) - t) > tol * max(1.0, t):
        raise ConvergenceError(f"P_inverse({t}) residual above tolerance")
    return c
