"""Analytical limit objects: f, h, m, D, g, tail asymptotes, conditional limits.

All of these are deterministic functions of the tail exponents.  In the
recurrent regime the exponents are coupled, alpha = 1/rho with alpha in (1, 2);
in the transient regime a single index theta > 1 appears.  Conventions:

  m(u)  = sin(pi rho)/pi * (1+u) u^{rho-1} / (u^{2 rho} - 2 u^rho cos(pi rho) + 1)
  h(s)  = int_0^s (s-u)^{rho-1} m(u) du           (values in (0,1))
  f(x)  = [x^{rho-1} + h(x)] / Gamma(rho)          (evaluated by its own quadrature)
  D(q)  = (1 - q^{rho-1}) / (q^rho - 1),  D(1) = (1-rho)/rho by continuity
  g(x)  = (alpha-1)/(Gamma(2-alpha) Gamma(alpha-1))
          * int_0^1 s^{alpha-2} ds int_0^1 t^{alpha-2} (x+1-xt-s)^{1-alpha} dt

The quadrature style is fixed: endpoint power singularities are removed by the
exact substitutions u = x w^{1/rho} (left) and u = x (1 - v^{1/rho}) (right),
improper ranges are split at 1 and folded by u -> 1/u with explicit power-law
Jacobians, and the remaining smooth integrands go to adaptive quadrature.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from .model import DomainError, ProcessSpec, phi

__all__ = [
    "LimitParams",
    "stieltjes_m",
    "stieltjes_D",
    "stieltjes_D_from_m",
    "stieltjes_D_from_h",
    "limit_h",
    "limit_f",
    "limit_g",
    "recurrent_length_limit",
    "recurrent_height_limit",
    "transient_limit",
    "tail_asymptote",
]

DEFAULT_TOL = 1e-8


def _check_rho(rho: float) -> None:
    if not (0.0 < rho < 1.0):
        raise DomainError(f"rho must lie in (0,1), got {rho}")


def _check_alpha(alpha: float) -> None:
    if not (1.0 < alpha < 2.0):
        raise DomainError(f"alpha must lie in (1,2), got {alpha}")


class LimitParams:
    """Validated parameter bundle for the limit functions.

    Enforces the alpha*rho = 1 coupling: construct from either exponent.
    """

    def __init__(self, rho: float | None = None, alpha: float | None = None,
                 theta: float | None = None, eps_q: float = DEFAULT_TOL):
        if rho is None and alpha is not None:
            _check_alpha(alpha)
            rho = 1.0 / alpha
        if rho is not None:
            _check_rho(rho)
            if alpha is not None and abs(alpha * rho - 1.0) > 1e-12:
                raise DomainError("alpha * rho = 1 is enforced")
            alpha = 1.0 / rho
        if theta is not None and not (theta > 1.0):
            raise DomainError("theta must exceed 1")
        self.rho = rho
        self.alpha = alpha
        self.theta = theta
        self.eps_q = eps_q


def _m_core(u, rho: float):
    """(1+u) u^{rho-1} / (u^{2rho} - 2 u^rho cos(pi rho) + 1), vectorized.

    The denominator equals (u^rho - cos(pi rho))^2 + sin^2(pi rho) >= sin^2 > 0.
    """
    u = np.asarray(u, dtype=float)
    ur = u**rho
    denom = (ur - math.cos(math.pi * rho)) ** 2 + math.sin(math.pi * rho) ** 2
    return (1.0 + u) * u ** (rho - 1.0) / denom


def stieltjes_m(u: float, rho: float) -> float:
    """Stieltjes density m(u), u > 0."""
    _check_rho(rho)
    if np.any(np.asarray(u) <= 0.0):
        raise DomainError("stieltjes_m requires u > 0")
    return math.sin(math.pi * rho) / math.pi * _m_core(u, rho)


def stieltjes_D(q: float, rho: float) -> float:
    """D(q) = (1 - q^{rho-1}) / (q^rho - 1); removable point at q = 1.

    Within |q-1| < 1e-4 the 0/0 form is replaced by the stable log-ratio
    expansion D = ((1-rho)/rho) * P((rho-1)L) / P(rho L), L = log q,
    P(z) = (e^z - 1)/z expanded to fourth order.
    """
    _check_rho(rho)
    if q <= 0.0:
        raise DomainError("stieltjes_D requires q > 0")
    if abs(q - 1.0) >= 1e-4:
        return (1.0 - q ** (rho - 1.0)) / (q**rho - 1.0)
    L = math.log(q)

    def relexp(z):  # (e^z - 1)/z
        return 1.0 + z / 2.0 + z * z / 6.0 + z**3 / 24.0 + z**4 / 120.0

    return (1.0 - rho) / rho * relexp((rho - 1.0) * L) / relexp(rho * L)


def _power_sub_quad(f_of_u, upper: float, rho: float, tol: float) -> float:
    """int_0^upper u^{rho-1} f(u) du with the u = upper * w^{1/rho} substitution.

    The Jacobian absorbs the u^{rho-1} singularity exactly:
    integral = (upper^rho / rho) * int_0^1 f(upper * w^{1/rho}) dw.
    """
    def g(w):
        return f_of_u(upper * w ** (1.0 / rho))

    val, _ = quad(g, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)
    return upper**rho / rho * val


def _h_integral(s: float, rho: float, tol: float, splits=(0.5,)) -> float:
    """int_0^s (s-u)^{rho-1} m_core(u) du with singularities removed.

    ``splits`` are the interior cut fractions; pieces touching u = 0 use the
    left power substitution, pieces touching u = s the right one, interior
    pieces need none.  Different split lists give numerically independent
    evaluations of the same integral.
    """
    cuts = [0.0] + [c * s for c in splits] + [s]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if lo == 0.0:
            # u = hi * w^{1/rho}; absorbs u^{rho-1} from m_core
            def f_left(u, _hi=hi):
                return (s - u) ** (rho - 1.0) * _m_core(u, rho) / u ** (rho - 1.0)

            total += _power_sub_quad(f_left, hi, rho, tol)
        elif hi == s:
            # s - u = (s - lo) * v^{1/rho}; absorbs (s-u)^{rho-1}
            width = s - lo

            def g(v):
                u = s - width * v ** (1.0 / rho)
                return _m_core(u, rho)

            val, _ = quad(g, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)
            total += width**rho / rho * val
        else:
            def f_mid(u):
                return (s - u) ** (rho - 1.0) * _m_core(u, rho)

            val, _ = quad(f_mid, lo, hi, epsabs=tol, epsrel=tol, limit=200)
            total += val
    return total


def limit_h(a: float, rho: float, tol: float = DEFAULT_TOL) -> float:
    """h(a) in (0,1), the correction term of the recurrent length limit."""
    _check_rho(rho)
    if a <= 0.0:
        raise DomainError("limit_h requires a > 0")
    return math.sin(math.pi * rho) / math.pi * _h_integral(a, rho, tol, splits=(0.5,))


def limit_f(a: float, rho: float, tol: float = DEFAULT_TOL) -> float:
    """f(a) = [a^{rho-1} + (integral)] / Gamma(rho).

    The integral is the same kernel as h but is evaluated on a different
    partition (0.3/0.7 cuts), so the identity Gamma(rho) f(a) = a^{rho-1} + h(a)
    is a genuine cross-check of two quadrature paths.
    """
    _check_rho(rho)
    if a <= 0.0:
        raise DomainError("limit_f requires a > 0")
    integral = math.sin(math.pi * rho) / math.pi * _h_integral(
        a, rho, tol, splits=(0.3, 0.7)
    )
    return (a ** (rho - 1.0) + integral) / gamma_fn(rho)


def stieltjes_D_from_m(q: float, rho: float, tol: float = DEFAULT_TOL) -> float:
    """D(q) = int_0^inf m(u)/(q+u) du.

    Split at 1; the far piece folds back by u -> 1/v, which maps m into the
    same functional form with (q + u) -> (q v + 1) (the denominator identity
    denom(1/v) = v^{-2 rho} denom(v) makes this exact), and both pieces then
    lose their u^{rho-1} endpoint singularity to the power substitution.
    """
    _check_rho(rho)
    if q <= 0.0:
        raise DomainError("stieltjes_D_from_m requires q > 0")
    c = math.sin(math.pi * rho) / math.pi

    def near(u):  # m_core(u)/(q+u) without the u^{rho-1} factor
        ur = u**rho
        denom = (ur - math.cos(math.pi * rho)) ** 2 + math.sin(math.pi * rho) ** 2
        return (1.0 + u) / (denom * (q + u))

    def far(v):  # after u = 1/v: (1+v) v^{rho-1} / (denom(v) (q v + 1))
        vr = v**rho
        denom = (vr - math.cos(math.pi * rho)) ** 2 + math.sin(math.pi * rho) ** 2
        return (1.0 + v) / (denom * (q * v + 1.0))

    left = _power_sub_quad(near, 1.0, rho, tol)
    right = _power_sub_quad(far, 1.0, rho, tol)
    return c * (left + right)


def stieltjes_D_from_h(q: float, rho: float, tol: float = DEFAULT_TOL) -> float:
    """D(q) = Gamma(rho+1) int_0^inf [h(s)/Gamma(rho)] (q+s)^{-rho-1} ds.

    Outer split at 1 with the s -> 1/v fold (Jacobian v^{rho-1}, removed by the
    power substitution; h(1/v) -> 1 as v -> 0 keeps the integrand bounded).
    """
    _check_rho(rho)
    if q <= 0.0:
        raise DomainError("stieltjes_D_from_h requires q > 0")
    inner_tol = max(tol * 1e-1, 1e-11)

    def h_of(s):
        return limit_h(s, rho, tol=inner_tol)

    def near(s):
        return h_of(s) / (q + s) ** (rho + 1.0)

    val_near, _ = quad(near, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=100)

    def far(v):  # s = 1/v; integrand h(1/v) v^{rho-1} / (q v + 1)^{rho+1}
        return h_of(1.0 / v) / (q * v + 1.0) ** (rho + 1.0)

    val_far = _power_sub_quad(far, 1.0, rho, tol)
    return gamma_fn(rho + 1.0) / gamma_fn(rho) * (val_near + val_far)


def limit_g(a: float, alpha: float, tol: float = DEFAULT_TOL, levels: int = 46) -> float:
    """g(a) in (0,1), the recurrent height conditional limit.

    The substitutions sigma = s^{alpha-1}, tau = t^{alpha-1} remove the
    s^{alpha-2}, t^{alpha-2} endpoint singularities exactly (ds s^{alpha-2} =
    d sigma/(alpha-1)), leaving the integrable corner blow-up of
    (a+1-at-s)^{1-alpha} at (1,1).  The square is integrated over dyadic
    L-shaped shells closing on that corner, Gauss-Legendre per panel; the
    leftover corner square of side 2^-levels contributes O(delta^{3-alpha}).
    """
    _check_alpha(alpha)
    if a <= 0.0:
        raise DomainError("limit_g requires a > 0")
    p = 1.0 / (alpha - 1.0)
    nodes, weights = np.polynomial.legendre.leggauss(24)

    def panel(s_lo, s_hi, t_lo, t_hi):
        hs, ht = 0.5 * (s_hi - s_lo), 0.5 * (t_hi - t_lo)
        sig = s_lo + hs * (nodes + 1.0)
        tau = t_lo + ht * (nodes + 1.0)
        s = sig**p
        t = tau**p
        base = a + 1.0 - a * t[None, :] - s[:, None]
        vals = base ** (1.0 - alpha)
        return hs * ht * float(weights @ vals @ weights)

    total = 0.0
    lo = 0.0  # shells: [lo_k, 1]^2 \ [lo_{k+1}, 1]^2 with 1-lo_k = 2^-k
    for k in range(levels):
        nxt = 1.0 - 0.5 ** (k + 1)
        # left strip of the shell plus its top-right companion
        total += panel(lo, nxt, lo, 1.0)
        total += panel(nxt, 1.0, lo, nxt)
        lo = nxt
    const = 1.0 / ((alpha - 1.0) * gamma_fn(2.0 - alpha) * gamma_fn(alpha - 1.0))
    return const * total


def recurrent_length_limit(a: float, rho: float, tol: float = DEFAULT_TOL) -> float:
    """a^{rho-1} + 1 - Gamma(rho) f(a)  (= 1 - h(a)); value in (0,1)."""
    return a ** (rho - 1.0) + 1.0 - gamma_fn(rho) * limit_f(a, rho, tol)


def recurrent_height_limit(a: float, alpha: float, tol: float = DEFAULT_TOL) -> float:
    return limit_g(a, alpha, tol)


def transient_limit(a: float, theta: float) -> float:
    """(1+a)^{1-theta} in (0,1)."""
    if a <= 0.0:
        raise DomainError("transient_limit requires a > 0")
    if not (theta > 1.0):
        raise DomainError("transient_limit requires theta > 1")
    return (1.0 + a) ** (1.0 - theta)


def tail_asymptote(spec: ProcessSpec, kind: str, arg: float) -> float:
    """Right-hand side of the matching tail theorem at the given argument.

    kinds: length_rec, height_rec (recurrent spec), length_tra, height_tra
    (transient spec, conditioned on return).  Phi(1/t) comes from the model
    root-finder, nubar from the jump measure.
    """
    if arg <= 0.0:
        raise DomainError("tail_asymptote requires arg > 0")
    if kind in ("length_rec", "height_rec"):
        if spec.regime != "recurrent":
            raise DomainError(f"{kind} needs a recurrent spec")
        if kind == "length_rec":
            t = arg
            return 1.0 / (spec.b * gamma_fn(spec.rho)) / (t * phi(spec, 1.0 / t))
        h = arg
        const = gamma_fn(2.0 - spec.alpha) * gamma_fn(spec.alpha - 1.0) / spec.b
        return const * h * spec.nu.tail(h)
    if kind in ("length_tra", "height_tra"):
        if spec.regime != "transient":
            raise DomainError(f"{kind} needs a transient spec")
        theta, beta = spec.theta, spec.beta
        const = 1.0 / ((theta - 1.0) * (spec.b - beta))
        if kind == "length_tra":
            t = arg
            return const * beta * t * spec.nu.tail(beta * t)
        h = arg
        return const * h * spec.nu.tail(h)
    raise DomainError(f"unknown asymptote kind {kind!r}")
