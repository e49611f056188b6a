"""Arithmetic of two-sided complex exponents and the plane Gamma factor.

Every propagator and every closed-form factor in this package is indexed by a
pair of exponents ``(a, abar)`` whose difference must be an integer, so that
``z**(-a) * conj(z)**(-abar)`` is single valued.  The pair is stored in the
snapped form ``(m, w)`` with ``m = a - abar`` exactly integer and
``w = (a + abar)/2``, which keeps vector arithmetic on exponents exact.

The basic special function is the ratio ``G[a, abar] = Gamma(a)/Gamma(1-abar)``
("the Gamma factor of the pair").  Poles and zeros are reported in-band via
:class:`GammaValue` rather than with exceptions; closed-form evaluators combine
many factors in log space through :func:`gamma_product`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import loggamma

from .errors import NonIntegerDifference, PoleEncountered

INT_TOL = 1e-9
_POLE_TOL = 1e-9


@dataclass(frozen=True)
class FieldExponent:
    """A validated exponent pair, stored as integer part + continuous part.

    ``a = w + m/2`` and ``abar = w - m/2`` reconstruct the original pair.
    """

    m: int
    w: complex

    @property
    def a(self) -> complex:
        return self.w + self.m / 2

    @property
    def abar(self) -> complex:
        return self.w - self.m / 2

    def __add__(self, other):
        if isinstance(other, FieldExponent):
            return FieldExponent(self.m + other.m, self.w + other.w)
        if isinstance(other, (int, float, complex)):
            return FieldExponent(self.m, self.w + other)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, FieldExponent):
            return FieldExponent(self.m - other.m, self.w - other.w)
        if isinstance(other, (int, float, complex)):
            return FieldExponent(self.m, self.w - other)
        return NotImplemented

    def __neg__(self):
        return FieldExponent(-self.m, -self.w)

    def is_zero(self, tol: float = 1e-12) -> bool:
        return self.m == 0 and abs(self.w) <= tol

    def key(self, ndigits: int = 9):
        """Rounded sort/equality key for canonical orderings."""
        return (self.m, round(self.w.real, ndigits), round(self.w.imag, ndigits))


def make_exponent(a: complex, abar: complex) -> FieldExponent:
    """Validate and snap a raw ``(a, abar)`` pair.

    Raises :class:`NonIntegerDifference` unless ``a - abar`` is within
    ``1e-9`` of an integer.  The integer part is snapped exactly.
    """
    diff = complex(a) - complex(abar)
    m = round(diff.real)
    if abs(diff - m) > INT_TOL:
        raise NonIntegerDifference(
            f"a - abar = {diff} is not an integer (tol {INT_TOL})"
        )
    w = (complex(a) + complex(abar)) / 2
    return FieldExponent(m, w)


def exponent_reflect(u: FieldExponent) -> FieldExponent:
    """The reflected pair ``(1 - a, 1 - abar)``."""
    return FieldExponent(-u.m, 1 - u.w)


def exponent_bar(u: FieldExponent) -> FieldExponent:
    """Swap the two slots: ``(abar, a)``."""
    return FieldExponent(-u.m, u.w)


def exponent_conj(u: FieldExponent) -> FieldExponent:
    """Slot-wise complex conjugate ``(a*, abar*)``.

    This is the exponent of the conjugated *parameters*; the value of a
    Gamma factor at ``exponent_conj(u)`` equals the complex conjugate of its
    value at ``u``.
    """
    return FieldExponent(u.m, u.w.conjugate())


def exponent_dagger(u: FieldExponent) -> FieldExponent:
    """Exponent of the conjugated *function*: ``(conj(abar), conj(a))``.

    Satisfies ``conj(D_u(z)) = D_dagger(u)(z)`` pointwise.
    """
    return FieldExponent(-u.m, u.w.conjugate())


def sign_factor(u: FieldExponent) -> int:
    """``(-1)**m`` for the integer part ``m = a - abar``."""
    return -1 if u.m % 2 else 1


@dataclass(frozen=True)
class GammaValue:
    """Result of a Gamma-factor evaluation with in-band pole bookkeeping."""

    value: complex
    is_pole: bool = False
    pole_order: int = 0

    def __complex__(self):
        return complex(self.value)


def _near_nonpositive_int(z: complex, tol: float = _POLE_TOL):
    """Return the nonpositive integer within tol of z, or None."""
    if abs(z.imag) > tol:
        return None
    k = round(z.real)
    if k > 0 or abs(z - k) > tol:
        return None
    return k


def cgamma(u: FieldExponent) -> GammaValue:
    """The pair Gamma factor ``Gamma(a) / Gamma(1 - abar)``.

    Poles of the numerator give ``is_pole=True`` with an infinite marker
    value; poles of the denominator give exact zeros.  When both slots are
    singular the finite limit (taken along fixed integer part) is returned.
    """
    a = u.a
    one_minus_abar = 1 - u.abar
    k_num = _near_nonpositive_int(a)
    k_den = _near_nonpositive_int(one_minus_abar)
    if k_num is not None and k_den is None:
        return GammaValue(complex(math.inf, 0.0), is_pole=True, pole_order=1)
    if k_den is not None and k_num is None:
        return GammaValue(0j, is_pole=False, pole_order=0)
    if k_num is not None and k_den is not None:
        # Gamma(-k+d)/Gamma(-j-d) -> (-1)**(k-j+1) * j!/k!  as d -> 0,
        # the direction being fixed by the constant integer part.
        k, j = -k_num, -k_den
        val = (-1.0) ** ((k - j + 1) % 2) * math.factorial(j) / math.factorial(k)
        return GammaValue(complex(val), is_pole=False, pole_order=0)
    val = np.exp(loggamma(complex(a)) - loggamma(complex(one_minus_abar)))
    return GammaValue(complex(val))


def afactor(u: FieldExponent) -> GammaValue:
    """Reciprocal Gamma factor ``Gamma(1 - abar) / Gamma(a)``."""
    g = cgamma(u)
    if g.is_pole:
        return GammaValue(0j)
    if g.value == 0:
        return GammaValue(complex(math.inf, 0.0), is_pole=True, pole_order=1)
    return GammaValue(1 / g.value)


def log_cgamma(u: FieldExponent) -> complex:
    """log of the pair Gamma factor; raises on poles and zeros."""
    g_num = _near_nonpositive_int(u.a)
    g_den = _near_nonpositive_int(1 - u.abar)
    if g_num is not None or g_den is not None:
        raise PoleEncountered(f"Gamma factor singular at {u}")
    return complex(loggamma(complex(u.a)) - loggamma(complex(1 - u.abar)))


def gamma_product(factors) -> complex:
    """Evaluate ``prod G[u]**mult`` stably in log space.

    ``factors`` is an iterable of ``(FieldExponent, int)``.  Any factor
    sitting on a pole or zero raises :class:`PoleEncountered`; cancellation
    between distinct singular factors is not attempted (callers cancel
    identical exponents symbolically before evaluating).
    """
    total = 0j
    for u, mult in factors:
        if mult == 0:
            continue
        total += mult * log_cgamma(u)
    return complex(np.exp(total))


def log_cgamma_raw(a, abar):
    """Vectorized, unvalidated ``log G``: arrays in, array out.

    Numeric kernel for Mellin-Barnes integrands: no integer-difference
    validation and no pole handling (singular inputs produce inf/nan).
    """
    return loggamma(np.asarray(a, dtype=complex)) - loggamma(
        1 - np.asarray(abar, dtype=complex)
    )
