"""Chain data, layer kernels, eigenfunctions and closed-form pairings.

Conventions used throughout (and checked by the test suite):

* a separated point is ``x = i n/2 + nu`` with ``n = n2/2`` discrete and
  ``nu`` near-real; its formal partner is ``xbar = -i n/2 + nu``;
* plane-wave conventions follow ``int d2z exp(i((p-q)z + conj)) = pi^2 d2(p-q)``,
  so the chain-length-N position function and its momentum image are related
  by ``Psi(z) = pi^{-N} int Psi~(p) exp(i sum p_k z_k) d2p``;
* momentum-space eigenfunction values are fully normalized: the constants are
  derived by transforming the layered position-space definition edge by edge
  (each propagator contributes ``i^{-[mu]} a(mu)`` together with its reflected
  momentum leg, and the net pi power is ``N - N^2/2``);
* the regulator acts as multiplication by ``(p_N conj(p_N))**eps`` with all
  derived constants frozen at ``eps = 0``.

Only integer-parity sectors are representable by validated exponent pairs
(gamma entries must themselves have integer two-sided difference); the
discrete-sector bookkeeping of half-integer lattices lives in the
Mellin-Barnes module where only full combinations enter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cfield import (FieldExponent, cgamma, exponent_bar, exponent_conj,
                     exponent_dagger, exponent_reflect, gamma_product,
                     log_cgamma, make_exponent)
from .diagrams import ClosedFormFactor, Diagram
from .errors import (BranchCutHit, ConvergenceDomainViolated, PoleEncountered,
                     TooShort)
from .plane import (IntegralEstimate, QuadratureSpec, eval_propagator,
                    integrate_c2)

_TOL = 1e-9


# ---------------------------------------------------------------------------
# Separated variables and chain data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeparatedPoint:
    """One separated variable ``x = i n/2 + nu`` with ``n = n2/2``."""

    n2: int
    nu: complex

    def __post_init__(self):
        if abs(complex(self.nu).imag) >= 0.5:
            raise ValueError("nu must stay in the strip |Im nu| < 1/2")
        object.__setattr__(self, "nu", complex(self.nu))

    @property
    def n(self) -> float:
        return self.n2 / 2

    @property
    def x(self) -> complex:
        return self.nu + 0.25j * self.n2

    @property
    def xbar(self) -> complex:
        return self.nu - 0.25j * self.n2

    def shifted(self, dnu: complex) -> "SeparatedPoint":
        return SeparatedPoint(self.n2, self.nu + dnu)


def g_minus_ix(g: FieldExponent, x: SeparatedPoint) -> FieldExponent:
    """Pair ``(g - i x, gbar - i xbar)``."""
    return make_exponent(g.a - 1j * x.x, g.abar - 1j * x.xbar)


def g_plus_ix(g: FieldExponent, x: SeparatedPoint) -> FieldExponent:
    """Pair ``(g + i x, gbar + i xbar)``."""
    return make_exponent(g.a + 1j * x.x, g.abar + 1j * x.xbar)


def bar_g_plus_ix(g: FieldExponent, x: SeparatedPoint) -> FieldExponent:
    """Pair ``(gbar + i xbar, g + i x)`` -- the swapped-slot companion."""
    return make_exponent(g.abar + 1j * x.xbar, g.a + 1j * x.x)


def bar_g_minus_ix(g: FieldExponent, x: SeparatedPoint) -> FieldExponent:
    """Pair ``(gbar - i xbar, g - i x)``."""
    return make_exponent(g.abar - 1j * x.xbar, g.a - 1j * x.x)


def ix_pair(hol: complex, antihol: complex) -> FieldExponent:
    return make_exponent(hol, antihol)


@dataclass(frozen=True)
class ChainSpec:
    """Chain length, spins ``(n2, rho)``, impurities and the regulator."""

    N: int
    spins: tuple
    impurities: tuple
    epsilon: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("chain length must be >= 1")
        if len(self.spins) != self.N or len(self.impurities) != self.N:
            raise ValueError("need one spin and one impurity per site")
        object.__setattr__(self, "spins",
                           tuple((int(n2), float(r)) for n2, r in self.spins))
        object.__setattr__(self, "impurities",
                           tuple(complex(v) for v in self.impurities))
        if self.epsilon < 0:
            raise ValueError("regulator must be nonnegative")
        for xi in self.impurities:
            r = -2 * xi.imag       # i (xi - conj(xi))
            if abs(r - round(2 * r) / 2) > _TOL:
                raise ValueError(
                    f"impurity {xi}: i(xi - xibar) must be a half-integer")

    def spin(self, k: int) -> FieldExponent:
        """Site spin pair ``s_k = (1+n)/2 + i rho``, ``sbar_k = (1-n)/2 + i rho``."""
        n2, rho = self.spins[k]
        n = n2 / 2
        return make_exponent((1 + n) / 2 + 1j * rho, (1 - n) / 2 + 1j * rho)

    def impurity_pair(self, k: int) -> tuple:
        xi = self.impurities[k]
        return xi, xi.conjugate()


@dataclass(frozen=True)
class GammaVector:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)


def _s_plus_minus(chain: ChainSpec, k: int, sign: int) -> FieldExponent:
    """Entry ``s_k + sign * i xi_k`` as a validated pair."""
    s = chain.spin(k)
    xi, xibar = chain.impurity_pair(k)
    return make_exponent(s.a + sign * 1j * xi, s.abar + sign * 1j * xibar)


def build_gamma(chain: ChainSpec, kind: str) -> GammaVector:
    """Index vector of the layered kernels.

    ``B``: ``(s1 - i xi1, s2 + i xi2, s2 - i xi2, ..., sN + i xiN)`` of length
    ``2N - 2`` (empty at N=1); ``A`` appends the trailing ``sN - i xiN``.  A
    positive regulator shifts ``xi_N -> xi_N - i eps`` in both slots, which
    adds ``+eps`` to the ``sN + i xiN`` entry and ``-eps`` to the trailing
    A-entry.
    """
    if kind not in ("B", "A"):
        raise ValueError("kind must be 'B' or 'A'")
    N = chain.N
    entries = []
    if N >= 2:
        entries.append(_s_plus_minus(chain, 0, -1))
        for k in range(1, N - 1):
            entries.append(_s_plus_minus(chain, k, +1))
            entries.append(_s_plus_minus(chain, k, -1))
        entries.append(_s_plus_minus(chain, N - 1, +1))
        if chain.epsilon:
            entries[-1] = entries[-1] + chain.epsilon
    if kind == "A":
        trailing = _s_plus_minus(chain, N - 1, -1)
        if chain.epsilon and N >= 2:
            trailing = trailing - chain.epsilon
        entries.append(trailing)
    return GammaVector(tuple(entries))


def unitarity_defect(g: GammaVector) -> float:
    """max_k |gamma_k + conj(gammabar_k) - 1| (zero on the unitary line)."""
    if not len(g):
        return 0.0
    return max(abs(e.a + e.abar.conjugate() - 1) for e in g)


def rho_map(g: GammaVector) -> GammaVector:
    """Drop the first and last entries, reflect the survivors."""
    if len(g) < 3:
        raise TooShort(f"rho needs length >= 3, got {len(g)}")
    return GammaVector(tuple(exponent_reflect(e) for e in g.entries[1:-1]))


def _iter_rho(g: GammaVector, times: int) -> GammaVector:
    for _ in range(times):
        g = rho_map(g)
    return g


def _reflect_iter(u: FieldExponent, times: int) -> FieldExponent:
    """Scalar reflection iterate: identity for even counts, 1-a for odd."""
    return exponent_reflect(u) if times % 2 else u


# ---------------------------------------------------------------------------
# Reordering coefficient and symmetrizing prefactor
# ---------------------------------------------------------------------------

def omega_factor(g: GammaVector, u: SeparatedPoint, v: SeparatedPoint) -> complex:
    """Layer-reordering coefficient for a ``(2n-2)``-index vector.

    Both printed equivalent forms are evaluated; they must agree to 1e-10
    (an internal consistency check of the slot conventions).
    """
    npairs = len(g) // 2
    f1 = []
    f2 = []
    for m in range(npairs):
        go, ge = g[2 * m], g[2 * m + 1]
        f1 += [(g_minus_ix(go, v), +1), (bar_g_plus_ix(ge, v), +1),
               (g_minus_ix(go, u), -1), (bar_g_plus_ix(ge, u), -1)]
        f2 += [(bar_g_minus_ix(go, v), +1), (g_plus_ix(ge, v), +1),
               (bar_g_minus_ix(go, u), -1), (g_plus_ix(ge, u), -1)]
    form1 = gamma_product(f1)
    form2 = gamma_product(f2)
    if abs(form1 - form2) > 1e-10 * max(1.0, abs(form1)):
        raise PoleEncountered(
            f"slot-swapped forms disagree: {form1} vs {form2}")
    return form1


def varpi_single(x: SeparatedPoint, g: GammaVector):
    """Factor list of the one-variable prefactor on vector ``g``.

    Pairs consecutive entries: ``prod_j G[g_{2j-1} - i x] G[bar g_{2j} + i xbar]``
    over the ``len(g)//2`` full pairs (a trailing odd entry is idle).
    """
    out = []
    for j in range(len(g) // 2):
        out.append((g_minus_ix(g[2 * j], x), +1))
        out.append((bar_g_plus_ix(g[2 * j + 1], x), +1))
    return out


def varpi_factors(xs, g: GammaVector):
    """Factor list of the full symmetrizing prefactor for points ``xs``."""
    out = []
    for m in range(1, len(xs) + 1):
        gm = _iter_rho(g, m - 1)
        for k in range(m):
            out += varpi_single(xs[k], gm)
    return out


def varpi_prefactor(xs, g: GammaVector) -> complex:
    """Symmetrizing prefactor; poles raise :class:`PoleEncountered`."""
    return gamma_product(varpi_factors(xs, g))


# ---------------------------------------------------------------------------
# Layer kernels and eigenfunction specs
# ---------------------------------------------------------------------------

def lambda_kernel(kind: str, n: int, x: SeparatedPoint, g: GammaVector,
                  zs, ws):
    """Pointwise layer kernel value (vectorized over ``ws`` arrays).

    ``B``: ``prod_k D_{g_{2k-1} - i x}(z_k - w_k) D_{g_{2k} + i x}(z_{k+1} - w_k)``;
    ``A`` multiplies the extra ``D_{g_{2n-1} - i x}(z_n)``.
    """
    if len(zs) != n or len(ws) != n - 1:
        raise ValueError("need n outer points and n-1 inner points")
    out = 1
    for k in range(n - 1):
        out = out * eval_propagator(g_minus_ix(g[2 * k], x), zs[k] - ws[k])
        out = out * eval_propagator(g_plus_ix(g[2 * k + 1], x), zs[k + 1] - ws[k])
    if kind == "A":
        out = out * eval_propagator(g_minus_ix(g[2 * n - 2], x), zs[n - 1])
    elif kind != "B":
        raise ValueError("kind must be 'B' or 'A'")
    return out


@dataclass(frozen=True)
class EigenfunctionSpec:
    kind: str
    chain: ChainSpec
    separated: tuple
    momentum: complex | None = None

    def __post_init__(self):
        if self.kind not in ("B", "A"):
            raise ValueError("kind must be 'B' or 'A'")
        want = self.chain.N - 1 if self.kind == "B" else self.chain.N
        if len(self.separated) != want:
            raise ValueError(
                f"{self.kind}-system at N={self.chain.N} needs {want} separated points")
        if self.kind == "B" and self.momentum is None:
            raise ValueError("momentum is required for the B system")
        parities = {p.n2 % 2 for p in self.separated}
        if len(parities) > 1:
            raise ValueError("separated points must share parity")


# ---------------------------------------------------------------------------
# Momentum-space eigenfunction (B system), N <= 3
# ---------------------------------------------------------------------------

def _psi_constant(chain: ChainSpec, xs) -> tuple:
    """(constant, position-index list) of the momentum representation.

    The constant collects ``pi^{N - N^2/2}``, the symmetrizing prefactor and
    one ``i^{-[mu]} a(mu)`` per position edge; the index list drives the
    reflected momentum legs.  Derived constants use the unregulated vector.
    """
    N = chain.N
    g0 = build_gamma(replace(chain, epsilon=0.0), "B")
    if N == 1:
        return math.pi ** 0.5, []
    if N == 2:
        mus = [g_minus_ix(g0[0], xs[0]), g_plus_ix(g0[1], xs[0])]
    elif N == 3:
        rg = rho_map(g0)
        mus = [g_minus_ix(g0[0], xs[0]), g_plus_ix(g0[1], xs[0]),
               g_minus_ix(g0[2], xs[0]), g_plus_ix(g0[3], xs[0]),
               g_minus_ix(rg[0], xs[1]), g_plus_ix(rg[1], xs[1])]
    else:
        raise ValueError("momentum evaluation supports N <= 3")
    const = math.pi ** (N - N * N / 2)
    const *= gamma_product(varpi_factors(xs, g0))
    mtot = sum(mu.m for mu in mus)
    const *= (1j) ** (-mtot % 4)
    const *= gamma_product([(mu, -1) for mu in mus])
    return const, mus


def psi_momentum_value(chain: ChainSpec, xs, momenta):
    """Fully-normalized momentum eigenfunction value(s); N=3 not included
    here (it needs a loop integral, see :func:`psi_momentum_eval`)."""
    N = chain.N
    const, mus = _psi_constant(chain, xs)
    p = sum(momenta)
    eps = chain.epsilon
    if N == 1:
        return const * np.exp(2 * eps * np.log(np.abs(momenta[0])))
    if N != 2:
        raise ValueError("closed momentum values exist for N <= 2 only")
    p1, p2 = momenta
    out = const * np.exp((N - 1) * np.log(np.abs(p)))
    out = out * eval_propagator(exponent_reflect(mus[0]), p1)
    out = out * eval_propagator(exponent_reflect(mus[1]) - eps, p2)
    return out


def psi_momentum_eval(spec: EigenfunctionSpec, momenta,
                      quad: QuadratureSpec | None = None) -> IntegralEstimate:
    """Momentum-space eigenfunction at a concrete momentum point.

    N=1 and N=2 are closed algebraic products; N=3 performs the single loop
    integral.  The regulator multiplies by ``|p_N|**(2 eps)``.
    """
    chain, xs = spec.chain, spec.separated
    if spec.kind != "B":
        raise ValueError("momentum evaluation is defined for the B system")
    N = chain.N
    if len(momenta) != N:
        raise ValueError("need one momentum per site")
    if N <= 2:
        return IntegralEstimate(complex(psi_momentum_value(chain, xs, momenta)),
                                0.0, 0, True)
    const, mus = _psi_constant(chain, xs)
    p1, p2, p3 = (complex(q) for q in momenta)
    p = p1 + p2 + p3
    eps = chain.epsilon
    legs = [(exponent_reflect(mus[0]), p1),
            (exponent_reflect(mus[3]) - eps, p3)]
    e2, e3 = exponent_reflect(mus[1]), exponent_reflect(mus[2])
    e5, e6 = exponent_reflect(mus[4]), exponent_reflect(mus[5])

    def integrand(l):
        return (eval_propagator(e2, l) * eval_propagator(e3, p2 - l)
                * eval_propagator(e5, p1 + l) * eval_propagator(e6, p2 + p3 - l))

    quad = quad or QuadratureSpec.default(1)
    centers = (0j, p2, -p1, p2 + p3)
    est = integrate_c2(integrand, 1, replace(quad, singularity_centers=centers))
    scale = const * abs(p) ** (N - 1)
    for u, q in legs:
        scale *= eval_propagator(u, q)
    est.value = complex(est.value * scale)
    est.err *= abs(scale)
    return est


# ---------------------------------------------------------------------------
# Position-space eigenfunction (A system), N <= 2
# ---------------------------------------------------------------------------

def phi_position_eval(spec: EigenfunctionSpec, zs,
                      quad: QuadratureSpec | None = None) -> IntegralEstimate:
    """Position-space A-system eigenfunction at concrete points, N <= 2."""
    if spec.kind != "A":
        raise ValueError("position evaluation is defined for the A system")
    chain, xs = spec.chain, spec.separated
    N = chain.N
    g = build_gamma(chain, "A")
    if len(zs) != N:
        raise ValueError("need one position per site")
    norm = math.pi ** (-N * N / 2) * gamma_product(varpi_factors(xs, g))
    if N == 1:
        val = norm * eval_propagator(g_minus_ix(g[0], xs[0]), zs[0])
        return IntegralEstimate(complex(val), 0.0, 0, True)
    if N != 2:
        raise ValueError("direct quadrature supports N <= 2")
    z1, z2 = (complex(z) for z in zs)
    rg = rho_map(g)
    a1 = g_minus_ix(g[0], xs[0])
    a2 = g_plus_ix(g[1], xs[0])
    a3 = g_minus_ix(g[2], xs[0])
    b1 = g_minus_ix(rg[0], xs[1])

    def integrand(w):
        return (eval_propagator(a1, z1 - w) * eval_propagator(a2, z2 - w)
                * eval_propagator(b1, w))

    quad = quad or QuadratureSpec.default(1)
    est = integrate_c2(integrand, 1,
                       replace(quad, singularity_centers=(z1, z2, 0j)))
    scale = norm * eval_propagator(a3, z2)
    est.value = complex(est.value * scale)
    est.err *= abs(scale)
    return est


# ---------------------------------------------------------------------------
# Closed-form scalar products
# ---------------------------------------------------------------------------

def _sign_from_m_sum(msum: int) -> int:
    return -1 if msum % 2 else 1


def bb_sign(g: GammaVector) -> int:
    """Overall sign of the B-B pairing: +1 for odd N, printed sum otherwise."""
    N = (len(g) + 2) // 2
    if N % 2 == 1:
        return 1
    ref = _reflect_iter(g[N - 1], N - 3).m
    total = 0
    for k in range(1, N - 2):
        total += _reflect_iter(g[2 * N - 2 - k - 1], k - 1).m - ref
    return _sign_from_m_sum(total)


def _phi_list(g: GammaVector, x: SeparatedPoint, variant: str):
    """Factor list of the per-point denominator of the B-B pairing.

    ``variant``: 'plain' is ``phi_N(x)``, 'bar' is the slot-swapped function
    of ``xbar``, 'conj'/'barconj' their complex conjugates.  The printed list
    runs over ``G[(reflect^k gamma_{2N-3-k}) - i x]`` for ``k = 0..N-3``
    (empty at N=2, fixed by the reduction oracle).
    """
    N = (len(g) + 2) // 2
    out = []
    for k in range(N - 2):
        base = _reflect_iter(g[2 * N - 3 - k - 1], k)
        if variant == "plain":
            u = g_minus_ix(base, x)
        elif variant == "bar":
            u = bar_g_minus_ix(base, x)
        elif variant == "conj":
            u = exponent_conj(g_minus_ix(base, x))
        elif variant == "barconj":
            u = exponent_conj(bar_g_minus_ix(base, x))
        else:
            raise ValueError(variant)
        out.append(u)
    return out


def _cross_pair(y: SeparatedPoint, x: SeparatedPoint) -> FieldExponent:
    """Pair ``( i(y* - xbar), i(ybar* - x) )``."""
    return make_exponent(1j * (y.x.conjugate() - x.xbar),
                         1j * (y.xbar.conjugate() - x.x))


def _cross_pair_swapped(y: SeparatedPoint, x: SeparatedPoint) -> FieldExponent:
    """Pair ``( i(ybar* - x), i(y* - xbar) )``."""
    return make_exponent(1j * (y.xbar.conjugate() - x.x),
                         1j * (y.x.conjugate() - x.xbar))


def scalar_bb_closed(x, y, g: GammaVector, eps: float, eps_prime: float) -> ClosedFormFactor:
    """Closed form of the regularized B-B pairing density.

    Both printed equivalent forms are assembled; their values must agree to
    1e-10 (slot-swap consistency).  The returned factor carries the first
    form's Gamma list together with the overall sign.
    """
    if len(x) != len(y):
        raise ValueError("need equally many separated points on both sides")
    N = len(x) + 1
    if len(g) != 2 * N - 2:
        raise ValueError("index vector length does not match the chain length")
    if eps + eps_prime <= 0:
        raise ValueError("the pairing needs eps + eps' > 0")
    ee = eps + eps_prime
    X = sum(pt.x for pt in x)
    Xb = sum(pt.xbar for pt in x)
    Ysc = sum(pt.x.conjugate() for pt in y)
    Ybsc = sum(pt.xbar.conjugate() for pt in y)

    common = []
    for yk in y:
        for xj in x:
            common.append((_cross_pair(yk, xj), +1))
    for xk in x:
        for u in _phi_list(g, xk, "bar"):
            common.append((u, -1))
    for yk in y:
        for u in _phi_list(g, yk, "conj"):
            common.append((u, -1))

    form1 = list(common)
    form1.append((make_exponent(ee + 1j * (X - Ybsc), ee + 1j * (Xb - Ysc)), +1))
    form1.append((make_exponent(ee, ee), -1))

    form2 = []
    for yk in y:
        for xj in x:
            form2.append((_cross_pair_swapped(yk, xj), +1))
    for xk in x:
        for u in _phi_list(g, xk, "plain"):
            form2.append((u, -1))
    for yk in y:
        for u in _phi_list(g, yk, "barconj"):
            form2.append((u, -1))
    form2.append((make_exponent(ee + 1j * (Xb - Ysc), ee + 1j * (X - Ybsc)), +1))
    form2.append((make_exponent(ee, ee), -1))

    sgn = bb_sign(g)
    v1 = sgn * gamma_product(form1)
    v2 = sgn * gamma_product(form2)
    if abs(v1 - v2) > 1e-10 * max(1.0, abs(v1)):
        raise PoleEncountered(f"printed forms disagree: {v1} vs {v2}")
    return ClosedFormFactor(sign=sgn, gamma_factors=tuple(form1)).canonical()


def ab_sign(g: GammaVector) -> int:
    """Sign of the A-B pairing: +1 for odd N, printed sum otherwise."""
    N = (len(g) + 1) // 2
    if N % 2 == 1:
        return 1
    ref = _reflect_iter(g[N - 1], N - 1).m
    total = 0
    for k in range(1, N + 1):
        total += _reflect_iter(g[2 * N - k - 1], k - 1).m - ref
    return _sign_from_m_sum(total)


def _principal_power(base: complex, expo: complex) -> complex:
    """Principal-branch power with rejection close to the cut."""
    base = complex(base)
    if base == 0:
        raise BranchCutHit("zero base in a principal power")
    if abs(abs(math.atan2(base.imag, base.real)) - math.pi) < 1e-6:
        raise BranchCutHit(f"base {base} within 1e-6 of the branch cut")
    return complex(base) ** complex(expo)


def scalar_ab_closed(x, y, g: GammaVector, p: complex) -> ClosedFormFactor:
    """Closed form of the A-B pairing at concrete total momentum ``p``.

    ``x`` (length N) are the A-side points, ``y`` (length N-1) the B-side
    points; absolute convergence requires ``Im(nu_k + mu_j) > 0`` pairwise.
    Momentum and branch-phase factors are folded into the scalar slot.
    """
    N = len(x)
    if len(y) != N - 1:
        raise ValueError("B side must carry one point fewer than the A side")
    if len(g) != 2 * N - 1:
        raise ValueError("index vector length does not match the chain length")
    for xk in x:
        for yj in y:
            if (xk.nu.imag + yj.nu.imag) <= 0:
                raise ConvergenceDomainViolated(
                    f"Im(nu_x + nu_y) <= 0 for {xk} and {yj}")
    X = sum(pt.x for pt in x)
    Xb = sum(pt.xbar for pt in x)
    G = sum(_reflect_iter(g[m - 1], m).a for m in range(N, 2 * N))
    Gb = sum(_reflect_iter(g[m - 1], m).abar for m in range(N, 2 * N))

    factors = []
    for yj in y:
        for xk in x:
            factors.append((_cross_pair_swapped(yj, xk), +1))
    for xj in x:
        for k in range(1, N + 1):
            base = _reflect_iter(g[2 * N - k - 1], k - 1)
            factors.append((g_minus_ix(base, xj), -1))
    for yj in y:
        for k in range(1, N + 1):
            base = _reflect_iter(g[2 * N - k - 1], k - 1)
            factors.append((exponent_conj(bar_g_minus_ix(base, yj)), -1))

    scalar = abs(p) ** (N - 1)
    scalar *= _principal_power(-1j * p, -(G + 1j * X))
    scalar *= _principal_power(1j * p.conjugate(), -(Gb + 1j * Xb))
    return ClosedFormFactor(sign=ab_sign(g), gamma_factors=tuple(factors),
                            scalar=scalar).canonical()


def mixed_sign(g: GammaVector) -> int:
    """Sign of the mixed pairing: +1 for odd N, printed sum otherwise."""
    N = len(g) // 2
    if N % 2 == 1:
        return 1
    ref = _reflect_iter(g[N - 1], N - 1).m
    total = 0
    for k in range(1, N):
        total += _reflect_iter(g[2 * N - k - 1], k - 1).m - ref
    return _sign_from_m_sum(total)


def scalar_mixed_closed(y, x, g: GammaVector, q1: complex, q2: complex) -> ClosedFormFactor:
    """Closed form of the mixed pairing (length N+1 against N x 1).

    ``x`` has length N (separated points of the longer chain), ``y`` length
    N-1; ``g`` is the longer chain's index vector restricted to its first
    ``2N`` entries.  Carries the symbolic conservation factor
    ``d2(p - q1 - q2)`` and evaluates everything off the delta; principal
    powers within 1e-6 of their cuts raise :class:`BranchCutHit`.
    """
    N = len(x)
    if len(y) != N - 1:
        raise ValueError("shorter chain must carry one point fewer")
    if len(g) != 2 * N:
        raise ValueError("index vector must have 2N entries")
    q1, q2 = complex(q1), complex(q2)
    p = q1 + q2
    X = sum(pt.x for pt in x)
    Xb = sum(pt.xbar for pt in x)
    Ysc = sum(pt.x.conjugate() for pt in y)
    Ybsc = sum(pt.xbar.conjugate() for pt in y)
    G_N = sum(_reflect_iter(g[m - 1], m).a for m in range(N, 2 * N))
    Gb_N = sum(_reflect_iter(g[m - 1], m).abar for m in range(N, 2 * N))
    G_N1 = sum(_reflect_iter(g[m - 1], m).a for m in range(N + 1, 2 * N))
    Gb_N1 = sum(_reflect_iter(g[m - 1], m).abar for m in range(N + 1, 2 * N))
    g2N = exponent_reflect(g[2 * N - 1])

    factors = []
    for yk in y:
        for xj in x:
            factors.append((_cross_pair_swapped(yk, xj), +1))
    for xj in x:
        for k in range(1, N):
            base = _reflect_iter(g[2 * N - k - 1], k - 1)
            factors.append((g_minus_ix(base, xj), -1))
    for yj in y:
        for k in range(1, N + 1):
            base = _reflect_iter(g[2 * N - k - 1], k - 1)
            factors.append((exponent_conj(bar_g_minus_ix(base, yj)), -1))

    scalar = abs(p) ** N * abs(q1) ** (N - 1)
    scalar *= _principal_power(1j * p, -Gb_N1.conjugate())
    scalar *= _principal_power(-1j * p.conjugate(), -G_N1.conjugate())
    scalar *= _principal_power(1j * q2, -g2N.a)
    scalar *= _principal_power(-1j * q2.conjugate(), -g2N.abar)
    scalar *= _principal_power(-1j * q1, -G_N)
    scalar *= _principal_power(1j * q1.conjugate(), -Gb_N)
    scalar *= _principal_power(1 + q1 / q2, 1j * Ybsc)
    scalar *= _principal_power(1 + (q1 / q2).conjugate(), 1j * Ysc)
    scalar *= _principal_power(-q2 / q1, 1j * X)
    scalar *= _principal_power((-q2 / q1).conjugate(), 1j * Xb)
    return ClosedFormFactor(pi_power=1, sign=mixed_sign(g),
                            gamma_factors=tuple(factors), scalar=scalar,
                            deltas=("p-q1-q2",)).canonical()


# ---------------------------------------------------------------------------
# Separated-variable measure and normalization constants
# ---------------------------------------------------------------------------

def measure_mu(xs) -> float:
    """``prod_{k<j} (nu_kj^2 + n_kj^2/4)`` on real points."""
    out = 1.0
    for k in range(len(xs)):
        if abs(xs[k].nu.imag) > _TOL:
            raise ValueError("measure is defined on real points")
    for k in range(len(xs)):
        for j in range(k + 1, len(xs)):
            dnu = (xs[k].nu - xs[j].nu).real
            dn = (xs[k].n2 - xs[j].n2) / 2
            out *= dnu * dnu + dn * dn / 4
    return out


def sov_constants(N: int, kind: str) -> float:
    """Normalization constants of the separated-variable measures."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if kind == "B":
        return 2.0 / ((2 * math.pi) ** (N + 1) * math.factorial(N))
    if kind == "A":
        return 1.0 / ((2 * math.pi) ** N * math.factorial(N))
    raise ValueError("kind must be 'B' or 'A'")


# ---------------------------------------------------------------------------
# Eigen-relation checks (analytic differentiation under the integral)
# ---------------------------------------------------------------------------

def _psi2_position_atom(chain: ChainSpec, x: SeparatedPoint, p: complex,
                        zs, d1: int, d2: int, quad: QuadratureSpec):
    """Quadrature of the two-propagator layer integral with optional
    holomorphic derivatives in z1 (d1 times) and z2 (d2 times)."""
    g = build_gamma(replace(chain, epsilon=0.0), "B")
    a1 = g_minus_ix(g[0], x)
    a2 = g_plus_ix(g[1], x)
    z1, z2 = (complex(z) for z in zs)

    def integrand(w):
        out = (eval_propagator(a1, z1 - w) * eval_propagator(a2, z2 - w)
               * np.exp(2j * np.real(p * w)))
        for j in range(d1):
            out = out * (-(a1.a + j) / (z1 - w))
        for j in range(d2):
            out = out * (-(a2.a + j) / (z2 - w))
        return out

    return integrate_c2(
        integrand, 1,
        replace(quad, singularity_centers=(z1, z2), wave_momentum=p))


def eigen_translation_check(spec: EigenfunctionSpec, zs,
                            quad: QuadratureSpec | None = None) -> float:
    """Relative residual of the total-shift relation on the B eigenfunction.

    Differentiates the integrand analytically under the integral sign; the
    ratio is independent of the overall normalization.  Exact zero at N=1.
    """
    chain = spec.chain
    p = complex(spec.momentum)
    if chain.N == 1:
        return 0.0
    if chain.N != 2:
        raise ValueError("translation check runs in the one-integral regime")
    quad = quad or QuadratureSpec.default(1)
    x = spec.separated[0]
    psi = _psi2_position_atom(chain, x, p, zs, 0, 0, quad)
    dz1 = _psi2_position_atom(chain, x, p, zs, 1, 0, quad)
    dz2 = _psi2_position_atom(chain, x, p, zs, 0, 1, quad)
    lhs = -1j * (dz1.value + dz2.value)
    rhs = p * psi.value
    return abs(lhs - rhs) / abs(rhs)


def eigen_b_check(spec: EigenfunctionSpec, u: complex, zs,
                  quad: QuadratureSpec | None = None) -> float:
    """Residual of the degree-1 spectral relation at N=2.

    Assembles ``(u + xi1 + i s1)(-i dz2) + (u + xi2 - i s2)(-i dz1)
    + (z1 - z2) dz1 dz2`` against ``p (u - x1)`` times the function, using
    analytic derivatives under the integral.  The residual is normalized by
    ``|p| (1 + |u - x1|) |Psi|`` so the annihilation point is meaningful.
    """
    chain = spec.chain
    if chain.N != 2:
        raise ValueError("spectral check runs at N=2")
    quad = quad or QuadratureSpec.default(1)
    p = complex(spec.momentum)
    x = spec.separated[0]
    z1, z2 = (complex(z) for z in zs)
    s1, s2 = chain.spin(0), chain.spin(1)
    xi1, xi2 = chain.impurities
    psi = _psi2_position_atom(chain, x, p, zs, 0, 0, quad).value
    d1 = _psi2_position_atom(chain, x, p, zs, 1, 0, quad).value
    d2 = _psi2_position_atom(chain, x, p, zs, 0, 1, quad).value
    d12 = _psi2_position_atom(chain, x, p, zs, 1, 1, quad).value
    lhs = ((u + xi1 + 1j * s1.a) * (-1j * d2)
           + (u + xi2 - 1j * s2.a) * (-1j * d1)
           + (z1 - z2) * d12)
    rhs = p * (u - x.x) * psi
    return abs(lhs - rhs) / (abs(p) * (1 + abs(u - x.x)) * abs(psi))


# ---------------------------------------------------------------------------
# Glued momentum diagrams of the B-B pairing (for the rewrite engine)
# ---------------------------------------------------------------------------

def _dagger_edges(edges):
    return [(a, b, exponent_dagger(u)) for a, b, u in edges]


def bb_product_diagram(chain: ChainSpec, xs, ys, eps: float, eps_prime: float) -> Diagram:
    """Momentum-space glued diagram of the regularized B-B pairing, N in {2,3}.

    External vertices are the momentum-plane origin and the symbolic total
    momentum ``p``; the prefactor carries all derived constants, so reducing
    the diagram yields the full pairing density (the ``p`` powers cancel).
    """
    N = chain.N
    if N not in (2, 3):
        raise ValueError("glued diagrams are built for N in {2, 3}")
    g0 = build_gamma(replace(chain, epsilon=0.0), "B")

    def side(points, regulator):
        """(edges on symbols O/P/m*/L, constant factors) for one side."""
        if N == 2:
            mus = [g_minus_ix(g0[0], points[0]), g_plus_ix(g0[1], points[0])]
            edges = [("O", "m1", exponent_reflect(mus[0])),
                     ("m1", "P", exponent_reflect(mus[1]) - regulator)]
        else:
            rg = rho_map(g0)
            mus = [g_minus_ix(g0[0], points[0]), g_plus_ix(g0[1], points[0]),
                   g_minus_ix(g0[2], points[0]), g_plus_ix(g0[3], points[0]),
                   g_minus_ix(rg[0], points[1]), g_plus_ix(rg[1], points[1])]
            edges = [("O", "m1", exponent_reflect(mus[0])),
                     ("m1", "L", exponent_reflect(mus[1])),
                     ("L", "m2", exponent_reflect(mus[2])),
                     ("m2", "P", exponent_reflect(mus[3]) - regulator),
                     ("O", "L", exponent_reflect(mus[4])),
                     ("L", "P", exponent_reflect(mus[5]))]
        factors = varpi_factors(points, g0) + [(mu, -1) for mu in mus]
        mtot = sum(mu.m for mu in mus)
        return edges, factors, mtot

    bra_edges, bra_factors, bra_m = side(xs, eps)
    ket_edges, ket_factors, ket_m = side(ys, eps_prime)
    # rename only the ket loop vertex; the partial-sum vertices are shared
    renamed = []
    for a, b, u in _dagger_edges(ket_edges):
        a2 = "Lp" if a == "L" else a
        b2 = "Lp" if b == "L" else b
        renamed.append((a2, b2, u))

    pre = ClosedFormFactor(pi_power=-1)
    pre = pre.mul_momentum("p", FieldExponent(0, -(N - 1) + eps + eps_prime))
    pre = pre.mul_phase((-bra_m) % 4).mul_phase(ket_m % 4)
    pre = pre.mul_pi(2 * N - N * N)
    for u, mult in bra_factors:
        pre = pre.mul_gamma(u, mult)
    for u, mult in ket_factors:
        pre = pre.mul_gamma(exponent_conj(u), mult)

    internals = ("m1",) if N == 2 else ("L", "Lp", "m1", "m2")
    return Diagram(
        externals=(("O", "pos", 0j), ("P", "mom", "p")),
        internals=internals,
        edges=tuple(bra_edges + renamed),
        prefactor=pre,
    )


def bb_product_quadrature(chain: ChainSpec, xs, ys, eps: float, eps_prime: float,
                          p: complex, quad: QuadratureSpec | None = None) -> IntegralEstimate:
    """Direct momentum quadrature of the N=2 pairing density (oracle)."""
    if chain.N != 2:
        raise ValueError("direct pairing quadrature is implemented at N=2")
    p = complex(p)
    bra_chain = replace(chain, epsilon=eps)
    ket_chain = replace(chain, epsilon=eps_prime)

    def integrand(p1):
        bra = psi_momentum_value(bra_chain, xs, [p1, p - p1])
        ket = psi_momentum_value(ket_chain, ys, [p1, p - p1])
        return bra * np.conj(ket)

    quad = quad or QuadratureSpec.default(1)
    est = integrate_c2(integrand, 1,
                       replace(quad, singularity_centers=(0j, p)))
    scale = abs(p) ** (-2 * (eps + eps_prime)) / math.pi
    est.value = complex(est.value * scale)
    est.err *= abs(scale)
    return est


# ---------------------------------------------------------------------------
# Chain specification file format
# ---------------------------------------------------------------------------

def chain_to_json(chain: ChainSpec) -> dict:
    return {
        "N": chain.N,
        "spins": [{"n2": n2, "rho": rho} for n2, rho in chain.spins],
        "impurities": [{"re": xi.real, "im": xi.imag}
                       for xi in chain.impurities],
        "epsilon": chain.epsilon,
    }


def chain_from_json(obj: dict) -> ChainSpec:
    return ChainSpec(
        N=int(obj["N"]),
        spins=tuple((int(s["n2"]), float(s["rho"])) for s in obj["spins"]),
        impurities=tuple(complex(i["re"], i["im"]) for i in obj["impurities"]),
        epsilon=float(obj.get("epsilon", 0.0)),
    )
