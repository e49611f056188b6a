"""Propagator-graph intermediate representation and the rewrite engine.

A :class:`Diagram` is a finite directed multigraph.  An edge ``(u, v, e)``
stands for the factor ``D_e(z_v - z_u)`` (arrow drawn from ``u`` to ``v``);
internal vertices are integrated over the plane, external vertices are pinned
to a concrete plane point or to a symbolic momentum.  A plane-wave attachment
at vertex ``v`` with symbol ``q`` and coefficient ``c`` stands for
``exp(i c (q z_v + conj))``.

Four integral identities drive reduction:

* chain        -- degree-2 vertex on a directed path,
* star-triangle -- degree-3 vertex whose indices sum to 2 in both slots,
* plane-wave transform -- degree-1 vertex carrying a wave,
* exchange     -- degree-3 vertex with *any* indices; the vertex survives but
  the index triple ``(alpha, mu, beta)`` is traded for
  ``(alpha+mu+beta-1, 1-beta, 1-mu)`` while a compensating line with index
  ``mu+beta-1`` appears between the two spectator endpoints.  The constant is
  the Gamma-factor ratio fixed, together with the star-triangle layout, by a
  build-time numeric oracle (tests exercise >= 20 random instances per rule)
  and by consistency with the layer-operator reordering coefficient.

``reduce_diagram`` runs a deterministic best-first search over these moves
(fewest internal vertices first, then fewest edges, then lexicographically
smallest serialization), so any two admissible strategies must land on the
same canonical closed form; confluence is tested, not assumed.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cfield import (FieldExponent, exponent_bar, exponent_reflect,
                     gamma_product, make_exponent)
from .errors import (DegenerateChain, IndexSumMismatch, NoPlaneWave, NotAChain,
                     StuckDiagram, UniquenessViolated)
from .plane import IntegralEstimate, QuadratureSpec, eval_propagator, integrate_c2

_ZTOL = 1e-9


def _fold_phase(sign: int, quarter_turns: int):
    q = quarter_turns % 4
    if q >= 2:
        sign, q = -sign, q - 2
    return sign, q


@dataclass(frozen=True)
class ClosedFormFactor:
    """Canonical product of pi powers, phases, Gamma factors, momentum powers.

    ``gamma_factors`` maps exponent pairs to integer multiplicities (positive
    for numerator Gammas, negative for the reciprocal a-factors).  A momentum
    power ``(s, e)`` stands for ``D_e(p_s)``.  ``scalar`` carries residual
    constants that are not pi/i/Gamma shaped (principal-branch phases of the
    closed scalar-product formulas); graph reduction never populates it.
    ``deltas`` records symbolic momentum-conservation factors.
    """

    pi_power: int = 0
    phase_quarter_turns: int = 0
    sign: int = 1
    gamma_factors: tuple = ()
    momentum_powers: tuple = ()
    scalar: complex = 1.0 + 0j
    deltas: tuple = ()

    # -- multiplicative builders -------------------------------------------
    def mul_pi(self, k):
        return replace(self, pi_power=self.pi_power + k)

    def mul_phase(self, quarter_turns):
        s, q = _fold_phase(self.sign, self.phase_quarter_turns + quarter_turns)
        return replace(self, sign=s, phase_quarter_turns=q)

    def mul_sign(self, s):
        return replace(self, sign=self.sign * (1 if s >= 0 else -1))

    def mul_gamma(self, u: FieldExponent, mult: int = 1):
        return replace(self, gamma_factors=self.gamma_factors + ((u, mult),))

    def mul_momentum(self, symbol: str, u: FieldExponent):
        return replace(self, momentum_powers=self.momentum_powers + ((symbol, u),))

    def mul_scalar(self, c):
        return replace(self, scalar=self.scalar * complex(c))

    def times(self, other: "ClosedFormFactor"):
        s, q = _fold_phase(self.sign * other.sign,
                           self.phase_quarter_turns + other.phase_quarter_turns)
        return ClosedFormFactor(
            self.pi_power + other.pi_power, q, s,
            self.gamma_factors + other.gamma_factors,
            self.momentum_powers + other.momentum_powers,
            self.scalar * other.scalar,
            self.deltas + other.deltas,
        )

    # -- canonical form -----------------------------------------------------
    def canonical(self) -> "ClosedFormFactor":
        sign, q = _fold_phase(self.sign, self.phase_quarter_turns)
        merged: dict = {}
        order: dict = {}
        for u, mult in self.gamma_factors:
            if u.m < 0:
                # G[(a, abar)] = (-1)^m G[(abar, a)]; keep the m >= 0 slot.
                sign *= (-1) ** ((u.m * mult) % 2)
                u = exponent_bar(u)
            k = u.key()
            if k in merged:
                merged[k] = (merged[k][0], merged[k][1] + mult)
            else:
                merged[k] = (u, mult)
                order[k] = len(order)
        gammas = tuple(sorted(
            ((u, m) for u, m in merged.values() if m != 0),
            key=lambda t: t[0].key()))
        moms: dict = {}
        for s, u in self.momentum_powers:
            if s in moms:
                moms[s] = moms[s] + u
            else:
                moms[s] = u
        momentum = tuple(sorted(
            ((s, u) for s, u in moms.items() if not u.is_zero()),
            key=lambda t: t[0]))
        return ClosedFormFactor(self.pi_power, q, sign, gammas, momentum,
                                self.scalar, tuple(sorted(self.deltas)))

    def same_as(self, other: "ClosedFormFactor", tol: float = 1e-9) -> bool:
        a, b = self.canonical(), other.canonical()
        if (a.pi_power, a.phase_quarter_turns, a.sign, a.deltas) != \
           (b.pi_power, b.phase_quarter_turns, b.sign, b.deltas):
            return False
        if abs(a.scalar - b.scalar) > tol * max(1.0, abs(a.scalar)):
            return False
        ka = [(u.key(), m) for u, m in a.gamma_factors]
        kb = [(u.key(), m) for u, m in b.gamma_factors]
        ma = [(s, u.key()) for s, u in a.momentum_powers]
        mb = [(s, u.key()) for s, u in b.momentum_powers]
        return ka == kb and ma == mb

    def value(self, momenta: dict | None = None) -> complex:
        """Numeric value; momentum symbols resolved through ``momenta``."""
        c = self.canonical()
        out = (math.pi ** c.pi_power) * c.sign * (1j ** c.phase_quarter_turns)
        out *= c.scalar
        out *= gamma_product(c.gamma_factors)
        for s, u in c.momentum_powers:
            if momenta is None or s not in momenta:
                raise KeyError(f"momentum symbol {s!r} unbound")
            out *= eval_propagator(u, momenta[s])
        return complex(out)


@dataclass(frozen=True)
class Diagram:
    """externals: tuple of (label, kind, value); kind 'pos' or 'mom'."""

    externals: tuple
    internals: tuple
    edges: tuple            # (src, dst, FieldExponent)
    prefactor: ClosedFormFactor = ClosedFormFactor()
    waves: tuple = ()       # (vertex, symbol, coeff)

    def is_internal(self, v):
        return v in self.internals

    def external_value(self, label):
        for lab, kind, val in self.externals:
            if lab == label:
                return kind, val
        raise KeyError(label)

    def prop_edges_at(self, v):
        return [i for i, (a, b, _) in enumerate(self.edges) if v in (a, b)]

    def waves_at(self, v):
        return [i for i, (a, _, _) in enumerate(self.waves) if a == v]

    def degree(self, v):
        return len(self.prop_edges_at(v))


class RuleKind:
    CHAIN = "Chain"
    STAR_TRIANGLE = "StarTriangle"
    FOURIER = "Fourier"
    EXCHANGE = "Exchange"


def find_free_vertices(d: Diagram):
    """Internal vertices with exactly two incident propagators."""
    return [v for v in d.internals if d.degree(v) == 2]


def _flip(edge):
    a, b, u = edge
    return (b, a, u), (-1) ** (u.m % 2)


def merge_parallel(d: Diagram) -> Diagram:
    """Combine equal-endpoint edges, drop unit edges, canonical orientation."""
    acc: dict = {}
    sign = 1
    for a, b, u in d.edges:
        if (b, a) in acc and (a, b) not in acc:
            sign *= (-1) ** (u.m % 2)
            a, b, u = b, a, u
        key = (a, b)
        acc[key] = acc[key] + u if key in acc else u
    edges = tuple((a, b, u) for (a, b), u in acc.items() if not u.is_zero())
    return replace(d, edges=edges, prefactor=d.prefactor.mul_sign(sign))


def absorb_external_edges(d: Diagram) -> Diagram:
    """Move edges between pinned vertices into the prefactor where possible.

    An edge between the zero position and a momentum symbol becomes a
    momentum power; an edge between two concrete positions becomes a scalar.
    Unrepresentable edges are kept.
    """
    pre = d.prefactor
    kept = []
    for a, b, u in d.edges:
        if d.is_internal(a) or d.is_internal(b):
            kept.append((a, b, u))
            continue
        ka, va = d.external_value(a)
        kb, vb = d.external_value(b)
        if ka == "pos" and kb == "pos":
            pre = pre.mul_scalar(eval_propagator(u, complex(vb) - complex(va)))
        elif ka == "pos" and abs(complex(va)) < _ZTOL and kb == "mom":
            pre = pre.mul_momentum(vb, u)
        elif kb == "pos" and abs(complex(vb)) < _ZTOL and ka == "mom":
            # D_u(0 - p) = (-1)^m D_u(p)
            pre = pre.mul_sign((-1) ** (u.m % 2)).mul_momentum(va, u)
        else:
            kept.append((a, b, u))
    waves = []
    for v, q, coeff in d.waves:
        if not d.is_internal(v):
            kv, vv = d.external_value(v)
            if kv == "pos" and abs(complex(vv)) < _ZTOL:
                continue  # exp(0) = 1
        waves.append((v, q, coeff))
    return replace(d, edges=tuple(kept), prefactor=pre, waves=tuple(waves))


def normalize(d: Diagram) -> Diagram:
    return absorb_external_edges(merge_parallel(d))


def _remove_vertex(d: Diagram, v):
    return replace(d, internals=tuple(x for x in d.internals if x != v))


def apply_chain(d: Diagram, v) -> Diagram:
    """Integrate a degree-2 vertex on a directed path through ``v``.

    ``int d2w D_alpha(x - w) D_beta(w - y) = pi a(alpha) a(beta) / a(gamma)
    D_gamma(x - y)`` with ``gamma = alpha + beta - 1``.
    """
    if not d.is_internal(v):
        raise NotAChain(f"{v!r} is not an internal vertex")
    if d.waves_at(v):
        raise NotAChain(f"{v!r} carries a plane wave; use the Fourier rule")
    eidx = d.prop_edges_at(v)
    if len(eidx) != 2:
        raise NotAChain(f"{v!r} has degree {len(eidx)}, need 2")
    e1, e2 = d.edges[eidx[0]], d.edges[eidx[1]]
    out = [e for e in (e1, e2) if e[0] == v]
    inc = [e for e in (e1, e2) if e[1] == v]
    if len(out) != 1 or len(inc) != 1:
        raise NotAChain("need one incoming and one outgoing propagator")
    (_, y, alpha) = out[0]
    (x, _, beta) = inc[0]
    if x == y:
        raise NotAChain("chain endpoints coincide")
    gamma = alpha + beta - 1
    if abs(gamma.a) < _ZTOL or abs(gamma.abar) < _ZTOL:
        raise DegenerateChain(f"contact exponent {gamma}")
    edges = tuple(e for i, e in enumerate(d.edges) if i not in eidx)
    edges += ((x, y, gamma),)
    pre = (d.prefactor.mul_pi(1)
           .mul_gamma(alpha, -1).mul_gamma(beta, -1).mul_gamma(gamma, +1))
    return _remove_vertex(replace(d, edges=edges, prefactor=pre), v)


def apply_star_triangle(d: Diagram, v) -> Diagram:
    """Replace a unique degree-3 vertex by the complementary triangle.

    With inward legs ``(z1, a), (z2, b), (z3, c)`` and ``a + b + c = 2`` in
    both slots, the vertex integral equals ``pi a(a) a(b) a(c)`` times the
    cyclic triangle ``D_{1-c}(z1 - z2) D_{1-a}(z2 - z3) D_{1-b}(z3 - z1)``.
    """
    if not d.is_internal(v) or d.waves_at(v):
        raise UniquenessViolated(f"{v!r} is not a bare internal vertex")
    eidx = d.prop_edges_at(v)
    if len(eidx) != 3:
        raise UniquenessViolated(f"{v!r} has degree {len(eidx)}, need 3")
    legs = []
    sign = 1
    for i in eidx:
        e = d.edges[i]
        if e[1] != v:           # orient inward: z -> v
            e, s = _flip(e)
            sign *= s
        legs.append((e[0], e[2]))
    if len({z for z, _ in legs}) != 3:
        raise UniquenessViolated("star requires three distinct neighbours")
    legs.sort(key=lambda t: t[0])
    (z1, a), (z2, b), (z3, c) = legs
    total = a + b + c
    if total.m != 0 or abs(total.w - 2) > _ZTOL:
        raise UniquenessViolated(f"leg indices sum to {total}, need 2")
    edges = tuple(e for i, e in enumerate(d.edges) if i not in eidx)
    edges += ((z2, z1, exponent_reflect(c)),
              (z3, z2, exponent_reflect(a)),
              (z1, z3, exponent_reflect(b)))
    pre = (d.prefactor.mul_pi(1).mul_sign(sign)
           .mul_gamma(a, -1).mul_gamma(b, -1).mul_gamma(c, -1))
    return _remove_vertex(replace(d, edges=edges, prefactor=pre), v)


def apply_fourier(d: Diagram, v) -> Diagram:
    """Integrate a wave-carrying vertex with a single propagator.

    ``int d2w e^{i(qw+conj)} D_alpha(w - x) = e^{i(qx+conj)} pi i^m a(alpha)
    D_{1-alpha}(q)``; the momentum power lands in the prefactor and the wave
    migrates to the other endpoint.
    """
    if not d.is_internal(v):
        raise NoPlaneWave(f"{v!r} is not internal")
    widx = d.waves_at(v)
    if not widx:
        raise NoPlaneWave(f"no plane wave attached at {v!r}")
    if len(widx) > 1:
        raise StuckDiagram("multiple plane waves on one vertex", d)
    eidx = d.prop_edges_at(v)
    if len(eidx) != 1:
        raise NoPlaneWave(f"{v!r} must carry exactly one propagator")
    (_, q, coeff) = d.waves[widx[0]]
    e = d.edges[eidx[0]]
    sign = 1
    if e[1] != v:               # need D_alpha(z_v - z_x), i.e. edge x -> v
        e, sign = _flip(e)
    (x, _, alpha) = e
    # with wave exp(i c(q z_v + conj)): substitute u = z_v - z_x:
    #   e^{i c q z_x} * pi i^m a(alpha) D_{1-alpha}(c q)
    refl = exponent_reflect(alpha)
    pre = (d.prefactor.mul_pi(1).mul_phase(alpha.m).mul_sign(sign)
           .mul_gamma(alpha, -1).mul_momentum(q, refl))
    if coeff < 0:
        pre = pre.mul_sign((-1) ** (refl.m % 2))
    edges = tuple(ed for i, ed in enumerate(d.edges) if i not in eidx)
    waves = tuple(wv for i, wv in enumerate(d.waves) if i not in widx)
    waves += ((x, q, coeff),)
    return _remove_vertex(replace(d, edges=edges, prefactor=pre, waves=waves), v)


def _exchange_core(d: Diagram, z1, z2, w, z3):
    """Orient the three legs at ``w`` as (alpha: w->z1, mu: w->z2, beta: z3->w)."""
    if not d.is_internal(w) or d.waves_at(w):
        raise IndexSumMismatch(f"{w!r} is not a bare internal vertex")
    if len({z1, z2, z3}) != 3 or w in (z1, z2, z3):
        raise IndexSumMismatch("exchange pattern needs four distinct vertices")
    eidx = d.prop_edges_at(w)
    if len(eidx) != 3:
        raise IndexSumMismatch(f"{w!r} has degree {len(eidx)}, need 3")
    sign = 1
    found = {}
    for i in eidx:
        e = d.edges[i]
        other = e[1] if e[0] == w else e[0]
        if other not in (z1, z2, z3) or other in found:
            raise IndexSumMismatch("legs do not match the requested pattern")
        want_out = other in (z1, z2)
        if want_out and e[0] != w:
            e, s = _flip(e)
            sign *= s
        elif not want_out and e[1] != w:
            e, s = _flip(e)
            sign *= s
        found[other] = e[2]
    return found[z1], found[z2], found[z3], sign, eidx


def apply_exchange(d: Diagram, quad, new_indices=None) -> Diagram:
    """Exchange move on the 4-vertex pattern ``quad = (z1, z2, w, z3)``.

    Local identity (alpha: w->z1, mu: w->z2, beta: z3->w):

        I(alpha, mu, beta) = G[alpha'] G[bar mu'] / (G[alpha] G[bar mu])
                             * D_{mu+beta-1}(z2 - z3) * I(alpha', mu', beta')

    with ``alpha' = alpha+mu+beta-1``, ``mu' = 1-beta``, ``beta' = 1-mu``; in
    particular ``alpha + beta = alpha' + beta'``.  The matched quad admits
    exactly this index trade (or the identity); anything else raises
    :class:`IndexSumMismatch`.
    """
    z1, z2, w, z3 = quad
    alpha, mu, beta, sign, eidx = _exchange_core(d, z1, z2, w, z3)
    alpha_p = alpha + mu + beta - 1
    mu_p = exponent_reflect(beta)
    beta_p = exponent_reflect(mu)
    if new_indices is not None:
        a_req, b_req = new_indices
        tot, tot_req = alpha + beta, a_req + b_req
        if tot.m != tot_req.m or abs(tot.w - tot_req.w) > _ZTOL:
            raise IndexSumMismatch("index sums differ between old and new pair")
        if a_req.m == alpha.m and abs(a_req.w - alpha.w) < _ZTOL \
           and b_req.m == beta.m and abs(b_req.w - beta.w) < _ZTOL:
            return d
        if not (a_req.m == alpha_p.m and abs(a_req.w - alpha_p.w) < _ZTOL
                and b_req.m == beta_p.m and abs(b_req.w - beta_p.w) < _ZTOL):
            raise IndexSumMismatch(
                "requested indices are not the admissible exchange of this quad")
    edges = tuple(e for i, e in enumerate(d.edges) if i not in eidx)
    edges += ((w, z1, alpha_p), (w, z2, mu_p), (z3, w, beta_p),
              (z3, z2, mu + beta - 1))
    pre = (d.prefactor.mul_sign(sign)
           .mul_gamma(alpha_p, +1).mul_gamma(exponent_bar(mu_p), +1)
           .mul_gamma(alpha, -1).mul_gamma(exponent_bar(mu), -1))
    return replace(d, edges=edges, prefactor=pre)


# ---------------------------------------------------------------------------
# Reduction search
# ---------------------------------------------------------------------------

def _serialize_state(d: Diagram) -> str:
    # Orientation-insensitive: an edge and its flip differ only by a sign
    # that the prefactor of the enumerated state already carries.
    ext = sorted((lab, kind, repr(val)) for lab, kind, val in d.externals)
    edges = sorted((min(a, b), max(a, b), u.key()) for a, b, u in d.edges)
    waves = sorted(d.waves)
    return json.dumps([ext, sorted(d.internals), edges, waves], default=repr)


def _candidate_moves(d: Diagram):
    moves = []
    for v in sorted(d.internals):
        deg = d.degree(v)
        nwaves = len(d.waves_at(v))
        if nwaves == 1 and deg == 1:
            moves.append(("fourier", (v,)))
        if nwaves:
            continue
        if deg == 2:
            eidx = d.prop_edges_at(v)
            e1, e2 = d.edges[eidx[0]], d.edges[eidx[1]]
            n_out = sum(1 for e in (e1, e2) if e[0] == v)
            if n_out == 1:
                moves.append(("chain", (v,)))
            else:
                # flip the lexicographically first edge, then chain
                moves.append(("flipchain", (v,)))
        elif deg == 3:
            eidx = d.prop_edges_at(v)
            nbrs = []
            for i in eidx:
                a, b, _ = d.edges[i]
                nbrs.append(b if a == v else a)
            if len(set(nbrs)) != 3:
                continue
            # flipping an edge keeps its exponent, so the uniqueness sum
            # is orientation-independent
            s = FieldExponent(0, 0)
            for i in eidx:
                s = s + d.edges[i][2]
            if s.m == 0 and abs(s.w - 2) < _ZTOL:
                moves.append(("star", (v,)))
            for z3 in sorted(set(nbrs)):
                rest = sorted(set(nbrs) - {z3})
                for z1 in rest:
                    z2 = [r for r in rest if r != z1][0]
                    moves.append(("exchange", (z1, z2, v, z3)))
    return moves


def _apply_move(d: Diagram, move):
    kind, args = move
    if kind == "chain":
        return apply_chain(d, args[0])
    if kind == "flipchain":
        v = args[0]
        eidx = d.prop_edges_at(v)
        i = min(eidx, key=lambda j: d.edges[j][:2])
        e, s = _flip(d.edges[i])
        edges = list(d.edges)
        edges[i] = e
        d2 = replace(d, edges=tuple(edges), prefactor=d.prefactor.mul_sign(s))
        return apply_chain(d2, v)
    if kind == "star":
        return apply_star_triangle(d, args[0])
    if kind == "fourier":
        return apply_fourier(d, args[0])
    if kind == "exchange":
        return apply_exchange(d, args)
    raise ValueError(kind)


def _finished(d: Diagram) -> bool:
    return not d.internals and not d.edges and not d.waves


def reduce_diagram(d: Diagram, max_states: int = 40000,
                   tie_break_reverse: bool = False) -> ClosedFormFactor:
    """Reduce to a canonical closed form via best-first rewrite search.

    Priority: fewer internal vertices, then fewer edges, then smallest (or,
    with ``tie_break_reverse``, largest) serialization -- so chains always
    dominate and the result is reproducible.  Raises :class:`StuckDiagram`
    when no terminating sequence is found within the state budget.
    """
    start = normalize(d)
    if _finished(start):
        return start.prefactor.canonical()

    def skey(dd, serial):
        s = serial
        if tie_break_reverse:
            s = "".join(chr(0x10FFFF - ord(ch)) for ch in s[:2000])
        return (len(dd.internals), len(dd.edges), s)

    s0 = _serialize_state(start)
    heap = [(skey(start, s0), 0, start)]
    seen = {s0}
    counter = 0
    expanded = 0
    best = start
    while heap:
        _, _, cur = heapq.heappop(heap)
        expanded += 1
        if expanded > max_states:
            break
        if len(cur.internals) < len(best.internals):
            best = cur
        for move in _candidate_moves(cur):
            try:
                nxt = normalize(_apply_move(cur, move))
            except (NotAChain, DegenerateChain, UniquenessViolated,
                    IndexSumMismatch, NoPlaneWave, StuckDiagram):
                continue
            if _finished(nxt):
                return nxt.prefactor.canonical()
            ser = _serialize_state(nxt)
            if ser in seen:
                continue
            seen.add(ser)
            counter += 1
            heapq.heappush(heap, (skey(nxt, ser), counter, nxt))
    raise StuckDiagram("no terminating rewrite sequence found", best)


def numeric_eval(d: Diagram, bindings: dict | None, spec: QuadratureSpec) -> IntegralEstimate:
    """Direct quadrature of the diagram over its internal vertices."""
    bindings = bindings or {}
    d = merge_parallel(d)
    k = len(d.internals)
    if k > 3:
        raise ValueError("numeric_eval supports at most 3 internal vertices")

    def resolve(label):
        kind, val = d.external_value(label)
        if kind == "pos":
            return complex(val)
        if val not in bindings:
            raise KeyError(f"momentum symbol {val!r} unbound")
        return complex(bindings[val])

    pre = d.prefactor.value(bindings)

    if k == 0:
        total = pre
        for a, b, u in d.edges:
            total *= eval_propagator(u, resolve(b) - resolve(a))
        for v, q, coeff in d.waves:
            qv = complex(bindings[q])
            zv = resolve(v)
            total *= np.exp(2j * coeff * (qv * zv).real)
        return IntegralEstimate(complex(total), 0.0, 0, True)

    order = list(d.internals)
    idx = {v: i for i, v in enumerate(order)}

    def coord(label, zs):
        if label in idx:
            return zs[idx[label]]
        return resolve(label)

    def integrand(*zs):
        out = np.ones_like(zs[0], dtype=complex)
        for a, b, u in d.edges:
            out = out * eval_propagator(u, coord(b, zs) - coord(a, zs))
        for v, q, coeff in d.waves:
            qv = complex(bindings[q])
            out = out * np.exp(2j * coeff * np.real(qv * coord(v, zs)))
        return out

    centers = []
    wave_p = None
    for a, b, u in d.edges:
        for lab in (a, b):
            if lab not in idx:
                centers.append(resolve(lab))
    for v, q, coeff in d.waves:
        if v in idx:
            qv = complex(bindings[q])
            wave_p = qv if wave_p is None else wave_p + coeff * qv
    uniq = []
    for c in centers:
        if not any(abs(c - x) < 1e-12 for x in uniq):
            uniq.append(c)
    qspec = replace(spec, singularity_centers=tuple(uniq),
                    wave_momentum=wave_p if spec.wave_momentum is None
                    else spec.wave_momentum)
    est = integrate_c2(integrand, k, qspec)
    est.value = complex(est.value * pre)
    est.err = est.err * abs(pre)
    return est


# ---------------------------------------------------------------------------
# JSON serialization (decimal fields carry full double precision)
# ---------------------------------------------------------------------------

def factor_to_json(f: ClosedFormFactor) -> dict:
    c = f.canonical()
    return {
        "pi_power": c.pi_power,
        "phase_quarter_turns": c.phase_quarter_turns,
        "sign": c.sign,
        "scalar_re": c.scalar.real,
        "scalar_im": c.scalar.imag,
        "gamma_factors": [
            {"m": u.m, "w_re": u.w.real, "w_im": u.w.imag, "mult": mult}
            for u, mult in c.gamma_factors
        ],
        "momentum_powers": [
            {"momentum": s, "m": u.m, "w_re": u.w.real, "w_im": u.w.imag}
            for s, u in c.momentum_powers
        ],
        "deltas": list(c.deltas),
    }


def factor_from_json(obj: dict) -> ClosedFormFactor:
    return ClosedFormFactor(
        pi_power=int(obj["pi_power"]),
        phase_quarter_turns=int(obj["phase_quarter_turns"]),
        sign=int(obj["sign"]),
        gamma_factors=tuple(
            (FieldExponent(int(g["m"]), complex(g["w_re"], g["w_im"])),
             int(g["mult"])) for g in obj.get("gamma_factors", ())),
        momentum_powers=tuple(
            (mp["momentum"],
             FieldExponent(int(mp["m"]), complex(mp["w_re"], mp["w_im"])))
            for mp in obj.get("momentum_powers", ())),
        scalar=complex(obj.get("scalar_re", 1.0), obj.get("scalar_im", 0.0)),
        deltas=tuple(obj.get("deltas", ())),
    )


def diagram_to_json(d: Diagram) -> dict:
    ext = []
    for lab, kind, val in d.externals:
        if kind == "pos":
            ext.append({"label": lab, "z_re": complex(val).real,
                        "z_im": complex(val).imag})
        else:
            ext.append({"label": lab, "momentum": val})
    return {
        "external": ext,
        "internal": list(d.internals),
        "edges": [
            {"from": a, "to": b, "m": u.m, "w_re": u.w.real, "w_im": u.w.imag}
            for a, b, u in d.edges
        ],
        "waves": [
            {"vertex": v, "momentum": q, "coeff": c} for v, q, c in d.waves
        ],
        "prefactor": factor_to_json(d.prefactor),
    }


def diagram_from_json(obj: dict) -> Diagram:
    ext = []
    for e in obj.get("external", ()):
        if "momentum" in e:
            ext.append((e["label"], "mom", e["momentum"]))
        else:
            ext.append((e["label"], "pos", complex(e["z_re"], e["z_im"])))
    return Diagram(
        externals=tuple(ext),
        internals=tuple(obj.get("internal", ())),
        edges=tuple(
            (e["from"], e["to"],
             FieldExponent(int(e["m"]), complex(e["w_re"], e["w_im"])))
            for e in obj.get("edges", ())),
        prefactor=factor_from_json(obj.get("prefactor", {
            "pi_power": 0, "phase_quarter_turns": 0, "sign": 1})),
        waves=tuple((w["vertex"], w["momentum"], int(w.get("coeff", 1)))
                    for w in obj.get("waves", ())),
    )
