"""
One-dimensional basis families on [0, 1] and their tensor products.

Every basis member is stored as a :class:`PiecewisePolynomial1D`: a list of
breakpoints and, for each sub-interval, the monomial coefficients (ascending
degree, in the global variable ``x``).  Inner products are computed exactly
from polynomial antiderivatives, so orthonormality checks carry no
quadrature error.

Four families are available:

* ``ordinary-polynomial``   -- the monomials ``1, u, u^2, ...``
* ``orthonormal-polynomial`` -- Gram-Schmidt orthonormalized monomials
* ``legendre-scaling``      -- normalized shifted Legendre polynomials
* ``legendre-multiwavelet`` -- Legendre multiwavelets with a break at 1/2
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DomainError, SolverFailure

MAX_POLY_DEGREE = 12
MAX_WAVELET_ORDER = 5

ORDINARY = "ordinary-polynomial"
ORTHONORMAL = "orthonormal-polynomial"
SCALING = "legendre-scaling"
MULTIWAVELET = "legendre-multiwavelet"
FAMILY_KINDS = (ORDINARY, ORTHONORMAL, SCALING, MULTIWAVELET)
_KIND_ALIASES = {"ordinary": ORDINARY, "monomial": ORDINARY, "orthonormal": ORTHONORMAL,
                 "scaling": SCALING, "multiwavelet": MULTIWAVELET, "wavelet": MULTIWAVELET}


def family_kind(name: str) -> str:
    """Canonical family kind for a full or short name such as ``"orthonormal"``."""
    key = str(name).strip().lower()
    if key in FAMILY_KINDS:
        return key
    try:
        return _KIND_ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown basis kind {name!r}") from None

# member-name prefixes; also used to resolve labels back into functions
_PREFIX = {ORDINARY: "u", ORTHONORMAL: "phi", SCALING: "phi", MULTIWAVELET: "psi"}


@dataclass(frozen=True)
class PiecewisePolynomial1D:
    """A piecewise polynomial on [0, 1].

    Parameters
    ----------
    breakpoints : tuple of float
        Strictly increasing, starting at 0 and ending at 1.
    pieces : tuple of tuple of float
        ``pieces[k]`` holds the coefficients of ``x**0, x**1, ...`` on
        ``[breakpoints[k], breakpoints[k+1])``.  The last interval is closed.
    name : str
        Short member name such as ``"phi2"`` or ``"psi0"``.
    """

    breakpoints: tuple
    pieces: tuple
    name: str = ""

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        pieces = tuple(tuple(float(c) for c in p) for p in self.pieces)
        if len(bp) < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b >= a for a, b in zip(bp[1:], bp[:-1])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(pieces) != len(bp) - 1:
            raise ValueError("need exactly one piece per interval")
        if any(len(p) == 0 for p in pieces):
            raise ValueError("empty coefficient list")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def polynomial(cls, coefficients, name=""):
        """A single polynomial piece on all of [0, 1]."""
        return cls((0.0, 1.0), (tuple(coefficients),), name)

    @property
    def degree(self) -> int:
        return max(len(np.trim_zeros(np.asarray(p), "b")) for p in self.pieces) - 1

    def piece_index(self, x):
        """Index of the interval containing each ``x`` (last interval closed)."""
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, len(self.pieces) - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if len(self.pieces) == 1:
            return P.polyval(x, self.pieces[0])
        idx = self.piece_index(x)
        out = np.empty_like(x)
        for k, coef in enumerate(self.pieces):
            mask = idx == k
            out[mask] = P.polyval(x[mask], coef)
        return out if out.ndim else float(out)

    def integral(self) -> float:
        """Exact integral over [0, 1]."""
        total = 0.0
        for (a, b), coef in zip(self.intervals(), self.pieces):
            anti = P.polyint(coef)
            total += P.polyval(b, anti) - P.polyval(a, anti)
        return float(total)

    def intervals(self):
        return list(zip(self.breakpoints[:-1], self.breakpoints[1:]))

    def to_dict(self) -> dict:
        return {"breakpoints": list(self.breakpoints),
                "pieces": [list(p) for p in self.pieces]}


def evaluate(f: PiecewisePolynomial1D, u):
    """Evaluate ``f`` at ``u``, rejecting points outside [0, 1]."""
    arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"evaluation point outside [0, 1]: {u!r}")
    return f(arr)


def _refine(f, g):
    """Pieces of ``f`` and ``g`` on the union of their breakpoints."""
    bps = np.union1d(f.breakpoints, g.breakpoints)
    mids = 0.5 * (bps[:-1] + bps[1:])
    fi, gi = f.piece_index(mids), g.piece_index(mids)
    return [(a, b, f.pieces[i], g.pieces[j])
            for a, b, i, j in zip(bps[:-1], bps[1:], fi, gi)]


def _to_local(coef, a, h):
    """Coefficients of ``p(a + h*t)`` in ``t``."""
    return np.polynomial.Polynomial(coef)(np.polynomial.Polynomial([a, h])).coef


def inner_product(f: PiecewisePolynomial1D, g: PiecewisePolynomial1D) -> float:
    """Exact value of the integral of ``f * g`` over [0, 1].

    Each piece is re-expanded about its own interval before multiplying;
    wavelet pieces on [1/2, 1] have large global coefficients and the
    global-variable product cancels badly.
    """
    total = 0.0
    for a, b, cf, cg in _refine(f, g):
        prod = P.polymul(_to_local(cf, a, b - a), _to_local(cg, a, b - a))
        total += (b - a) * np.sum(prod / np.arange(1, len(prod) + 1))
    return float(total)


def moment(f: PiecewisePolynomial1D, j: int) -> float:
    """Exact value of the integral of ``f(x) * x**j`` over [0, 1]."""
    mono = np.zeros(j + 1)
    mono[j] = 1.0
    return inner_product(f, PiecewisePolynomial1D.polynomial(mono))


def gram_matrix(members) -> np.ndarray:
    m = len(members)
    G = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            G[i, j] = G[j, i] = inner_product(members[i], members[j])
    return G


@dataclass(frozen=True)
class BasisFamily1D:
    """An ordered list of 1-D basis functions of one kind."""

    kind: str
    members: tuple
    order: int

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "members", tuple(self.members))

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def gram(self) -> np.ndarray:
        return gram_matrix(self.members)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "order": self.order,
                "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, data: dict) -> "BasisFamily1D":
        prefix = _PREFIX[data["kind"]]
        members = [PiecewisePolynomial1D(m["breakpoints"], m["pieces"], f"{prefix}{i}")
                   for i, m in enumerate(data["members"])]
        return cls(data["kind"], members, int(data["order"]))


def _check_degree(max_degree, cap, what):
    if int(max_degree) != max_degree or max_degree < 0:
        raise ValueError(f"{what} must be a non-negative integer")
    if max_degree > cap:
        raise ValueError(f"{what} {max_degree} exceeds the cap of {cap}")


def ordinary_polynomials(max_degree: int) -> BasisFamily1D:
    """The monomials ``u**0 .. u**max_degree`` (not orthogonal)."""
    _check_degree(max_degree, MAX_POLY_DEGREE, "degree")
    members = []
    for n in range(max_degree + 1):
        coef = [0.0] * n + [1.0]
        members.append(PiecewisePolynomial1D.polynomial(coef, f"u{n}"))
    return BasisFamily1D(ORDINARY, members, max_degree)


def _exact_gram_schmidt(max_degree):
    """Orthogonal (unnormalized) polynomials and squared norms, in rationals."""
    def ip(a, b):
        return sum(ca * cb / (i + j + 1)
                   for i, ca in enumerate(a) for j, cb in enumerate(b))

    polys, norms = [], []
    for n in range(max_degree + 1):
        p = [Fraction(0)] * n + [Fraction(1)]
        for q, nq in zip(polys, norms):
            c = ip(p, q) / nq
            p = [pk - c * (q[k] if k < len(q) else 0) for k, pk in enumerate(p)]
        polys.append(p)
        norms.append(ip(p, p))
    return polys, norms


def gram_schmidt_orthonormal(max_degree: int) -> BasisFamily1D:
    """Orthonormalize ``1, u, ..., u**max_degree`` on [0, 1].

    The projections are carried out in exact rational arithmetic, so the
    only rounding is the final division by the norm.  Leading coefficients
    come out positive.
    """
    _check_degree(max_degree, MAX_POLY_DEGREE, "degree")
    polys, norms = _exact_gram_schmidt(max_degree)
    members = []
    for n, (p, nrm) in enumerate(zip(polys, norms)):
        scale = 1.0 / math.sqrt(nrm)
        members.append(PiecewisePolynomial1D.polynomial(
            [float(c) * scale for c in p], f"phi{n}"))
    return BasisFamily1D(ORTHONORMAL, members, max_degree)


def shifted_legendre_coefficients(n: int) -> list:
    """Monomial coefficients of the unit-norm shifted Legendre polynomial of degree n."""
    root = math.sqrt(2 * n + 1)
    return [root * (-1) ** (n + k) * math.comb(n, k) * math.comb(n + k, k)
            for k in range(n + 1)]


def legendre_scaling(order: int) -> BasisFamily1D:
    """Legendre scaling functions ``phi^0 .. phi^order`` on [0, 1]."""
    _check_degree(order, MAX_POLY_DEGREE, "order")
    members = [PiecewisePolynomial1D.polynomial(shifted_legendre_coefficients(i), f"phi{i}")
               for i in range(order + 1)]
    return BasisFamily1D(SCALING, members, order)


@dataclass(frozen=True)
class TwoScaleCoefficients:
    """Refinement coefficients onto the half-interval dilates.

    Row ``i`` of ``p`` (resp. ``q``) expresses ``phi^i`` (resp. ``psi^i``) as
    ``sum_j c[i, j] phi^j(2x) + sum_j c[i, r+1+j] phi^j(2x-1)``.
    """

    order: int
    p: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)


def _half_dilates(order):
    """``phi^j(2x)`` on [0, 1/2) and ``phi^j(2x-1)`` on [1/2, 1], as piecewise polys."""
    bp = (0.0, 0.5, 1.0)
    zero = (0.0,)
    left, right = [], []
    for j in range(order + 1):
        c = np.asarray(shifted_legendre_coefficients(j))
        lc = c * 2.0 ** np.arange(j + 1)
        rc = np.polynomial.Polynomial(c)(np.polynomial.Polynomial([-1.0, 2.0])).coef
        left.append(PiecewisePolynomial1D(bp, (tuple(lc), zero)))
        right.append(PiecewisePolynomial1D(bp, (zero, tuple(rc))))
    return left + right


def _assemble(coeffs, dilates, name):
    r1 = len(dilates) // 2
    lc, rc = np.zeros(r1), np.zeros(r1)
    for c, d in zip(coeffs[:r1], dilates[:r1]):
        lc[: len(d.pieces[0])] += c * np.asarray(d.pieces[0])
    for c, d in zip(coeffs[r1:], dilates[r1:]):
        rc[: len(d.pieces[1])] += c * np.asarray(d.pieces[1])
    return PiecewisePolynomial1D((0.0, 0.5, 1.0), (tuple(lc), tuple(rc)), name)


def scaling_two_scale(order: int) -> np.ndarray:
    """The ``(r+1) x 2(r+1)`` refinement matrix of the scaling functions."""
    dilates = _half_dilates(order)
    scaling = legendre_scaling(order)
    # the dilates are orthogonal with squared norm 1/2
    return np.array([[2.0 * inner_product(phi, d) for d in dilates]
                     for phi in scaling.members])


def solve_multiwavelets(order: int, tol: float = 1e-8):
    """Construct the Legendre multiwavelets ``psi^0 .. psi^order``.

    Each ``psi^i`` is a combination of the half-interval dilates of the
    scaling functions, orthogonal to every polynomial of degree ``<= i + r``
    and to ``psi^(i+1) .. psi^r``.  Working from ``i = r`` downwards, each
    step leaves a one-dimensional null space, solved by SVD.

    The conditions fix each ``psi^i`` only up to sign; the sign is chosen so
    that ``psi^i(0) > 0`` (order 0 gives the Haar wavelet, +1 then -1).

    Returns
    -------
    family : BasisFamily1D
    coefficients : TwoScaleCoefficients

    Raises
    ------
    SolverFailure
        If the assembled functions violate a condition by more than ``tol``.
    """
    _check_degree(order, MAX_WAVELET_ORDER, "order")
    r = order
    dilates = _half_dilates(r)
    # exact orthonormal polynomials are better conditioned than raw monomials
    ortho = gram_schmidt_orthonormal(2 * r + 1).members
    moments = np.array([[inner_product(g, d) for d in dilates] for g in ortho])

    q = np.zeros((r + 1, 2 * (r + 1)))
    for i in range(r, -1, -1):
        rows = [moments[: i + r + 1]]
        if i < r:
            rows.append(q[i + 1:])
        A = np.vstack(rows)
        _, s, vt = np.linalg.svd(A)
        vec = vt[-1]
        # dilate Gram matrix is I/2, so unit L2 norm means |q| = sqrt(2)
        vec = vec * math.sqrt(2.0) / np.linalg.norm(vec)
        q[i] = vec * _sign_reference(vec, i, r)

    members = [_assemble(q[i], dilates, f"psi{i}") for i in range(r + 1)]
    family = BasisFamily1D(MULTIWAVELET, members, r)

    G = family.gram()
    worst = np.max(np.abs(G - np.eye(r + 1)))
    for i, psi in enumerate(members):
        for j in range(i + r + 1):
            worst = max(worst, abs(moment(psi, j)))
    if not worst < tol:
        raise SolverFailure(f"multiwavelet conditions violated by {worst:.3e} at order {r}")
    return family, TwoScaleCoefficients(r, scaling_two_scale(r), q)


def _sign_reference(vec, i, r):
    """+1 or -1 so that the wavelet is positive just right of 0."""
    at_zero = sum(c * math.sqrt(2 * j + 1) * (-1) ** j for j, c in enumerate(vec[: r + 1]))
    return -1.0 if at_zero < 0 else 1.0


def legendre_multiwavelets(order: int) -> BasisFamily1D:
    return solve_multiwavelets(order)[0]


@dataclass(frozen=True)
class TensorBasis2D:
    """``h(u, v) = left(u) * right(v)``."""

    left: PiecewisePolynomial1D
    right: PiecewisePolynomial1D
    label: str

    def __call__(self, u, v):
        return self.left(u) * self.right(v)


def tensor(left: PiecewisePolynomial1D, right: PiecewisePolynomial1D) -> TensorBasis2D:
    return TensorBasis2D(left, right, f"{left.name} x {right.name}")


def tensor_inner_product(a: TensorBasis2D, b: TensorBasis2D) -> float:
    return inner_product(a.left, b.left) * inner_product(a.right, b.right)


@lru_cache(maxsize=None)
def _cached_family(kind, order):
    if kind == ORDINARY:
        return ordinary_polynomials(order)
    if kind == ORTHONORMAL:
        return gram_schmidt_orthonormal(order)
    if kind == MULTIWAVELET:
        return legendre_multiwavelets(order)
    return legendre_scaling(order)


_NAME = re.compile(r"^(u|phi|psi)(\d+)$")


def resolve_member(name: str, wavelet_order: int = MAX_WAVELET_ORDER) -> PiecewisePolynomial1D:
    """Look up a 1-D member by name: ``u<n>``, ``phi<n>`` or ``psi<n>``.

    ``phi<n>`` always resolves to the Gram-Schmidt polynomial; ``psi<n>``
    to the multiwavelet of the given order.
    """
    m = _NAME.match(name.strip())
    if not m:
        raise ValueError(f"unknown basis member {name!r}")
    prefix, n = m.group(1), int(m.group(2))
    if prefix == "u":
        return _cached_family(ORDINARY, MAX_POLY_DEGREE)[n]
    if prefix == "phi":
        return _cached_family(ORTHONORMAL, MAX_POLY_DEGREE)[n]
    if n > wavelet_order:
        raise ValueError(f"{name} needs wavelet order >= {n}")
    return _cached_family(MULTIWAVELET, wavelet_order)[n]


def parse_label(label: str, wavelet_order: int = MAX_WAVELET_ORDER) -> TensorBasis2D:
    """Inverse of the label produced by :func:`tensor`, e.g. ``"phi2 x psi1"``."""
    parts = label.split(" x ")
    if len(parts) != 2:
        raise ValueError(f"malformed tensor label {label!r}")
    return tensor(resolve_member(parts[0], wavelet_order),
                  resolve_member(parts[1], wavelet_order))


def _level(name):
    prefix, n = _NAME.match(name).groups()
    return int(n) + (1 if prefix == "psi" else 0)


def candidate_pool(kind: str, max_degree: int = 5,
                   wavelet_order: int = MAX_WAVELET_ORDER) -> list:
    """All tensors of a family up to a total degree, without constant factors.

    A tensor with a constant factor has a fixed expectation under any
    copula, so it cannot act as a constraint.  For the multiwavelet family
    the pool mixes scaling functions ``phi1..phi_r`` with wavelets
    ``psi0..psi_r``; a wavelet ``psi<i>`` counts as degree ``i + 1``.
    """
    kind = family_kind(kind)
    if kind == ORDINARY:
        names = [f"u{n}" for n in range(1, max_degree + 1)]
    elif kind in (ORTHONORMAL, SCALING):
        names = [f"phi{n}" for n in range(1, max_degree + 1)]
    elif kind == MULTIWAVELET:
        names = ([f"phi{n}" for n in range(1, wavelet_order + 1)]
                 + [f"psi{n}" for n in range(wavelet_order + 1)])
    else:
        raise ValueError(f"unknown basis kind {kind!r}")
    pairs = [(a, b) for a in names for b in names
             if _level(a) + _level(b) <= max_degree]
    pairs.sort(key=lambda ab: (_level(ab[0]) + _level(ab[1]),
                               -max(_level(ab[0]), _level(ab[1])),
                               _level(ab[0]), ab[0].startswith("psi"), ab[1].startswith("psi")))
    return [tensor(resolve_member(a, wavelet_order), resolve_member(b, wavelet_order))
            for a, b in pairs]
