"""
Regular vines whose edges are minimum-information copulas.

Edges of the first tree model raw pairs.  An edge in a later tree models
the pair of conditional CDF values ``(F(x_a | D), F(x_b | D))`` produced
by its two parent edges.  Its dependence on the conditioning variables
``D`` is captured by binning each of them and fitting one copula per bin
combination.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.stats import rankdata

from .basis import MAX_WAVELET_ORDER
from .errors import DomainError, EmptyBin, InvalidConfig, UnfittedParent, UnsupportedStructure
from .fit import CopulaFit, FitConfig, PairSample, stepwise_select
from .grid import DEFAULT_MAX_ITER, DEFAULT_TOL, conditional_cdf, inverse_conditional_cdf, log_density

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- structure

@dataclass(frozen=True)
class VineEdge:
    """Edge ``a,b | D`` of tree ``tree`` (1-based).

    ``conditioned`` holds variable indices ``(a, b)`` where ``a`` comes
    from the first parent and ``b`` from the second; ``parents`` indexes
    two edges of the previous tree, or is ``None`` in the first tree.
    """

    tree: int
    conditioned: tuple
    conditioning: tuple = ()
    parents: tuple | None = None

    @property
    def complete(self) -> frozenset:
        return frozenset(self.conditioned) | frozenset(self.conditioning)


@dataclass(frozen=True)
class VineStructure:
    labels: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def tree(self, m: int) -> list:
        return [e for e in self.edges if e.tree == m]

    def edge_label(self, e: VineEdge) -> str:
        a, b = (self.labels[i] for i in e.conditioned)
        cond = ",".join(self.labels[i] for i in e.conditioning)
        return f"{a},{b}|{cond}" if cond else f"{a},{b}"

    def is_dvine(self) -> bool:
        """True when every edge is ``i, i+m | i+1..i+m-1`` in label order."""
        if validate_regular_vine(self) is not None:
            return False
        for e in self.edges:
            a, b = sorted(e.conditioned)
            if b - a != e.tree or tuple(sorted(e.conditioning)) != tuple(range(a + 1, b)):
                return False
        return True

    def to_dict(self) -> dict:
        return {"labels": list(self.labels),
                "edges": [{"tree": e.tree,
                           "conditioned": [self.labels[i] for i in e.conditioned],
                           "conditioning": [self.labels[i] for i in e.conditioning],
                           "parents": None if e.parents is None else list(e.parents)}
                          for e in self.edges]}

    @classmethod
    def from_dict(cls, data: dict) -> "VineStructure":
        labels = tuple(data["labels"])
        idx = {s: i for i, s in enumerate(labels)}
        try:
            edges = tuple(VineEdge(int(e["tree"]),
                                   tuple(idx[s] for s in e["conditioned"]),
                                   tuple(idx[s] for s in e["conditioning"]),
                                   None if e.get("parents") is None else tuple(e["parents"]))
                          for e in data["edges"])
        except KeyError as exc:
            raise InvalidConfig(f"edge refers to unknown variable {exc}") from None
        return cls(labels, edges)


def build_dvine(order) -> VineStructure:
    """D-vine on the given variable order: a path in the first tree."""
    labels = tuple(order)
    d = len(labels)
    if d < 2:
        raise InvalidConfig("a vine needs at least two variables")
    if len(set(labels)) != d:
        raise InvalidConfig("variable labels must be distinct")
    edges = []
    start = {}  # (tree, first variable) -> edge index
    for m in range(1, d):
        for i in range(d - m):
            parents = None if m == 1 else (start[(m - 1, i)], start[(m - 1, i + 1)])
            start[(m, i)] = len(edges)
            edges.append(VineEdge(m, (i, i + m), tuple(range(i + 1, i + m)), parents))
    return VineStructure(labels, tuple(edges))


def _is_tree(nodes, links) -> bool:
    """Whether ``links`` (pairs of nodes) form a spanning tree on ``nodes``."""
    nodes = list(nodes)
    if len(links) != len(nodes) - 1:
        return False
    root = {x: x for x in nodes}

    def find(x):
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    for p, q in links:
        rp, rq = find(p), find(q)
        if rp == rq:
            return False
        root[rp] = rq
    return True


def validate_regular_vine(structure: VineStructure) -> str | None:
    """Return ``None`` for a valid regular vine, else the first violation found."""
    d = structure.dimension
    edges = structure.edges
    if d < 2:
        return "dimension: need at least two variables"
    if len(edges) != d * (d - 1) // 2:
        return f"edge count: {len(edges)} edges, a regular vine on {d} variables has {d * (d - 1) // 2}"
    for m in range(1, d):
        if len(structure.tree(m)) != d - m:
            return f"edge count: tree {m} has {len(structure.tree(m))} edges, expected {d - m}"
    for k, e in enumerate(edges):
        if len(e.conditioned) != 2 or e.conditioned[0] == e.conditioned[1]:
            return f"edge {k}: conditioned set must be two distinct variables"
        if any(not 0 <= i < d for i in e.complete):
            return f"edge {k}: variable index out of range"
        if e.tree == 1:
            if e.parents is not None or e.conditioning:
                return f"edge {k}: first-tree edges have no parents or conditioning set"
            continue
        if e.parents is None or len(e.parents) != 2:
            return f"edge {k}: needs two parent edges"
        p, q = e.parents
        if not (0 <= p < len(edges) and 0 <= q < len(edges)) or p == q:
            return f"edge {k}: invalid parent reference"
        ep, eq = edges[p], edges[q]
        if ep.tree != e.tree - 1 or eq.tree != e.tree - 1:
            return f"edge {k}: parents must lie in tree {e.tree - 1}"
        if e.tree == 2:
            shared = set(ep.conditioned) & set(eq.conditioned)
        else:
            shared = set(ep.parents) & set(eq.parents)
        if not shared:
            return f"proximity: edge {k} joins edges {p} and {q}, which share no node"
        a, b = e.conditioned
        if a not in ep.conditioned or b not in eq.conditioned \
                or a in eq.complete or b in ep.complete \
                or frozenset(e.conditioning) != ep.complete & eq.complete \
                or len(e.conditioning) != e.tree - 1:
            return f"edge {k}: conditioned/conditioning sets do not follow from its parents"
    if not _is_tree(range(d), [e.conditioned for e in structure.tree(1)]):
        return "tree 1 is not a spanning tree"
    for m in range(2, d):
        prev = [i for i, e in enumerate(edges) if e.tree == m - 1]
        if not _is_tree(prev, [e.parents for e in structure.tree(m)]):
            return f"tree {m} is not a spanning tree on the edges of tree {m - 1}"
    return None


# ---------------------------------------------------------------- edge models

@dataclass(frozen=True)
class BinPartition:
    """Cut points per conditioning variable; bin combinations are the Cartesian product."""

    cuts: tuple

    def __post_init__(self):
        cuts = tuple(tuple(float(x) for x in c) for c in self.cuts)
        for c in cuts:
            if len(c) < 2 or c[0] != 0.0 or c[-1] != 1.0 or np.any(np.diff(c) <= 0):
                raise InvalidConfig("bin cuts must increase strictly from 0 to 1")
        object.__setattr__(self, "cuts", cuts)

    @classmethod
    def equal_width(cls, n_vars: int, bins: int) -> "BinPartition":
        if bins < 1:
            raise InvalidConfig("bins must be at least 1")
        edges = tuple(float(x) for x in np.linspace(0.0, 1.0, bins + 1))
        return cls(tuple(edges for _ in range(n_vars)))

    @property
    def shape(self) -> tuple:
        return tuple(len(c) - 1 for c in self.cuts)

    @property
    def n_combinations(self) -> int:
        return int(np.prod(self.shape)) if self.cuts else 1

    def combinations(self) -> list:
        return list(product(*(range(s) for s in self.shape)))

    def assign(self, values) -> np.ndarray:
        """Flat combination index (first variable most significant) for each row."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        flat = np.zeros(values.shape[0], dtype=int)
        for j, c in enumerate(self.cuts):
            idx = np.clip(np.searchsorted(c, values[:, j], side="right") - 1, 0, len(c) - 2)
            flat = flat * (len(c) - 1) + idx
        return flat


@dataclass(frozen=True)
class UnconditionalEdge:
    fit: CopulaFit
    n_obs: int = 0

    @property
    def fits(self) -> list:
        return [self.fit]

    def assign(self, cond) -> np.ndarray:
        return np.zeros(len(cond), dtype=int)

    def to_dict(self) -> dict:
        return {"type": "unconditional", "n": self.n_obs, "fit": self.fit.to_dict()}


@dataclass(frozen=True)
class BinnedConditionalEdge:
    """One fit per bin combination, stored in flat combination order."""

    partition: BinPartition
    fits: list = field(repr=False)
    counts: tuple = ()

    def assign(self, cond) -> np.ndarray:
        return self.partition.assign(cond)

    def to_dict(self) -> dict:
        combos = self.partition.combinations()
        return {"type": "binned", "cuts": [list(c) for c in self.partition.cuts],
                "fits": [{"bin": list(c), "n": int(n), "fit": f.to_dict()}
                         for c, n, f in zip(combos, self.counts, self.fits)]}


def _edge_from_dict(data: dict, wavelet_order: int, dad_tol: float, dad_max_iter: int):
    load = lambda d: CopulaFit.from_dict(d, wavelet_order, dad_tol, dad_max_iter)  # noqa: E731
    if data["type"] == "unconditional":
        return UnconditionalEdge(load(data["fit"]), int(data.get("n", 0)))
    if data["type"] == "binned":
        part = BinPartition(tuple(tuple(c) for c in data["cuts"]))
        items = data["fits"]
        if [tuple(x["bin"]) for x in items] != part.combinations():
            raise InvalidConfig("binned edge must list every bin combination in order")
        return BinnedConditionalEdge(part, [load(x["fit"]) for x in items],
                                     tuple(int(x.get("n", 0)) for x in items))
    raise InvalidConfig(f"unknown edge model type {data['type']!r}")


@dataclass(frozen=True)
class VineModel:
    structure: VineStructure
    edge_models: tuple = field(repr=False)
    basis_family_kind: str = ""
    total_log_likelihood: float = 0.0
    wavelet_order: int = MAX_WAVELET_ORDER
    rerank: bool = True

    def components(self):
        """``(edge index, bin combination, fit, count)`` for every component fit."""
        for k, em in enumerate(self.edge_models):
            if isinstance(em, BinnedConditionalEdge):
                for combo, fit, n in zip(em.partition.combinations(), em.fits, em.counts):
                    yield k, combo, fit, n
            else:
                yield k, (), em.fit, em.n_obs

    def to_dict(self) -> dict:
        out = self.structure.to_dict()
        for e, em in zip(out["edges"], self.edge_models):
            e["model"] = em.to_dict()
        out.update(family=self.basis_family_kind, wavelet_order=self.wavelet_order,
                   rerank=self.rerank, total_loglik=float(self.total_log_likelihood))
        return out

    @classmethod
    def from_dict(cls, data: dict, dad_tol: float = DEFAULT_TOL,
                  dad_max_iter: int = DEFAULT_MAX_ITER) -> "VineModel":
        structure = VineStructure.from_dict(data)
        problem = validate_regular_vine(structure)
        if problem is not None:
            raise InvalidConfig(f"invalid vine structure: {problem}")
        worder = int(data.get("wavelet_order", MAX_WAVELET_ORDER))
        models = tuple(_edge_from_dict(e["model"], worder, dad_tol, dad_max_iter)
                       for e in data["edges"])
        return cls(structure, models, data.get("family", ""),
                   float(data["total_loglik"]), worder, bool(data.get("rerank", True)))


# ------------------------------------------------------- conditional transforms

def _h_pair(fits, groups, u, v):
    """Both h-values of an edge, with copula ``fits[groups[t]]`` for row ``t``.

    Returns ``(F(a | D, b), F(b | D, a))`` as computed from the pair copula.
    """
    h_a = np.empty_like(u)
    h_b = np.empty_like(v)
    for g in np.unique(groups):
        rows = groups == g
        cop = fits[g].copula
        h_a[rows] = conditional_cdf(cop.transpose(), u[rows], v[rows])
        h_b[rows] = conditional_cdf(cop, v[rows], u[rows])
    return h_a, h_b


def _edge_inputs(structure: VineStructure, k: int, hvals: dict, data: np.ndarray):
    """Pseudo-observations ``(F(x_a | D), F(x_b | D))`` feeding edge ``k``."""
    e = structure.edges[k]
    a, b = e.conditioned
    if e.parents is None:
        return data[:, a], data[:, b]
    p, q = e.parents
    try:
        return hvals[(p, a)], hvals[(q, b)]
    except KeyError:
        raise UnfittedParent(f"parent edges of {structure.edge_label(e)} are not fitted") from None


def conditional_pseudo_observations(structure: VineStructure, edge_models, data, edge: int) -> PairSample:
    """Transform raw rows into the pair of conditional CDF values seen by ``edge``.

    ``edge_models`` must cover every edge of the earlier trees (entries for
    later edges may be ``None``).
    """
    data = np.asarray(data, dtype=float)
    target = structure.edges[edge]
    hvals = {}
    for k, e in enumerate(structure.edges):
        if e.tree >= target.tree:
            continue
        em = edge_models[k] if k < len(edge_models) else None
        if em is None:
            raise UnfittedParent(f"edge {structure.edge_label(e)} is not fitted")
        u, v = _edge_inputs(structure, k, hvals, data)
        groups = em.assign(data[:, list(e.conditioning)])
        h_a, h_b = _h_pair(em.fits, groups, u, v)
        hvals[(k, e.conditioned[0])] = h_a
        hvals[(k, e.conditioned[1])] = h_b
    u, v = _edge_inputs(structure, edge, hvals, data)
    return PairSample(u, v)


def _rerank(x: np.ndarray) -> np.ndarray:
    return rankdata(x, method="average") / (x.size + 1)


# ------------------------------------------------------------------ fitting

def fit_vine(data, structure: VineStructure, candidates, k: int, bins: int = 4,
             config: FitConfig = FitConfig(), rerank: bool = True,
             min_bin_count: int | None = None, family: str = "",
             wavelet_order: int = MAX_WAVELET_ORDER) -> VineModel:
    """Fit every edge by stepwise selection of ``k`` bases from ``candidates``.

    First-tree edges are fitted once on the raw column pairs.  Edges of tree
    ``m >= 2`` split the observations by the Cartesian bins of their
    ``m - 1`` conditioning columns and fit each combination separately;
    with ``rerank`` the pair inside each bin is re-ranked to uniform margins
    first.

    Raises
    ------
    EmptyBin
        If a bin combination holds fewer than ``min_bin_count`` rows
        (default ``max(30, 5 k)``).
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != structure.dimension:
        raise InvalidConfig("data columns must match the vine dimension")
    if np.any(~np.isfinite(data)) or data.min() < 0 or data.max() > 1:
        raise DomainError("vine data must be pseudo-observations in [0, 1]")
    problem = validate_regular_vine(structure)
    if problem is not None:
        raise InvalidConfig(f"invalid vine structure: {problem}")
    min_count = max(30, 5 * k) if min_bin_count is None else int(min_bin_count)
    candidates = list(candidates)

    # bin membership depends only on raw columns, so check every bin before fitting
    partitions = {}
    for idx, e in enumerate(structure.edges):
        if e.tree == 1:
            continue
        part = BinPartition.equal_width(len(e.conditioning), bins)
        counts = np.bincount(part.assign(data[:, list(e.conditioning)]),
                             minlength=part.n_combinations)
        for combo, n in zip(part.combinations(), counts):
            if n < min_count:
                label = structure.edge_label(e)
                raise EmptyBin(f"edge {label}, bin {combo}: {n} observations, "
                               f"need at least {min_count}; use fewer bins",
                               edge=label, bin_index=combo, count=int(n))
        partitions[idx] = part

    models = []
    hvals = {}
    total = 0.0
    for idx, e in enumerate(structure.edges):
        label = structure.edge_label(e)
        u, v = _edge_inputs(structure, idx, hvals, data)
        if e.tree == 1:
            fit = stepwise_select(candidates, PairSample(u, v), k, config)[-1]
            em = UnconditionalEdge(fit, len(u))
            log.info("edge %s: loglik %.4f", label, fit.log_likelihood)
        else:
            part = partitions[idx]
            groups = part.assign(data[:, list(e.conditioning)])
            fits, counts = [], []
            for g, combo in enumerate(part.combinations()):
                rows = groups == g
                n = int(rows.sum())
                bu, bv = u[rows], v[rows]
                if rerank:
                    bu, bv = _rerank(bu), _rerank(bv)
                fit = stepwise_select(candidates, PairSample(bu, bv), k, config)[-1]
                fits.append(fit)
                counts.append(n)
                log.info("edge %s bin %s: loglik %.4f", label, combo, fit.log_likelihood)
            em = BinnedConditionalEdge(part, fits, tuple(counts))
        total += sum(f.log_likelihood for f in em.fits)
        models.append(em)
        groups = em.assign(data[:, list(e.conditioning)])
        h_a, h_b = _h_pair(em.fits, groups, u, v)
        hvals[(idx, e.conditioned[0])] = h_a
        hvals[(idx, e.conditioned[1])] = h_b
    return VineModel(structure, tuple(models), family, total, wavelet_order, rerank)


# ----------------------------------------------------------- density / sampling

def vine_log_density(model: VineModel, points):
    """Sum over edges of the log pair density at the transformed coordinates."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != model.structure.dimension:
        raise ValueError("points must have one coordinate per vine variable")
    if np.any(~np.isfinite(pts)) or pts.min() < 0 or pts.max() > 1:
        raise DomainError("points must lie in the unit cube")
    s = model.structure
    total = np.zeros(pts.shape[0])
    hvals = {}
    for idx, (e, em) in enumerate(zip(s.edges, model.edge_models)):
        u, v = _edge_inputs(s, idx, hvals, pts)
        groups = em.assign(pts[:, list(e.conditioning)])
        for g in np.unique(groups):
            rows = groups == g
            total[rows] += log_density(em.fits[g].copula, u[rows], v[rows])
        h_a, h_b = _h_pair(em.fits, groups, u, v)
        hvals[(idx, e.conditioned[0])] = h_a
        hvals[(idx, e.conditioned[1])] = h_b
    return float(total[0]) if single else total


def _inverse_by_group(fits, groups, p, given):
    out = np.empty_like(p)
    for g in np.unique(groups):
        rows = groups == g
        out[rows] = inverse_conditional_cdf(fits[g].copula, p[rows], given[rows])
    return out


def sample_vine(model: VineModel, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` rows by sequential inversion along the D-vine order.

    Raises
    ------
    UnsupportedStructure
        For regular vines that are not D-vines.
    """
    if count < 1:
        raise InvalidConfig("count must be at least 1")
    s = model.structure
    if not s.is_dvine():
        raise UnsupportedStructure("sampling is implemented for D-vines only")
    d = s.dimension
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(count, d))
    # edge index by sorted conditioned pair
    where = {tuple(sorted(e.conditioned)): k for k, e in enumerate(s.edges)}
    x = np.empty((count, d))
    # fwd[a] = F(x_a | x_{a+1..j-1}) after step j-1 (h-output for the lower variable)
    fwd = {}
    x[:, 0] = w[:, 0]
    fwd[0] = x[:, 0]
    for j in range(1, d):
        back = w[:, j]
        upper = {}
        # peel off conditioning variables j-1, ..., 0 from F(x_j | x_0..x_{j-1})
        for a in range(0, j):
            k = where[(a, j)]
            e, em = s.edges[k], model.edge_models[k]
            groups = em.assign(x[:, list(e.conditioning)])
            lower = fwd[a]
            if e.conditioned[0] == a:
                back = _inverse_by_group(em.fits, groups, back, lower)
            else:
                back = _inverse_by_group([_Transposed(f) for f in em.fits], groups, back, lower)
            upper[a] = (k, groups, lower, back)
        x[:, j] = back
        # forward pass: update F(x_a | x_{a+1..j}) for the next step
        new_fwd = {j: x[:, j]}
        for a in range(j - 1, -1, -1):
            k, groups, lower, v_in = upper[a]
            e, em = s.edges[k], model.edge_models[k]
            if e.conditioned[0] == a:
                h_a, _ = _h_pair(em.fits, groups, lower, v_in)
            else:
                _, h_a = _h_pair(em.fits, groups, v_in, lower)
            new_fwd[a] = h_a
        fwd = new_fwd
    return x


class _Transposed:
    """Duck-typed fit whose copula swaps the two coordinates."""

    def __init__(self, fit):
        self.copula = fit.copula.transpose()
