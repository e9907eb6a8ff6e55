"""Random region graphs and sum-product circuits over Gaussian leaves.

A :class:`Circuit` is a DAG stored in flat arrays (CSR child lists), so the
same object serves hand-built toy circuits and RAT-SPNs with ~10^5 nodes.
Evaluation runs level by level in log space with numpy reductions; a level
holds nodes whose children all live on lower levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from . import tensorio

LEAF, PRODUCT, SUM = 0, 1, 2
KIND_NAMES = {LEAF: "leaf", PRODUCT: "product", SUM: "sum"}
MARGINALIZED = float("nan")
VARIANCE_FLOOR = 1e-4
CIRCUIT_MAGIC = b"RSPN"
_LOG_2PI = math.log(2.0 * math.pi)


class CircuitError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, node: int, what: str = "value"):
        self.node = node
        super().__init__(f"non-finite {what} at node {node}")


# --- region graphs ----------------------------------------------------------


@dataclass
class RegionGraph:
    """Regions (variable scopes) linked by binary partitions.

    Region 0 is the root and is shared by all replicas; every other region
    belongs to exactly one replica.  ``partitions[i] = (parent, (left,
    right))`` with region indices.
    """

    num_vars: int
    depth: int
    replicas: int
    seed: int
    scopes: list[tuple[int, ...]] = field(default_factory=list)
    region_depth: list[int] = field(default_factory=list)
    partitions: list[tuple[int, tuple[int, int]]] = field(default_factory=list)

    def children_of(self, region: int) -> list[tuple[int, int]]:
        return [ch for parent, ch in self.partitions if parent == region]

    @property
    def leaf_regions(self) -> list[int]:
        parents = {p for p, _ in self.partitions}
        return [r for r in range(len(self.scopes)) if r not in parents]


def build_region_graph(num_vars: int, depth: int, replicas: int = 1, seed: int = 0) -> RegionGraph:
    """Random balanced binary splits of ``range(num_vars)``, ``depth`` levels deep."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if num_vars < 1 or 2**depth > num_vars:
        raise ValueError(f"depth {depth} too large for {num_vars} variables")
    rng = np.random.default_rng(seed)
    rg = RegionGraph(num_vars, depth, replicas, seed)
    rg.scopes.append(tuple(range(num_vars)))
    rg.region_depth.append(0)
    if depth == 0:
        return rg
    for _ in range(replicas):
        frontier = [0]
        for level in range(1, depth + 1):
            nxt = []
            for region in frontier:
                perm = rng.permutation(np.array(rg.scopes[region]))
                half = len(perm) // 2
                kids = []
                for part in (perm[:half], perm[half:]):
                    rg.scopes.append(tuple(sorted(int(v) for v in part)))
                    rg.region_depth.append(level)
                    kids.append(len(rg.scopes) - 1)
                rg.partitions.append((region, (kids[0], kids[1])))
                nxt += kids
            frontier = nxt
    return rg


# --- circuit ----------------------------------------------------------------


def standardization_stats(data) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std; constant dimensions get std 1."""
    data = np.asarray(data, dtype=np.float64)
    std = data.std(axis=0)
    return data.mean(axis=0), np.where(std > 0, std, 1.0)


@dataclass
class _Level:
    nodes: np.ndarray
    edges: np.ndarray  # edge positions, grouped by node in ``nodes`` order
    starts: np.ndarray  # segment starts into ``edges``
    seg: np.ndarray  # for each edge in ``edges``, its position within ``nodes``
    is_sum: bool
    scatter: sparse.csr_matrix | None = None
    scatter_targets: np.ndarray | None = None


class Circuit:
    """Sum/product/leaf DAG with univariate Gaussian leaves.

    Arrays (``n`` nodes, ``E`` edges):

    * ``kind[n]`` -- LEAF, PRODUCT or SUM
    * ``child_ptr[n+1]``, ``child_idx[E]`` -- CSR child lists
    * ``log_weights[E]`` -- sum-edge log-weights (0 on product edges)
    * ``leaf_var/leaf_mean/leaf_variance[n]`` -- leaf parameters (-1/0/1
      for internal nodes)
    * ``roots`` -- root nodes, combined as a uniform mixture
    """

    def __init__(
        self,
        kind,
        child_ptr,
        child_idx,
        log_weights,
        leaf_var,
        leaf_mean,
        leaf_variance,
        roots,
        num_vars: int,
        meta: dict | None = None,
        standardization: tuple[np.ndarray, np.ndarray] | None = None,
    ):
        self.kind = np.asarray(kind, dtype=np.int8)
        self.child_ptr = np.asarray(child_ptr, dtype=np.int64)
        self.child_idx = np.asarray(child_idx, dtype=np.int64)
        self.log_weights = np.asarray(log_weights, dtype=np.float64)
        self.leaf_var = np.asarray(leaf_var, dtype=np.int64)
        self.leaf_mean = np.asarray(leaf_mean, dtype=np.float64)
        self.leaf_variance = np.asarray(leaf_variance, dtype=np.float64)
        self.roots = np.atleast_1d(np.asarray(roots, dtype=np.int64))
        self.num_vars = int(num_vars)
        self.meta = dict(meta or {})
        self.standardization = standardization
        n = len(self.kind)
        if len(self.child_ptr) != n + 1 or self.child_ptr[-1] != len(self.child_idx):
            raise CircuitError("child_ptr does not match child_idx")
        if len(self.log_weights) != len(self.child_idx):
            raise CircuitError("log_weights must align with child_idx")
        for name in ("leaf_var", "leaf_mean", "leaf_variance"):
            if len(getattr(self, name)) != n:
                raise CircuitError(f"{name} must have one entry per node")
        if len(self.child_idx) and (self.child_idx.min() < 0 or self.child_idx.max() >= n):
            raise CircuitError("child index out of range")
        if len(self.roots) == 0 or self.roots.min() < 0 or self.roots.max() >= n:
            raise CircuitError("invalid roots")

    # basic structure ----------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.kind)

    @property
    def num_edges(self) -> int:
        return len(self.child_idx)

    def children(self, node: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[node] : self.child_ptr[node + 1]]

    def edge_parent(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nodes), np.diff(self.child_ptr))

    @cached_property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.kind == LEAF)

    @cached_property
    def sum_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.kind == SUM)

    @cached_property
    def sum_edges(self) -> np.ndarray:
        return np.flatnonzero(self.kind[self.edge_parent()] == SUM)

    def copy(self) -> "Circuit":
        """Copy with independent parameters (structure arrays are shared)."""
        c = Circuit(
            self.kind,
            self.child_ptr,
            self.child_idx,
            self.log_weights.copy(),
            self.leaf_var,
            self.leaf_mean.copy(),
            self.leaf_variance.copy(),
            self.roots,
            self.num_vars,
            self.meta,
            None if self.standardization is None else tuple(a.copy() for a in self.standardization),
        )
        if "_plan" in self.__dict__:
            c.__dict__["_plan"] = self.__dict__["_plan"]
        return c

    def node_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.kind == k)) for k, name in KIND_NAMES.items()}

    def normalize_weights(self) -> None:
        """Renormalise every sum node's log-weights to log-sum-exp 0."""
        se = self.sum_edges
        if len(se) == 0:
            return
        parent = self.edge_parent()[se]
        order = np.argsort(parent, kind="stable")
        se, parent = se[order], parent[order]
        starts = np.flatnonzero(np.r_[True, parent[1:] != parent[:-1]])
        lw = self.log_weights[se]
        m = np.maximum.reduceat(lw, starts)
        seg = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(se)]))
        norm = m + np.log(np.add.reduceat(np.exp(lw - m[seg]), starts))
        self.log_weights[se] = lw - norm[seg]

    # standardisation ----------------------------------------------------

    def set_standardization(self, data) -> None:
        """Store per-dimension mean/std of ``data`` for :meth:`standardize`."""
        self.standardization = standardization_stats(data)

    def standardize(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.standardization is None:
            return z
        mean, std = self.standardization
        return (z - mean) / std

    # evaluation plan ----------------------------------------------------

    @cached_property
    def _plan(self) -> list[_Level]:
        n = self.num_nodes
        counts = np.diff(self.child_ptr)
        internal = np.flatnonzero(self.kind != LEAF)
        if np.any(counts[internal] == 0):
            bad = int(internal[counts[internal] == 0][0])
            raise CircuitError(f"internal node {bad} has no children")
        # level = 1 + max child level, relaxed until every node is resolved
        level = np.where(self.kind == LEAF, 0, -1).astype(np.int64)
        starts_all = self.child_ptr[internal]
        pending = np.ones(len(internal), dtype=bool)
        while pending.any():
            cl = level[self.child_idx]
            lo = np.minimum.reduceat(cl, starts_all) if len(cl) else np.zeros(0, np.int64)
            hi = np.maximum.reduceat(cl, starts_all) if len(cl) else np.zeros(0, np.int64)
            resolved = pending & (lo >= 0)
            if not resolved.any():
                raise CircuitError("circuit graph contains a cycle")
            level[internal[resolved]] = hi[resolved] + 1
            pending &= ~resolved
        plan = []
        for lv in range(1, int(level.max()) + 1 if n else 1):
            at = np.flatnonzero(level == lv)
            for kind in (PRODUCT, SUM):
                nodes = at[self.kind[at] == kind]
                if len(nodes) == 0:
                    continue
                sizes = counts[nodes]
                offsets = np.r_[0, np.cumsum(sizes)[:-1]]
                edges = np.repeat(self.child_ptr[nodes] - offsets, sizes) + np.arange(sizes.sum())
                seg = np.repeat(np.arange(len(nodes)), sizes)
                targets, inverse = np.unique(self.child_idx[edges], return_inverse=True)
                scatter = sparse.csr_matrix(
                    (np.ones(len(edges)), (np.arange(len(edges)), inverse)), shape=(len(edges), len(targets))
                )
                plan.append(_Level(nodes, edges, offsets, seg, kind == SUM, scatter, targets))
        return plan

    # inference ----------------------------------------------------------

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.num_vars:
            raise CircuitError(f"expected inputs with {self.num_vars} variables, got shape {x.shape}")
        return x

    def leaf_log_density(self, x: np.ndarray) -> np.ndarray:
        """(B, n_leaves) Gaussian log-pdfs; NaN inputs are marginalised to 0."""
        lv = self.leaves
        v = x[:, self.leaf_var[lv]]
        var = self.leaf_variance[lv]
        out = -0.5 * (_LOG_2PI + np.log(var) + (v - self.leaf_mean[lv]) ** 2 / var)
        return np.where(np.isnan(v), 0.0, out)

    def node_log_values(self, x) -> np.ndarray:
        """Bottom-up log value of every node, shape (B, n)."""
        x = self._check_input(x)
        vals = np.zeros((x.shape[0], self.num_nodes))
        vals[:, self.leaves] = self.leaf_log_density(x)
        for lvl in self._plan:
            g = vals[:, self.child_idx[lvl.edges]]
            if lvl.is_sum:
                g = g + self.log_weights[lvl.edges]
                m = np.maximum.reduceat(g, lvl.starts, axis=1)
                m_safe = np.where(np.isfinite(m), m, 0.0)
                s = np.add.reduceat(np.exp(g - m_safe[:, lvl.seg]), lvl.starts, axis=1)
                with np.errstate(divide="ignore"):
                    vals[:, lvl.nodes] = m_safe + np.log(s)
            else:
                vals[:, lvl.nodes] = np.add.reduceat(g, lvl.starts, axis=1)
        return vals

    def root_log_values(self, vals: np.ndarray) -> np.ndarray:
        return logsumexp(vals[:, self.roots], axis=1) - math.log(len(self.roots))

    def log_likelihood(self, x, batch_size: int = 512) -> np.ndarray:
        """Per-sample log density (uniform mixture over the roots)."""
        x = self._check_input(x)
        out = np.empty(len(x))
        for s in range(0, len(x), batch_size):
            out[s : s + batch_size] = self.root_log_values(self.node_log_values(x[s : s + batch_size]))
        return out

    def marginal_log_likelihood(self, evidence) -> np.ndarray | float:
        """Log density of the observed entries; NaN (``MARGINALIZED``) entries are integrated out."""
        ev = np.asarray(evidence, dtype=np.float64)
        single = ev.ndim == 1
        ll = self.log_likelihood(ev)
        return float(ll[0]) if single else ll

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Ancestral samples, shape (n, num_vars)."""
        out = np.full((n, self.num_vars), np.nan)
        active = np.zeros((self.num_nodes, n), dtype=bool)
        root_pick = rng.integers(0, len(self.roots), size=n)
        for i, r in enumerate(self.roots):
            active[r] |= root_pick == i
        for lvl in reversed(self._plan):
            for node in lvl.nodes:
                who = active[node]
                if not who.any():
                    continue
                kids = self.children(node)
                if lvl.is_sum:
                    lo, hi = self.child_ptr[node], self.child_ptr[node + 1]
                    p = np.exp(self.log_weights[lo:hi])
                    pick = rng.choice(len(kids), size=int(who.sum()), p=p / p.sum())
                    idx = np.flatnonzero(who)
                    for j, child in enumerate(kids):
                        active[child, idx[pick == j]] = True
                else:
                    for child in kids:
                        active[child] |= who
        for leaf in self.leaves:
            who = np.flatnonzero(active[leaf])
            if len(who):
                out[who, self.leaf_var[leaf]] = rng.normal(
                    self.leaf_mean[leaf], math.sqrt(self.leaf_variance[leaf]), size=len(who)
                )
        return out

    def mean(self) -> np.ndarray:
        """Analytic mean vector, propagated through weights from leaf means."""
        node_mean = np.zeros((self.num_nodes, self.num_vars))
        node_mean[self.leaves, self.leaf_var[self.leaves]] = self.leaf_mean[self.leaves]
        for lvl in self._plan:
            for node in lvl.nodes:
                lo, hi = self.child_ptr[node], self.child_ptr[node + 1]
                kids = self.child_idx[lo:hi]
                if lvl.is_sum:
                    node_mean[node] = np.exp(self.log_weights[lo:hi]) @ node_mean[kids]
                else:
                    node_mean[node] = node_mean[kids].sum(axis=0)
        return node_mean[self.roots].mean(axis=0)

    # scopes & validation --------------------------------------------------

    def scopes(self) -> list[int]:
        """Scope of every node as an int bitmask over variables."""
        scope = [0] * self.num_nodes
        for leaf in self.leaves:
            scope[leaf] = 1 << int(self.leaf_var[leaf])
        for lvl in self._plan:
            for node in lvl.nodes:
                acc = 0
                for c in self.children(node):
                    acc |= scope[c]
                scope[node] = acc
        return scope


@dataclass
class Violation:
    kind: str
    node: int
    detail: str


@dataclass
class StructureReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]

    def __str__(self):
        if self.ok:
            return "structure ok"
        return "\n".join(f"{v.kind} at node {v.node}: {v.detail}" for v in self.violations)


def validate_structure(c: Circuit, tol: float = 1e-9) -> StructureReport:
    """Check acyclicity, smoothness, decomposability, weights and root scopes."""
    report = StructureReport()
    try:
        c._plan
    except CircuitError as err:
        kind = "cycle" if "cycle" in str(err) else "structure"
        report.violations.append(Violation(kind, -1, str(err)))
        return report

    for leaf in c.leaves:
        var = int(c.leaf_var[leaf])
        if not 0 <= var < c.num_vars:
            report.violations.append(Violation("leaf", int(leaf), f"variable {var} out of range"))
        if not c.leaf_variance[leaf] >= VARIANCE_FLOOR:
            report.violations.append(Violation("leaf", int(leaf), f"variance {c.leaf_variance[leaf]} below floor"))
    if report.violations:
        return report

    scope = c.scopes()
    for node in range(c.num_nodes):
        kids = c.children(node)
        if c.kind[node] == SUM:
            mismatched = [int(k) for k in kids if scope[k] != scope[node]]
            if mismatched:
                report.violations.append(
                    Violation("smoothness", node, f"children {mismatched} differ from the sum node's scope")
                )
            lo, hi = c.child_ptr[node], c.child_ptr[node + 1]
            total = logsumexp(c.log_weights[lo:hi])
            if not abs(total) <= tol:
                report.violations.append(Violation("weights", node, f"log-sum-exp of weights is {total:.3g}"))
        elif c.kind[node] == PRODUCT:
            seen = 0
            for k in kids:
                if seen & scope[k]:
                    report.violations.append(Violation("decomposability", node, f"child {int(k)} overlaps siblings"))
                    break
                seen |= scope[k]
    full = (1 << c.num_vars) - 1
    for r in c.roots:
        if scope[r] != full:
            report.violations.append(Violation("root_scope", int(r), "root scope is not the full variable set"))
    return report


# --- construction -----------------------------------------------------------


class CircuitBuilder:
    """Incremental construction of small circuits by hand."""

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self._kind: list[int] = []
        self._children: list[list[int]] = []
        self._weights: list[list[float]] = []
        self._leaf: list[tuple[int, float, float]] = []

    def _add(self, kind, children, weights, leaf):
        self._kind.append(kind)
        self._children.append(list(children))
        self._weights.append(list(weights))
        self._leaf.append(leaf)
        return len(self._kind) - 1

    def leaf(self, var: int, mean: float = 0.0, variance: float = 1.0) -> int:
        return self._add(LEAF, [], [], (var, mean, variance))

    def product(self, children) -> int:
        return self._add(PRODUCT, children, [0.0] * len(children), (-1, 0.0, 1.0))

    def sum(self, children, weights=None) -> int:
        k = len(children)
        w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return self._add(SUM, children, np.log(w), (-1, 0.0, 1.0))

    def build(self, roots) -> Circuit:
        sizes = [len(c) for c in self._children]
        return Circuit(
            self._kind,
            np.r_[0, np.cumsum(sizes)],
            [c for ch in self._children for c in ch],
            [w for ws in self._weights for w in ws],
            [lf[0] for lf in self._leaf],
            [lf[1] for lf in self._leaf],
            [lf[2] for lf in self._leaf],
            np.atleast_1d(roots),
            self.num_vars,
        )


def materialize(
    rg: RegionGraph,
    num_roots: int = 1,
    num_sums: int | None = None,
    num_inputs: int = 2,
    leaf_init=None,
    seed: int | None = None,
) -> Circuit:
    """Expand a region graph into a RAT-SPN circuit.

    Leaf regions get ``num_inputs`` factorised Gaussians (a product of one
    univariate leaf per scope variable); inner regions get ``num_sums`` sum
    nodes (default ``num_inputs``) and the root region ``num_roots``.  Each
    partition contributes the cross product of its two child regions' nodes.

    ``leaf_init`` optionally supplies training data: each factorised input
    is then centred on a random training row and given the per-dimension
    data variance.  Otherwise leaves start at N(0, 1) means with unit
    variance.  Sum weights are uniform-random, then normalised.
    """
    num_sums = num_inputs if num_sums is None else num_sums
    if min(num_roots, num_sums, num_inputs) < 1:
        raise ValueError("C, S and I must all be >= 1")
    seed = rg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    data = None
    if leaf_init is not None:
        data = np.asarray(leaf_init, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != rg.num_vars or len(data) == 0:
            raise ValueError("leaf_init must be a nonempty (n, num_vars) array")
        data_var = np.maximum(data.var(axis=0), VARIANCE_FLOOR)

    kind: list[np.ndarray] = []
    children: list[np.ndarray] = []  # per node child arrays, built in chunks
    leaf_var: list[np.ndarray] = []
    leaf_mean: list[np.ndarray] = []
    leaf_variance: list[np.ndarray] = []
    n_total = 0

    def emit(kinds, kids, lvar, lmean, lvariance):
        nonlocal n_total
        kind.append(kinds)
        children.extend(kids)
        leaf_var.append(lvar)
        leaf_mean.append(lmean)
        leaf_variance.append(lvariance)
        first = n_total
        n_total += len(kinds)
        return np.arange(first, n_total)

    def internal(count, kids, k):
        return emit(
            np.full(count, k, dtype=np.int8), kids, np.full(count, -1), np.zeros(count), np.ones(count)
        )

    region_nodes: dict[int, np.ndarray] = {}
    leaf_regions = set(rg.leaf_regions)
    order = sorted(range(len(rg.scopes)), key=lambda r: -rg.region_depth[r])
    for region in order:
        scope = np.array(rg.scopes[region])
        if region in leaf_regions:
            d = len(scope)
            lvar = np.tile(scope, num_inputs)
            if data is not None:
                rows = rng.integers(0, len(data), size=num_inputs)
                lmean = data[np.repeat(rows, d), lvar]
                lvariance = data_var[lvar].copy()
            else:
                lmean = rng.standard_normal(num_inputs * d)
                lvariance = np.ones(num_inputs * d)
            leaves = emit(np.zeros(num_inputs * d, dtype=np.int8), [np.empty(0, np.int64)] * (num_inputs * d),
                          lvar, lmean, lvariance)
            region_nodes[region] = internal(num_inputs, list(leaves.reshape(num_inputs, d)), PRODUCT)
            if region != 0:
                continue
            products = region_nodes[region]
        else:
            prods = []
            for left, right in rg.children_of(region):
                a, b = region_nodes[left], region_nodes[right]
                pairs = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2)
                prods.append(internal(len(pairs), list(pairs), PRODUCT))
            products = np.concatenate(prods)
        count = num_roots if region == 0 else num_sums
        region_nodes[region] = internal(count, [products] * count, SUM)

    kind_arr = np.concatenate(kind)
    sizes = np.fromiter((len(c) for c in children), dtype=np.int64, count=len(children))
    child_idx = np.concatenate(children).astype(np.int64) if len(children) else np.zeros(0, np.int64)
    child_ptr = np.r_[0, np.cumsum(sizes)]
    parent_kind = np.repeat(kind_arr, sizes)
    log_w = np.where(parent_kind == SUM, np.log(rng.uniform(0.01, 1.0, size=len(child_idx))), 0.0)
    meta = {
        "num_vars": rg.num_vars,
        "depth": rg.depth,
        "replicas": rg.replicas,
        "num_roots": num_roots,
        "num_sums": num_sums,
        "num_inputs": num_inputs,
        "seed": rg.seed,
    }
    c = Circuit(
        kind_arr,
        child_ptr,
        child_idx,
        log_w,
        np.concatenate(leaf_var),
        np.concatenate(leaf_mean),
        np.concatenate(leaf_variance),
        region_nodes[0],
        rg.num_vars,
        meta,
    )
    c.normalize_weights()
    return c


def rat_spn(
    num_vars: int,
    depth: int = 1,
    replicas: int = 50,
    num_inputs: int = 45,
    num_roots: int = 1,
    num_sums: int | None = None,
    seed: int = 0,
    leaf_init=None,
) -> Circuit:
    """Region graph plus materialisation in one call."""
    rg = build_region_graph(num_vars, depth, replicas, seed)
    return materialize(rg, num_roots, num_sums, num_inputs, leaf_init=leaf_init, seed=seed)


# --- persistence ------------------------------------------------------------


def save_circuit(c: Circuit, path) -> None:
    header = {"format": "circuit", "version": 1, "num_vars": c.num_vars, "num_nodes": c.num_nodes}
    for key in ("depth", "replicas", "num_roots", "num_sums", "num_inputs", "seed"):
        if key in c.meta:
            header[key] = c.meta[key]
    if c.standardization is not None:
        header["standardize_mean"] = [float(v) for v in c.standardization[0]]
        header["standardize_std"] = [float(v) for v in c.standardization[1]]
    records = {
        "kind": c.kind.astype(np.float64),
        "child_ptr": c.child_ptr.astype(np.float64),
        "child_idx": c.child_idx.astype(np.float64),
        "log_weights": c.log_weights,
        "leaf_var": c.leaf_var.astype(np.float64),
        "leaf_mean": c.leaf_mean,
        "leaf_variance": c.leaf_variance,
        "roots": c.roots.astype(np.float64),
    }
    tensorio.write_records(path, CIRCUIT_MAGIC, header, records)


def load_circuit(path) -> Circuit:
    header, rec = tensorio.read_records(path, CIRCUIT_MAGIC)
    if header.get("format") != "circuit" or header.get("version") != "1":
        raise tensorio.FormatError(f"{path}: not a version-1 circuit file")
    meta = {k: int(header[k]) for k in ("depth", "replicas", "num_roots", "num_sums", "num_inputs", "seed") if k in header}
    std = None
    if "standardize_mean" in header:
        std = (
            np.array([float(v) for v in header["standardize_mean"].split(",")]),
            np.array([float(v) for v in header["standardize_std"].split(",")]),
        )
    num_vars = int(header["num_vars"])
    meta["num_vars"] = num_vars
    return Circuit(
        rec["kind"].astype(np.int8),
        rec["child_ptr"].astype(np.int64),
        rec["child_idx"].astype(np.int64),
        rec["log_weights"],
        rec["leaf_var"].astype(np.int64),
        rec["leaf_mean"],
        rec["leaf_variance"],
        rec["roots"].astype(np.int64),
        num_vars,
        meta,
        std,
    )
