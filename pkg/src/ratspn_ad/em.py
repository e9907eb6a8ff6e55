"""(Stochastic) expectation-maximisation for circuit parameters.

The E-step is one bottom-up pass plus one top-down pass that propagates
each node's share of the sample's probability mass,
``d log p(z) / d log node(z)``.  Sum-edge expected counts and leaf moment
sums are then enough for closed-form M-step updates.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .circuit import VARIANCE_FLOOR, Circuit, NonFiniteError, rat_spn, standardization_stats

logger = logging.getLogger(__name__)

WEIGHT_SMOOTHING = 1e-8


class EmDivergedError(FloatingPointError):
    pass


@dataclass
class EmAccumulators:
    edge_counts: np.ndarray  # (E,), only sum edges are meaningful
    leaf_resp: np.ndarray  # (n_leaves,) in circuit.leaves order
    leaf_sum_x: np.ndarray
    leaf_sum_xx: np.ndarray
    n_samples: int = 0

    @classmethod
    def zeros(cls, c: Circuit) -> "EmAccumulators":
        nl = len(c.leaves)
        return cls(np.zeros(c.num_edges), np.zeros(nl), np.zeros(nl), np.zeros(nl), 0)

    def __iadd__(self, other: "EmAccumulators"):
        self.edge_counts += other.edge_counts
        self.leaf_resp += other.leaf_resp
        self.leaf_sum_x += other.leaf_sum_x
        self.leaf_sum_xx += other.leaf_sum_xx
        self.n_samples += other.n_samples
        return self


@dataclass
class EmConfig:
    epochs: int = 50
    batch_size: int = 64
    step_size: float = 1e-4
    seed: int = 0
    mode: str = "stochastic"

    def __post_init__(self):
        if self.mode not in ("stochastic", "full_batch"):
            raise ValueError(f"unknown EM mode {self.mode!r}")
        if self.mode == "full_batch":
            self.step_size = 1.0
        if not 0.0 <= self.step_size <= 1.0:
            raise ValueError("step_size must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def node_responsibilities(c: Circuit, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-down pass.

    Returns ``(vals, resp, edge_post)``: bottom-up log values (B, n), node
    responsibilities (B, n) and per-edge posterior mass (B, E) for sum edges.
    """
    vals = c.node_log_values(x)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise NonFiniteError(int(np.flatnonzero(bad.any(axis=0))[0]))
    b = vals.shape[0]
    resp = np.zeros_like(vals)
    root_vals = vals[:, c.roots]
    root_ll = c.root_log_values(vals)
    resp[:, c.roots] += np.exp(root_vals - root_ll[:, None] - math.log(len(c.roots)))
    edge_post = np.zeros((b, c.num_edges))
    for lvl in reversed(c._plan):
        parent_resp = resp[:, lvl.nodes][:, lvl.seg]
        if lvl.is_sum:
            parents = lvl.nodes[lvl.seg]
            kids = c.child_idx[lvl.edges]
            contrib = parent_resp * np.exp(c.log_weights[lvl.edges] + vals[:, kids] - vals[:, parents])
            edge_post[:, lvl.edges] = contrib
        else:
            contrib = parent_resp
        resp[:, lvl.scatter_targets] += np.asarray(lvl.scatter.T.dot(contrib.T).T)
    return vals, resp, edge_post


def e_step(c: Circuit, batch, chunk: int = 256) -> EmAccumulators:
    """Expected sufficient statistics of ``batch`` under the current parameters."""
    x = c._check_input(batch)
    if len(x) == 0:
        raise ValueError("empty batch")
    acc = EmAccumulators.zeros(c)
    leaves = c.leaves
    for s in range(0, len(x), chunk):
        xb = x[s : s + chunk]
        _, resp, edge_post = node_responsibilities(c, xb)
        r = resp[:, leaves]
        xv = xb[:, c.leaf_var[leaves]]
        acc += EmAccumulators(
            edge_post.sum(axis=0), r.sum(axis=0), (r * xv).sum(axis=0), (r * xv * xv).sum(axis=0), len(xb)
        )
    return acc


def m_step(c: Circuit, acc: EmAccumulators, step_size: float = 1.0) -> Circuit:
    """Blend the closed-form EM solution into the parameters (in place).

    ``new = (1 - step_size) * old + step_size * candidate`` for sum weights
    (in the probability domain, then renormalised) and for leaf means and
    variances.  Leaves that received no responsibility keep their values.
    """
    if acc.n_samples < 1:
        raise ValueError("accumulators hold no samples")
    if not 0.0 <= step_size <= 1.0:
        raise ValueError("step_size must lie in [0, 1]")
    if step_size == 0.0:
        return c

    se = c.sum_edges
    parent = c.edge_parent()[se]
    counts = acc.edge_counts[se] + WEIGHT_SMOOTHING
    totals = np.zeros(c.num_nodes)
    np.add.at(totals, parent, counts)
    cand = counts / totals[parent]
    old = np.exp(c.log_weights[se])
    new = (1.0 - step_size) * old + step_size * cand
    c.log_weights[se] = np.log(new)
    c.normalize_weights()

    leaves = c.leaves
    r = acc.leaf_resp
    alive = r > 0
    safe = np.where(alive, r, 1.0)
    mean = acc.leaf_sum_x / safe
    var = np.maximum(acc.leaf_sum_xx / safe - mean**2, VARIANCE_FLOOR)
    old_mean, old_var = c.leaf_mean[leaves], c.leaf_variance[leaves]
    c.leaf_mean[leaves] = np.where(alive, (1.0 - step_size) * old_mean + step_size * mean, old_mean)
    c.leaf_variance[leaves] = np.where(
        alive, np.maximum((1.0 - step_size) * old_var + step_size * var, VARIANCE_FLOOR), old_var
    )
    return c


@dataclass
class EmEpoch:
    epoch: int
    mean_train_ll: float
    mean_val_ll: float


def em_fit(c: Circuit, data, cfg: EmConfig | None = None, val=None) -> tuple[Circuit, list[EmEpoch]]:
    """Run EM for ``cfg.epochs`` epochs on a copy of ``c``.

    In ``full_batch`` mode each epoch is one exact EM iteration over all the
    data; in ``stochastic`` mode every shuffled mini-batch triggers an
    M-step with ``cfg.step_size``.  The trace holds the mean training (and
    validation) log-likelihood after each epoch.
    """
    cfg = cfg if cfg is not None else EmConfig()
    x = c._check_input(data)
    xv = c._check_input(val) if val is not None else None
    c = c.copy()
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.mode == "full_batch":
            m_step(c, e_step(c, x), 1.0)
        else:
            order = rng.permutation(len(x))
            for s in range(0, len(x), cfg.batch_size):
                m_step(c, e_step(c, x[order[s : s + cfg.batch_size]]), cfg.step_size)
        ll = float(np.mean(c.log_likelihood(x)))
        if not np.isfinite(ll):
            raise EmDivergedError(f"non-finite mean log-likelihood after epoch {epoch}")
        vll = float(np.mean(c.log_likelihood(xv))) if xv is not None and len(xv) else float("nan")
        trace.append(EmEpoch(epoch, ll, vll))
        logger.info("EM epoch %d: train LL %.6f val LL %.6f", epoch, ll, vll)
    return c, trace


def fit_rat_spn(
    data,
    depth: int = 1,
    replicas: int = 50,
    num_inputs: int = 45,
    num_roots: int = 1,
    num_sums: int | None = None,
    seed: int = 0,
    cfg: EmConfig | None = None,
    val=None,
) -> tuple[Circuit, list[EmEpoch]]:
    """Build a RAT-SPN over standardised ``data`` and train it with EM.

    The standardisation statistics of ``data`` are stored with the circuit,
    so the result scores raw feature vectors via ``standardize`` first.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("data must be a nonempty (n, d) array")
    mean, std = standardization_stats(x)
    xs = (x - mean) / std
    c = rat_spn(x.shape[1], depth, replicas, num_inputs, num_roots, num_sums, seed=seed, leaf_init=xs)
    c.standardization = (mean, std)
    xv = None if val is None else (np.asarray(val, dtype=np.float64) - mean) / std
    return em_fit(c, xs, cfg, xv)


def write_ll_trace_csv(path, trace: list[EmEpoch]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_train_ll", "mean_val_ll"])
        for row in trace:
            w.writerow([row.epoch, repr(row.mean_train_ll), repr(row.mean_val_ll)])
