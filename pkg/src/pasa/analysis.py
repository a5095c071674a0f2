"""Fidelity metrics, checks of the grouped-compensation error bounds, and
selection-count statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .blockstats import grouped_means_for
from .numerics import as_matrix, frobenius_norm

BOUND_TOL = 1e-9


def _fro(m: np.ndarray) -> np.ndarray:
    """Frobenius norms over the last two axes."""
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


@dataclass
class BoundCheck:
    residual_norm: float
    bound: float

    @property
    def satisfied(self) -> bool:
        return self.residual_norm <= self.bound + BOUND_TOL

    @property
    def margin(self) -> float:
        return self.bound - self.residual_norm

    def to_dict(self) -> dict:
        return {
            "residual_norm": self.residual_norm,
            "bound": self.bound,
            "satisfied": self.satisfied,
            "margin": self.margin,
        }


def lemma1_check(H, group_of, alphas, unselected) -> BoundCheck:
    """Weighted group residual against ``M_group * sum(alpha)``.

    ``R = sum_{j in U} alpha_j (H_j - Hbar_group(j))`` and ``M_group`` is the
    largest ``||H_j - Hbar_group(j)||_F`` over unselected blocks.
    """
    H = np.asarray(H, dtype=np.float64)
    group_of = np.asarray(group_of)
    alphas = np.asarray(alphas, dtype=np.float64)
    if np.any(alphas < 0):
        raise ValueError("weights must be non-negative")
    U = np.asarray(sorted(set(int(j) for j in unselected)), dtype=np.int64)
    if U.size == 0:
        return BoundCheck(0.0, 0.0)
    dev = H[U] - grouped_means_for(H, group_of)[group_of[U]]
    R = np.einsum("j,jab->ab", alphas[U], dev)
    M = float(np.max(_fro(dev)))
    return BoundCheck(frobenius_norm(R), M * float(np.sum(alphas[U])))


@dataclass
class Proposition1Result:
    lhs: np.ndarray  # per group: sum ||H_j - group mean||^2
    rhs: np.ndarray  # per group: sum ||H_j - global mean||^2

    @property
    def passed(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + BOUND_TOL))


def proposition1_check(H, group_of, H_global) -> Proposition1Result:
    H = np.asarray(H, dtype=np.float64)
    group_of = np.asarray(group_of)
    means = grouped_means_for(H, group_of)
    d_group = _fro(H - means[group_of]) ** 2
    d_global = _fro(H - np.asarray(H_global)) ** 2
    G = means.shape[0]
    lhs = np.array([d_group[group_of == g].sum() for g in range(G)])
    rhs = np.array([d_global[group_of == g].sum() for g in range(G)])
    return Proposition1Result(lhs, rhs)


def remark_violations(H, group_of, H_global) -> np.ndarray:
    """Blocks that sit farther from their group mean than from the global mean."""
    H = np.asarray(H, dtype=np.float64)
    group_of = np.asarray(group_of)
    to_group = _fro(H - grouped_means_for(H, group_of)[group_of])
    to_global = _fro(H - np.asarray(H_global))
    return np.flatnonzero(to_group > to_global)


def remark_counterexample_search(H, group_of, H_global) -> bool:
    return bool(remark_violations(H, group_of, H_global).size)


def search_remark_counterexample(num_draws: int = 1000, seed: int = 0, max_dim: int = 4, max_blocks: int = 16):
    """Random search; returns ``(found, draw_index)`` with ``draw_index=-1`` if none."""
    rng = np.random.default_rng(seed)
    for i in range(num_draws):
        d = int(rng.integers(1, max_dim + 1))
        nb = int(rng.integers(4, max_blocks + 1))
        gs = int(rng.integers(1, nb // 2 + 1))
        H = rng.standard_normal((nb, d, d))
        group_of = np.arange(nb) // gs
        if remark_counterexample_search(H, group_of, H.mean(axis=0)):
            return True, i
    return False, -1


@dataclass
class FidelityReport:
    rel_frobenius: float
    max_row_l2: float
    mode: str | None = None
    sparsity: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def fidelity(O_sparse, O_dense, mode=None, sparsity=None, seed=None) -> FidelityReport:
    O_sparse = as_matrix(O_sparse, "O_sparse")
    O_dense = as_matrix(O_dense, "O_dense")
    if O_sparse.shape != O_dense.shape:
        raise ValueError("outputs must have the same shape")
    ref = frobenius_norm(O_dense)
    if ref == 0:
        raise ValueError("dense output has zero norm")
    diff = O_sparse - O_dense
    return FidelityReport(
        rel_frobenius=frobenius_norm(diff) / ref,
        max_row_l2=float(np.max(np.sqrt(np.sum(diff * diff, axis=1)))),
        mode=getattr(mode, "value", mode),
        sparsity=sparsity,
        seed=seed,
    )


def count_entropy(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total == 0:
        return 0.0
    p = c[c > 0] / total
    return float(-np.sum(p * np.log(p)))


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class SelectionStats:
    counts: np.ndarray
    entropy: float
    jaccard: float | None

    @property
    def sorted_counts(self) -> np.ndarray:
        return np.sort(self.counts)[::-1]

    def to_dict(self) -> dict:
        return {
            "counts": [int(c) for c in self.counts],
            "sorted_counts": [int(c) for c in self.sorted_counts],
            "entropy": self.entropy,
            "max_entropy": math.log(len(self.counts)) if len(self.counts) else 0.0,
            "jaccard": self.jaccard,
        }


def selection_stats(plans) -> SelectionStats:
    """Selection counts, their entropy, and consecutive-plan Jaccard similarity.

    ``plans`` are taken in order; similarity is averaged over query blocks and
    consecutive pairs. With a single plan ``jaccard`` is ``None``.
    """
    plans = list(plans)
    if not plans:
        raise ValueError("need at least one plan")
    nb = plans[0].num_blocks
    if any(p.num_blocks != nb for p in plans):
        raise ValueError("plans disagree on the number of key blocks")
    counts = np.zeros(nb, dtype=np.int64)
    for p in plans:
        counts += p.selected_mask().sum(axis=0)
    sims = [
        jaccard(a, b)
        for prev, cur in zip(plans, plans[1:])
        for a, b in zip(prev.selected_sets(), cur.selected_sets())
    ]
    return SelectionStats(counts, count_entropy(counts), float(np.mean(sims)) if sims else None)
