"""Block scoring, stochastic selection bias and top-k block selection.

Scores follow the covariance-aware rule

    s[i, j] = scale * Qbar_i . Kbar_j + log(||H_j - H_global||_F + eps)

where ``Qbar_i`` is the centroid of query block ``i``. The outer row softmax of
the original formulation is dropped: it is monotone per row and only the
ranking reaches top-k.

The bias is ``beta * std(row_i) * g[i, j]`` with ``g`` standard Gumbel noise from
a Philox stream keyed on ``(seed, timestep, layer, head, i)``; column ``j`` is the
``j``-th draw of that stream, so every entry is a pure function of the context
and its indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blockstats import DEFAULT_EPSILON, BlockPartition, BlockStatistics
from .numerics import as_matrix

_U64 = (1 << 64) - 1
DEFAULT_BIAS_BETA = 0.1


@dataclass(frozen=True)
class RoutingContext:
    seed: int = 0
    timestep: int = 0
    layer: int = 0
    head: int = 0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.seed, self.timestep, self.layer, self.head)


@dataclass(frozen=True)
class RoutingConfig:
    epsilon: float = DEFAULT_EPSILON
    bias_beta: float = DEFAULT_BIAS_BETA
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.bias_beta >= 0:
            raise ValueError("bias_beta must be >= 0")


@dataclass
class RoutingPlan:
    selected: np.ndarray  # (num_query_blocks, k_used) sorted block indices
    scores: np.ndarray
    biased_scores: np.ndarray
    k_used: int
    rng_context: tuple = field(default=(0, 0, 0, 0))

    @property
    def num_query_blocks(self) -> int:
        return self.scores.shape[0]

    @property
    def num_blocks(self) -> int:
        return self.scores.shape[1]

    def selected_mask(self) -> np.ndarray:
        mask = np.zeros(self.scores.shape, dtype=bool)
        rows = np.repeat(np.arange(self.num_query_blocks), self.k_used)
        mask[rows, self.selected.reshape(-1)] = True
        return mask

    def selected_sets(self) -> list[tuple[int, ...]]:
        return [tuple(int(j) for j in row) for row in self.selected]


def _mix_key(ctx) -> list[int]:
    return [int(v) & _U64 for v in ctx]


def gumbel_row(ctx, row: int, n: int) -> np.ndarray:
    """``n`` standard Gumbel draws for score row ``row`` under context ``ctx``."""
    ss = np.random.SeedSequence(_mix_key(tuple(ctx) + (row,)))
    return np.random.Generator(np.random.Philox(ss)).gumbel(size=n)


def gumbel_matrix(ctx, shape: tuple[int, int]) -> np.ndarray:
    return np.stack([gumbel_row(ctx, i, shape[1]) for i in range(shape[0])])


def query_block_centroids(Q, part: BlockPartition) -> np.ndarray:
    return part.blocked(as_matrix(Q, "Q")).mean(axis=1)


def block_scores(Q, part: BlockPartition, stats: BlockStatistics, cfg: RoutingConfig, scale: float) -> np.ndarray:
    if stats.num_blocks != part.num_blocks:
        raise ValueError("statistics and partition disagree on the number of blocks")
    qbar = query_block_centroids(Q, part)
    return scale * (qbar @ stats.centroids.T) + np.log(stats.het_norms + cfg.epsilon)


def apply_bias(scores, cfg: RoutingConfig, ctx) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if cfg.bias_beta == 0:
        return scores.copy()
    if isinstance(ctx, RoutingContext):
        ctx = ctx.as_tuple()
    sigma = scores.std(axis=1, keepdims=True)
    return scores + cfg.bias_beta * sigma * gumbel_matrix(ctx, scores.shape)


def topk_indices(biased, k: int) -> np.ndarray:
    """Sorted top-k column indices per row; ties go to the lower index."""
    biased = np.asarray(biased, dtype=np.float64)
    if k < 0:
        raise ValueError("k must be >= 0")
    k = min(k, biased.shape[1])
    # stable sort on the negated scores keeps lower indices first among equals
    order = np.argsort(-biased, axis=1, kind="stable")[:, :k]
    return np.sort(order, axis=1)


def select_topk(biased, k: int, scores=None, rng_context=(0, 0, 0, 0)) -> RoutingPlan:
    biased = np.asarray(biased, dtype=np.float64)
    sel = topk_indices(biased, k)
    return RoutingPlan(
        selected=sel,
        scores=biased if scores is None else np.asarray(scores, dtype=np.float64),
        biased_scores=biased,
        k_used=sel.shape[1],
        rng_context=tuple(rng_context),
    )


def density_to_k(rho_t: float, num_blocks: int) -> int:
    if rho_t < 0:
        raise ValueError("density must be >= 0")
    k = int(math.floor(rho_t * num_blocks + 0.5))
    return max(1, min(num_blocks, k))


def route(Q, stats: BlockStatistics, cfg: RoutingConfig, k: int, scale: float, ctx=None) -> RoutingPlan:
    """Score, perturb and select in one call; ``ctx`` defaults to ``(cfg.seed, 0, 0, 0)``."""
    if ctx is None:
        ctx = RoutingContext(cfg.seed)
    if isinstance(ctx, RoutingContext):
        ctx = ctx.as_tuple()
    scores = block_scores(Q, stats.partition, stats, cfg, scale)
    biased = apply_bias(scores, cfg, ctx)
    return select_topk(biased, k, scores=scores, rng_context=ctx)


def full_plan(num_query_blocks: int, num_blocks: int) -> RoutingPlan:
    z = np.zeros((num_query_blocks, num_blocks))
    return select_topk(z, num_blocks)


def plan_from_sets(sets, num_blocks: int) -> RoutingPlan:
    """Build a plan from explicit equal-length selected sets (tests and replays)."""
    sel = np.array([sorted(s) for s in sets], dtype=np.int64).reshape(len(sets), -1)
    if sel.size and (sel.min() < 0 or sel.max() >= num_blocks):
        raise ValueError("selected block index out of range")
    for row in sel:
        if len(set(row.tolist())) != len(row):
            raise ValueError("selected sets must be duplicate-free")
    z = np.zeros((len(sets), num_blocks))
    return RoutingPlan(selected=sel, scores=z, biased_scores=z, k_used=sel.shape[1])
