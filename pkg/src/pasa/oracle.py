"""Ground-truth references.

``dense_attention`` is plain softmax attention. ``piecewise_reference`` evaluates
the piecewise numerator/denominator row by row without any max shifting and
sums every term list with ``math.fsum``, so it checks the streaming kernel's
rescaling logic rather than sharing it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blockstats import BlockStatistics
from .modes import CompensationMode
from .numerics import as_matrix, fsum_rows, matmul, stable_row_softmax
from .routing import RoutingPlan


class DegenerateNormalizationError(ValueError):
    """Raised when a row's softmax denominator is zero."""


@dataclass(frozen=True)
class AttentionInstance:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    scale: float | None = None

    def __post_init__(self):
        Q = as_matrix(self.Q, "Q")
        K = as_matrix(self.K, "K")
        V = as_matrix(self.V, "V")
        if not (Q.shape == K.shape and K.shape[0] == V.shape[0]):
            raise ValueError(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
        scale = 1.0 / math.sqrt(Q.shape[1]) if self.scale is None else float(self.scale)
        if not scale > 0:
            raise ValueError("scale must be > 0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "scale", scale)

    @property
    def seq_len(self) -> int:
        return self.Q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.Q.shape[1]

    def check_block_size(self, block_size: int) -> None:
        if self.seq_len % block_size:
            raise ValueError(
                f"sequence length {self.seq_len} is not a multiple of block size {block_size}"
            )


def dense_attention(inst: AttentionInstance) -> np.ndarray:
    logits = inst.scale * matmul(inst.Q, inst.K.T)
    return matmul(stable_row_softmax(logits), inst.V)


def correction_matrices(stats: BlockStatistics, mode: CompensationMode) -> np.ndarray:
    """Per-block first-order kernels ``C_j`` for a first-order mode, ``(N_B, d, d_v)``."""
    if mode is CompensationMode.FIRST_ORDER_GLOBAL:
        return np.broadcast_to(stats.H_global, stats.H.shape)
    if mode is CompensationMode.FIRST_ORDER_GROUPED:
        return stats.H_grouped[stats.group_of]
    if mode is CompensationMode.FIRST_ORDER_PER_BLOCK:
        return stats.H
    raise ValueError(f"{mode} has no first-order term")


def check_consistency(inst: AttentionInstance, plan: RoutingPlan, stats: BlockStatistics) -> None:
    part = stats.partition
    if part.seq_len != inst.seq_len:
        raise ValueError("statistics were computed for a different sequence length")
    if plan.num_blocks != part.num_blocks:
        raise ValueError("plan and statistics disagree on the number of key blocks")
    if plan.num_query_blocks != part.num_blocks:
        raise ValueError("plan must have one row per query block")
    if stats.centroids.shape[1] != inst.head_dim or stats.value_sums.shape[1] != inst.V.shape[1]:
        raise ValueError("statistics were computed for a different head dimension")


def piecewise_reference(
    inst: AttentionInstance, plan: RoutingPlan, mode, stats: BlockStatistics
) -> np.ndarray:
    mode = CompensationMode.parse(mode)
    check_consistency(inst, plan, stats)
    part = stats.partition
    B = part.block_size
    mask = plan.selected_mask()
    C = correction_matrices(stats, mode) if mode.first_order else None
    Kb = part.blocked(inst.K)
    Vb = part.blocked(inst.V)
    out = np.empty((inst.seq_len, inst.V.shape[1]))

    for t in range(inst.seq_len):
        q = inst.Q[t]
        sel = np.flatnonzero(mask[part.block_of(t)])
        unsel = np.flatnonzero(~mask[part.block_of(t)])

        keys = Kb[sel].reshape(-1, inst.head_dim)
        w = np.exp(inst.scale * (keys @ q))
        num_terms = [w[:, None] * Vb[sel].reshape(-1, inst.V.shape[1])]
        den_terms = [w]

        if mode.uses_unselected and unsel.size:
            alpha = np.exp(inst.scale * (stats.centroids[unsel] @ q))
            num_terms.append(alpha[:, None] * stats.value_sums[unsel])
            den_terms.append(B * alpha)
            if C is not None:
                corr = inst.scale * np.einsum("a,jab->jb", q, C[unsel])
                num_terms.append(alpha[:, None] * corr)

        den = math.fsum(np.concatenate(den_terms))
        if not den > 0 or not math.isfinite(den):
            raise DegenerateNormalizationError(f"row {t}: denominator is {den}")
        out[t] = fsum_rows(np.concatenate(num_terms, axis=0)) / den
    return out
