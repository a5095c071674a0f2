"""Streaming piecewise sparse attention.

Each query row keeps a running maximum ``m``, numerator ``N`` and denominator
``D``. Key blocks are visited in index order. A block in the row's selected set
contributes its ``B`` exact terms; any other block contributes one centroid
term ``alpha = exp(scale * q . Kbar_j - m)`` weighted by ``B`` in the
denominator and by ``value_sums[j] (+ scale * q @ C_j)`` in the numerator. On a
max increase the partial sums are rescaled by ``exp(m_old - m_new)``.

``C_j`` is ``H_global`` (PISA), the group mean ``H_grouped[g(j)]`` (PASA) or the
block's own ``H_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockstats import BlockStatistics
from .modes import ALL_MODES, CompensationMode
from .oracle import (
    AttentionInstance,
    DegenerateNormalizationError,
    check_consistency,
    correction_matrices,
)
from .routing import RoutingPlan

__all__ = [
    "ALL_MODES",
    "CompensationMode",
    "DegenerateNormalizationError",
    "EquivalenceReport",
    "denominator_first_order_residual",
    "piecewise_attention",
    "scaled_variant_equivalences",
]


def _rescale(m: np.ndarray, rows: np.ndarray, new_max: np.ndarray):
    m_old = m[rows]
    m_new = np.maximum(m_old, new_max)
    return m_new, np.exp(m_old - m_new)


def piecewise_attention(
    inst: AttentionInstance, plan: RoutingPlan, stats: BlockStatistics, mode
) -> np.ndarray:
    mode = CompensationMode.parse(mode)
    check_consistency(inst, plan, stats)
    part = stats.partition
    B = part.block_size
    S = inst.seq_len
    d_v = inst.V.shape[1]

    row_mask = plan.selected_mask()[np.arange(S) // B]  # (S, N_B)
    Qs = inst.scale * inst.Q
    C = correction_matrices(stats, mode) if mode.first_order else None

    m = np.full(S, -np.inf)
    num = np.zeros((S, d_v))
    den = np.zeros(S)

    for j, (lo, hi) in enumerate(part.ranges):
        rows = np.flatnonzero(row_mask[:, j])
        if rows.size:
            logits = Qs[rows] @ inst.K[lo:hi].T
            m_new, c = _rescale(m, rows, logits.max(axis=1))
            p = np.exp(logits - m_new[:, None])
            num[rows] = num[rows] * c[:, None] + p @ inst.V[lo:hi]
            den[rows] = den[rows] * c + p.sum(axis=1)
            m[rows] = m_new

        if not mode.uses_unselected:
            continue
        rows = np.flatnonzero(~row_mask[:, j])
        if rows.size:
            a = Qs[rows] @ stats.centroids[j]
            m_new, c = _rescale(m, rows, a)
            alpha = np.exp(a - m_new)
            contrib = np.broadcast_to(stats.value_sums[j], (rows.size, d_v))
            if C is not None:
                contrib = contrib + Qs[rows] @ C[j]
            num[rows] = num[rows] * c[:, None] + alpha[:, None] * contrib
            den[rows] = den[rows] * c + B * alpha
            m[rows] = m_new

    bad = np.flatnonzero(~(den > 0))
    if bad.size:
        raise DegenerateNormalizationError(
            f"{bad.size} row(s) have a zero denominator (first: row {bad[0]}); "
            f"{mode.value} with an empty selected set"
        )
    return num / den[:, None]


@dataclass
class EquivalenceReport:
    one_group_vs_global: float
    singleton_groups_vs_per_block: float
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return max(self.one_group_vs_global, self.singleton_groups_vs_per_block) <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "one_group_vs_global": self.one_group_vs_global,
            "singleton_groups_vs_per_block": self.singleton_groups_vs_per_block,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def scaled_variant_equivalences(
    inst: AttentionInstance, plan: RoutingPlan, stats: BlockStatistics
) -> EquivalenceReport:
    """Max abs deviations for the two definitional collapses of grouped mode."""
    G = CompensationMode.FIRST_ORDER_GROUPED
    one = piecewise_attention(inst, plan, stats.with_group_size(stats.num_blocks), G)
    glob = piecewise_attention(inst, plan, stats, CompensationMode.FIRST_ORDER_GLOBAL)
    single = piecewise_attention(inst, plan, stats.with_group_size(1), G)
    per = piecewise_attention(inst, plan, stats, CompensationMode.FIRST_ORDER_PER_BLOCK)
    return EquivalenceReport(
        float(np.max(np.abs(one - glob))), float(np.max(np.abs(single - per)))
    )


def denominator_first_order_residual(
    inst: AttentionInstance, plan: RoutingPlan, stats: BlockStatistics
) -> float:
    """Largest ``|sum_U alpha * scale * q . sum_n (K_n - Kbar)| / D`` over rows.

    The term vanishes analytically because key deviations sum to zero within a
    block; this measures how close to zero it is in floating point.
    """
    check_consistency(inst, plan, stats)
    part = stats.partition
    Kb = part.blocked(inst.K)
    dev_sums = (Kb - stats.centroids[:, None, :]).sum(axis=1)  # (N_B, d)
    logits = inst.scale * inst.Q @ inst.K.T
    cent = inst.scale * inst.Q @ stats.centroids.T
    unsel = ~plan.selected_mask()[np.arange(inst.seq_len) // part.block_size]
    m = np.maximum(logits.max(axis=1), cent.max(axis=1))
    alpha = np.exp(cent - m[:, None]) * unsel
    exact = np.exp(logits - m[:, None]) * np.repeat(~unsel, part.block_size, axis=1)
    den = exact.sum(axis=1) + part.block_size * alpha.sum(axis=1)
    term = (alpha * (inst.scale * inst.Q @ dev_sums.T)).sum(axis=1)
    return float(np.max(np.abs(term) / den))
