"""Key/value block partitioning and the per-block Taylor statistics.

For block ``j`` with keys ``K[j, n]`` and values ``V[j, n]``:

* centroid ``Kbar_j`` is the mean key,
* ``value_sums[j]`` is the sum of the block's value rows,
* ``H_j = sum_n (K[j, n] - Kbar_j)^T V[j, n]`` (a ``d x d`` matrix) is the
  first-order expansion kernel around the centroid.

``H_global`` is the unweighted mean of all ``H_j`` and ``H_grouped[g]`` the mean
over contiguous runs of ``group_size`` blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix

DEFAULT_GROUP_SIZE = 32
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class BlockPartition:
    seq_len: int
    block_size: int

    @property
    def num_blocks(self) -> int:
        return self.seq_len // self.block_size

    @property
    def ranges(self) -> list[tuple[int, int]]:
        b = self.block_size
        return [(j * b, (j + 1) * b) for j in range(self.num_blocks)]

    def block_of(self, token: int) -> int:
        return token // self.block_size

    def blocked(self, m: np.ndarray) -> np.ndarray:
        """View an ``(S, d)`` array as ``(num_blocks, block_size, d)``."""
        if m.shape[0] != self.seq_len:
            raise ValueError(f"expected {self.seq_len} rows, got {m.shape[0]}")
        return m.reshape(self.num_blocks, self.block_size, m.shape[1])


def partition(seq_len: int, block_size: int) -> BlockPartition:
    if block_size < 1 or seq_len < 1:
        raise ValueError("seq_len and block_size must be positive")
    if seq_len % block_size:
        raise ValueError(
            f"seq_len {seq_len} is not divisible by block_size {block_size}; pad first"
        )
    return BlockPartition(seq_len, block_size)


def block_centroids(K, part: BlockPartition) -> np.ndarray:
    return part.blocked(as_matrix(K, "K")).mean(axis=1)


def compute_block_H(K, V, part: BlockPartition) -> np.ndarray:
    """Return the stacked ``H_j`` matrices, shape ``(num_blocks, d_k, d_v)``."""
    K = as_matrix(K, "K")
    V = as_matrix(V, "V")
    if K.shape[0] != V.shape[0]:
        raise ValueError(f"K has {K.shape[0]} rows but V has {V.shape[0]}")
    Kb = part.blocked(K)
    Vb = part.blocked(V)
    dev = Kb - Kb.mean(axis=1, keepdims=True)
    return np.einsum("jna,jnb->jab", dev, Vb)


def group_assignment(num_blocks: int, group_size: int) -> np.ndarray:
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    return np.arange(num_blocks) // group_size


def global_and_grouped_means(H, group_size: int):
    """Return ``(H_global, H_grouped, group_of)``.

    Groups are contiguous runs of ``group_size`` block indices; the last group
    may be shorter.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 3 or H.shape[0] == 0:
        raise ValueError("H must be a non-empty stack of matrices")
    group_of = group_assignment(H.shape[0], group_size)
    num_groups = int(group_of[-1]) + 1
    H_grouped = np.stack([H[group_of == g].mean(axis=0) for g in range(num_groups)])
    return H.mean(axis=0), H_grouped, group_of


def grouped_means_for(H, group_of) -> np.ndarray:
    """Group means for an arbitrary block-to-group map (labels ``0..G-1``)."""
    H = np.asarray(H, dtype=np.float64)
    group_of = np.asarray(group_of)
    return np.stack([H[group_of == g].mean(axis=0) for g in range(int(group_of.max()) + 1)])


def heterogeneity_norms(H, H_global, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Frobenius norm of each ``H_j - H_global``; ``epsilon`` is applied later in routing."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    diff = np.asarray(H, dtype=np.float64) - np.asarray(H_global, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=(1, 2)))


@dataclass(frozen=True)
class BlockStatistics:
    partition: BlockPartition
    group_size: int
    centroids: np.ndarray  # (N_B, d)
    value_sums: np.ndarray  # (N_B, d_v)
    H: np.ndarray  # (N_B, d, d_v)
    H_global: np.ndarray
    H_grouped: np.ndarray  # (num_groups, d, d_v)
    group_of: np.ndarray
    het_norms: np.ndarray

    @property
    def num_blocks(self) -> int:
        return self.partition.num_blocks

    @property
    def num_groups(self) -> int:
        return self.H_grouped.shape[0]

    def with_group_size(self, group_size: int) -> "BlockStatistics":
        _, H_grouped, group_of = global_and_grouped_means(self.H, group_size)
        return BlockStatistics(
            self.partition, group_size, self.centroids, self.value_sums, self.H,
            self.H_global, H_grouped, group_of, self.het_norms,
        )


def compute_block_statistics(
    K, V, block_size: int, group_size: int = DEFAULT_GROUP_SIZE, epsilon: float = DEFAULT_EPSILON
) -> BlockStatistics:
    K = as_matrix(K, "K")
    V = as_matrix(V, "V")
    part = partition(K.shape[0], block_size)
    H = compute_block_H(K, V, part)
    H_global, H_grouped, group_of = global_and_grouped_means(H, group_size)
    return BlockStatistics(
        partition=part,
        group_size=group_size,
        centroids=block_centroids(K, part),
        value_sums=part.blocked(V).sum(axis=1),
        H=H,
        H_global=H_global,
        H_grouped=H_grouped,
        group_of=group_of,
        het_norms=heterogeneity_norms(H, H_global, epsilon),
    )
