"""Seeded synthetic attention instances.

Keys in block ``j`` are ``anchor_j + KEY_SPREAD * noise``. Values are

    V = c * (K - anchor_j) @ W_j + sqrt(1 - c^2) * noise + offset_j

with ``c`` the correlation strength. ``W_j`` drifts slowly with the block index
around a shared map ``W0``, so neighbouring blocks have similar ``H_j`` and a
non-zero global mean exists. Queries share a common direction so a few key
blocks matter to every query block.
"""

from __future__ import annotations

import math

import numpy as np

from .oracle import AttentionInstance

_U64 = (1 << 64) - 1

KEY_SPREAD = 0.6
ANCHOR_SCALE = 1.0
QUERY_SCALE = 1.0
QUERY_SHARED = 1.5
MAP_DRIFT = 0.35
VALUE_OFFSET = 0.5

_TAG_INSTANCE = 0x1A57
_TAG_DRIFT = 0xD81F


def rng_for(*key) -> np.random.Generator:
    """Philox generator keyed on an integer tuple; independent per key."""
    ss = np.random.SeedSequence([int(k) & _U64 for k in key])
    return np.random.Generator(np.random.Philox(ss))


def generate_instance(
    seq_len: int, head_dim: int, block_size: int, correlation_strength: float = 0.5,
    seed: int = 0, ctx=(0, 0, 0),
) -> AttentionInstance:
    if seq_len % block_size:
        raise ValueError("seq_len must be a multiple of block_size")
    if not 0 <= correlation_strength <= 1:
        raise ValueError("correlation_strength must be in [0, 1]")
    rng = rng_for(_TAG_INSTANCE, seed, *ctx)
    nb, B, d = seq_len // block_size, block_size, head_dim
    c = correlation_strength

    anchors = ANCHOR_SCALE * rng.standard_normal((nb, d))
    dev = KEY_SPREAD * rng.standard_normal((nb, B, d))
    K = (anchors[:, None, :] + dev).reshape(seq_len, d)

    W0 = rng.standard_normal((d, d)) / math.sqrt(d)
    steps = MAP_DRIFT * rng.standard_normal((nb, d, d)) / math.sqrt(d)
    W = W0 + np.cumsum(steps, axis=0)
    offsets = VALUE_OFFSET * rng.standard_normal((nb, 1, d))
    noise = rng.standard_normal((nb, B, d))
    V = (c * np.einsum("jna,jab->jnb", dev, W) / KEY_SPREAD
         + math.sqrt(1 - c * c) * noise + offsets).reshape(seq_len, d)

    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    Q = QUERY_SCALE * rng.standard_normal((seq_len, d)) + QUERY_SHARED * math.sqrt(d) * u
    return AttentionInstance(Q, K, V)


def generate_drifting_sequence(
    seq_len: int, head_dim: int, block_size: int, num_steps: int, drift_rate: float,
    correlation_strength: float = 0.5, seed: int = 0, ctx=(0, 0, 0),
) -> list[AttentionInstance]:
    """Instances where each step adds ``drift_rate * N(0, 1)`` to Q, K and V."""
    if drift_rate < 0:
        raise ValueError("drift_rate must be >= 0")
    inst = generate_instance(seq_len, head_dim, block_size, correlation_strength, seed, ctx)
    seq = [inst]
    for step in range(1, num_steps):
        rng = rng_for(_TAG_DRIFT, seed, step, *ctx)
        shape = inst.Q.shape
        inst = AttentionInstance(
            inst.Q + drift_rate * rng.standard_normal(shape),
            inst.K + drift_rate * rng.standard_normal(shape),
            inst.V + drift_rate * rng.standard_normal(inst.V.shape),
            inst.scale,
        )
        seq.append(inst)
    return seq


def offset_logits(inst: AttentionInstance, offset: float) -> AttentionInstance:
    """Append one feature so every logit (exact and centroid) grows by ``offset``.

    The extra value column is zero, so outputs keep a trailing zero column.
    """
    S = inst.seq_len
    a = math.sqrt(abs(offset) / inst.scale)
    Q = np.hstack([inst.Q, np.full((S, 1), a)])
    K = np.hstack([inst.K, np.full((S, 1), math.copysign(a, offset))])
    V = np.hstack([inst.V, np.zeros((S, 1))])
    return AttentionInstance(Q, K, V, inst.scale)
