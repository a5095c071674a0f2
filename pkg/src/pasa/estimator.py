"""scikit-learn style wrappers.

``PiecewiseSparseAttention.fit(K, V)`` computes the block statistics of one
head; ``transform(Q)`` routes the query blocks and returns the compensated
sparse attention output. ``CurvatureBudgetScheduler.fit(trajectories)`` turns
velocity trajectories into a per-step density schedule.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import budget
from .blockstats import DEFAULT_EPSILON, DEFAULT_GROUP_SIZE, compute_block_statistics
from .kernel import piecewise_attention
from .modes import CompensationMode
from .oracle import AttentionInstance, dense_attention
from .routing import DEFAULT_BIAS_BETA, RoutingConfig, density_to_k, route


class PiecewiseSparseAttention(TransformerMixin, BaseEstimator):
    """Block-sparse attention with Taylor compensation of skipped blocks.

    Parameters
    ----------
    block_size : int
        Tokens per key/query block.
    group_size : int
        Blocks per statistics group for ``FirstOrderGrouped``.
    mode : str
        One of the ``CompensationMode`` values.
    density : float
        Fraction of key blocks computed exactly per query block.
    top_k : int or None
        Overrides ``density`` when given.
    bias_beta : float
        Gumbel perturbation scale relative to each score row's std.
    epsilon : float
        Stabilizer inside the heterogeneity log-prior.
    scale : float or None
        Logit scale, ``1/sqrt(d)`` by default.
    seed : int
        Routing noise seed.
    """

    def __init__(self, block_size=64, group_size=DEFAULT_GROUP_SIZE, mode="FirstOrderGrouped",
                 density=0.15, top_k=None, bias_beta=DEFAULT_BIAS_BETA, epsilon=DEFAULT_EPSILON,
                 scale=None, seed=0):
        self.block_size = block_size
        self.group_size = group_size
        self.mode = mode
        self.density = density
        self.top_k = top_k
        self.bias_beta = bias_beta
        self.epsilon = epsilon
        self.scale = scale
        self.seed = seed

    def fit(self, K, V):
        K = check_array(K, dtype=np.float64)
        V = check_array(V, dtype=np.float64)
        CompensationMode.parse(self.mode)
        self.stats_ = compute_block_statistics(K, V, self.block_size, self.group_size, self.epsilon)
        self.K_ = K
        self.V_ = V
        self.n_features_in_ = K.shape[1]
        self.k_ = self.top_k if self.top_k is not None else density_to_k(self.density, self.stats_.num_blocks)
        return self

    def _instance(self, Q) -> AttentionInstance:
        check_is_fitted(self, "stats_")
        Q = check_array(Q, dtype=np.float64)
        if Q.shape != self.K_.shape:
            raise ValueError(f"Q must have shape {self.K_.shape}, got {Q.shape}")
        scale = self.scale if self.scale is not None else 1.0 / math.sqrt(Q.shape[1])
        return AttentionInstance(Q, self.K_, self.V_, scale)

    def route(self, Q, timestep=0, layer=0, head=0):
        inst = self._instance(Q)
        cfg = RoutingConfig(epsilon=self.epsilon, bias_beta=self.bias_beta, seed=self.seed)
        return route(inst.Q, self.stats_, cfg, self.k_, inst.scale, (self.seed, timestep, layer, head))

    def transform(self, Q, timestep=0, layer=0, head=0):
        inst = self._instance(Q)
        self.plan_ = self.route(Q, timestep, layer, head)
        return piecewise_attention(inst, self.plan_, self.stats_, self.mode)

    def dense(self, Q):
        return dense_attention(self._instance(Q))


class CurvatureBudgetScheduler(BaseEstimator):
    """Per-step densities proportional to mean-normalized trajectory L1 change."""

    def __init__(self, rho=budget.DEFAULT_RHO, dense_frac=budget.DEFAULT_DENSE_FRAC):
        self.rho = rho
        self.dense_frac = dense_frac

    def fit(self, trajectories, y=None):
        trajs = [t if isinstance(t, budget.VelocityTrajectory) else budget.VelocityTrajectory(t)
                 for t in trajectories]
        self.curve_ = budget.calibration_curve(trajs)
        self.total_steps_ = trajs[0].timesteps
        seg = budget.sparse_segment(self.curve_, self.total_steps_, self.dense_frac)
        self.schedule_ = budget.build_schedule(seg, self.rho, self.total_steps_, self.dense_frac)
        return self

    def predict(self, num_blocks: int) -> np.ndarray:
        """Top-k block count for every timestep (dense steps get all blocks)."""
        check_is_fitted(self, "schedule_")
        return np.array([self.schedule_.top_k(t, num_blocks) for t in range(self.total_steps_)])
