"""Block-sparse attention with Taylor compensation of skipped blocks,
stochastic block routing and curvature-aware per-timestep budgets."""

from .analysis import (
    BoundCheck,
    FidelityReport,
    fidelity,
    lemma1_check,
    proposition1_check,
    remark_counterexample_search,
    selection_stats,
)
from .blockstats import BlockPartition, BlockStatistics, compute_block_statistics, partition
from .budget import BudgetSchedule, VelocityTrajectory, build_schedule, l1_curve
from .estimator import CurvatureBudgetScheduler, PiecewiseSparseAttention
from .kernel import piecewise_attention, scaled_variant_equivalences
from .modes import CompensationMode
from .oracle import AttentionInstance, DegenerateNormalizationError, dense_attention, piecewise_reference
from .routing import RoutingConfig, RoutingPlan, density_to_k, route, select_topk

__version__ = "0.1.0"
