"""Curvature-aware per-timestep density budgets.

The L1 curve of a velocity trajectory has one entry per step transition:
entry ``i`` is the mean absolute difference between tensors ``i+1`` and ``i``
and is attributed to step ``i+1``. Over the sparse steps the curve is
normalized to unit mean and multiplied by the baseline density:

    alpha_t = l_t / mean(l),   rho_t = rho * alpha_t

Densities above one are clamped to one and recorded; nothing is redistributed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import mean_abs_diff
from .routing import density_to_k

DEFAULT_DENSE_FRAC = 0.20
DEFAULT_RHO = 0.15
DEFAULT_TOTAL_STEPS = 50
NUM_CALIBRATION_TRAJECTORIES = 10


@dataclass(frozen=True)
class VelocityTrajectory:
    tensors: np.ndarray  # (T, ...) stacked velocity predictions

    def __post_init__(self):
        t = np.asarray(self.tensors, dtype=np.float64)
        if t.ndim < 2 or t.shape[0] < 2:
            raise ValueError("a trajectory needs at least two tensors")
        if not np.all(np.isfinite(t)):
            raise ValueError("trajectory contains non-finite values")
        object.__setattr__(self, "tensors", t)

    @property
    def timesteps(self) -> int:
        return self.tensors.shape[0]

    def flat(self) -> np.ndarray:
        return self.tensors.reshape(self.timesteps, -1)


def l1_curve(traj: VelocityTrajectory) -> np.ndarray:
    if not isinstance(traj, VelocityTrajectory):
        traj = VelocityTrajectory(traj)
    f = traj.flat()
    return np.array([mean_abs_diff(f[t + 1 : t + 2], f[t : t + 1]) for t in range(len(f) - 1)])


def average_curves(curves) -> np.ndarray:
    curves = [np.asarray(c, dtype=np.float64) for c in curves]
    if not curves:
        raise ValueError("need at least one curve")
    if len({c.shape for c in curves}) != 1:
        raise ValueError("curves must all have the same length")
    return np.mean(np.stack(curves), axis=0)


def dense_prefix_len(total_steps: int, dense_frac: float) -> int:
    if not 0 <= dense_frac < 1:
        raise ValueError("dense_frac must be in [0, 1)")
    return int(math.floor(dense_frac * total_steps + 0.5))


def sparse_segment(curve, total_steps: int, dense_frac: float = DEFAULT_DENSE_FRAC) -> np.ndarray:
    """Slice a full L1 curve (length ``T-1``) down to the sparse steps.

    The first sparse step uses its difference against the last dense step.
    With no dense prefix, step 0 has no predecessor and borrows step 1's value.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.shape != (total_steps - 1,):
        raise ValueError(f"expected a curve of length {total_steps - 1}, got {curve.shape}")
    start = dense_prefix_len(total_steps, dense_frac)
    if start == 0:
        return np.concatenate([curve[:1], curve])
    return curve[start - 1 :].copy()


@dataclass
class BudgetSchedule:
    total_steps: int
    dense_prefix: int
    rho: float
    sparse_steps: list[int]
    alphas: np.ndarray
    densities: np.ndarray
    clip_events: list[tuple[int, float]] = field(default_factory=list)

    def density_at(self, step: int) -> float:
        if step < self.dense_prefix:
            return 1.0
        return float(self.densities[step - self.dense_prefix])

    def is_dense(self, step: int) -> bool:
        return step < self.dense_prefix

    def top_k(self, step: int, num_blocks: int) -> int:
        if self.is_dense(step):
            return num_blocks
        return density_to_k(self.density_at(step), num_blocks)

    @property
    def clip_deficit(self) -> float:
        return float(sum(pre - 1.0 for _, pre in self.clip_events))

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "dense_prefix": self.dense_prefix,
            "rho": self.rho,
            "sparse_steps": list(self.sparse_steps),
            "alphas": [float(a) for a in self.alphas],
            "densities": [float(r) for r in self.densities],
            "clip_events": [{"step": t, "pre_clip": float(r)} for t, r in self.clip_events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BudgetSchedule":
        return cls(
            total_steps=int(d["total_steps"]),
            dense_prefix=int(d["dense_prefix"]),
            rho=float(d["rho"]),
            sparse_steps=list(d.get("sparse_steps", range(d["dense_prefix"], d["total_steps"]))),
            alphas=np.asarray(d["alphas"], dtype=np.float64),
            densities=np.asarray(d["densities"], dtype=np.float64),
            clip_events=[(int(e["step"]), float(e["pre_clip"])) for e in d["clip_events"]],
        )


def build_schedule(
    curve, rho: float = DEFAULT_RHO, total_steps: int = DEFAULT_TOTAL_STEPS,
    dense_frac: float = DEFAULT_DENSE_FRAC,
) -> BudgetSchedule:
    """Build a schedule from the L1 values of the sparse steps, in step order."""
    if not 0 < rho <= 1:
        raise ValueError("rho must be in (0, 1]")
    curve = np.asarray(curve, dtype=np.float64)
    prefix = dense_prefix_len(total_steps, dense_frac)
    steps = list(range(prefix, total_steps))
    if curve.shape != (len(steps),):
        raise ValueError(f"expected {len(steps)} sparse-step values, got {curve.shape}")
    if np.any(curve < 0) or not np.all(np.isfinite(curve)):
        raise ValueError("L1 values must be finite and non-negative")
    mean = float(np.mean(curve))
    if not mean > 0:
        raise ValueError("flat calibration signal: mean L1 over the sparse steps is zero")

    alphas = curve / mean
    pre = rho * alphas
    clip_events = [(steps[i], float(pre[i])) for i in np.flatnonzero(pre > 1.0)]
    return BudgetSchedule(
        total_steps=total_steps,
        dense_prefix=prefix,
        rho=rho,
        sparse_steps=steps,
        alphas=alphas,
        densities=np.minimum(pre, 1.0),
        clip_events=clip_events,
    )


def uniform_schedule(rho: float, total_steps: int, dense_frac: float = DEFAULT_DENSE_FRAC) -> BudgetSchedule:
    n = total_steps - dense_prefix_len(total_steps, dense_frac)
    return build_schedule(np.ones(n), rho, total_steps, dense_frac)


def synth_three_phase(total_steps: int, seed: int = 0, shape=(16, 16)) -> VelocityTrajectory:
    """Synthetic trajectory with a turbulent start, flat middle and late resurgence."""
    if total_steps < 20:
        raise ValueError("total_steps must be >= 20")
    rng = np.random.default_rng([int(seed) & ((1 << 64) - 1), 0x7E1])
    s = np.arange(1, total_steps, dtype=np.float64)  # step receiving each transition
    amp = (
        1.0
        + 5.0 * np.exp(-(s - 1) / (0.12 * total_steps))
        + 2.5 * np.exp(-(total_steps - 1 - s) / 2.0)
    )
    amp *= 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=amp.shape)
    steps = amp[:, None] * rng.standard_normal((total_steps - 1, int(np.prod(shape))))
    start = rng.standard_normal((1, steps.shape[1]))
    path = np.concatenate([start, start + np.cumsum(steps, axis=0)])
    return VelocityTrajectory(path.reshape((total_steps,) + tuple(shape)))


def calibration_curve(trajectories) -> np.ndarray:
    """Per-trajectory L1 curves averaged into one."""
    return average_curves([l1_curve(t) for t in trajectories])


def synthetic_calibration(total_steps: int, seed: int = 0, n: int = NUM_CALIBRATION_TRAJECTORIES) -> np.ndarray:
    return calibration_curve(synth_three_phase(total_steps, seed * 1000 + i) for i in range(n))


# -- file formats -----------------------------------------------------------

def write_calibration_csv(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "l1"])
        for i, v in enumerate(curve):
            w.writerow([i + 1, repr(float(v))])


def read_calibration_csv(path) -> np.ndarray:
    """Read a ``step,l1`` file; steps must be ``1..T-1`` in any order."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"step", "l1"}:
        raise ValueError("calibration CSV must have header 'step,l1'")
    pairs = sorted((int(r["step"]), float(r["l1"])) for r in rows)
    if [p[0] for p in pairs] != list(range(1, len(pairs) + 1)):
        raise ValueError("calibration steps must be exactly 1..T-1")
    return np.array([p[1] for p in pairs])


def write_trajectory_csv(path, traj: VelocityTrajectory) -> None:
    f = traj.flat()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"v{i}" for i in range(f.shape[1])])
        for t, row in enumerate(f):
            w.writerow([t] + [repr(float(x)) for x in row])


def read_trajectory_csv(path) -> VelocityTrajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "step":
            raise ValueError("trajectory CSV must start with a 'step' column")
        rows = sorted((int(r[0]), [float(x) for x in r[1:]]) for r in reader if r)
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError("trajectory steps must be exactly 0..T-1")
    return VelocityTrajectory(np.array([r[1] for r in rows]))


def schedule_to_json(schedule: BudgetSchedule) -> str:
    return json.dumps(schedule.to_dict(), indent=2, sort_keys=True)
