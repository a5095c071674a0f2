"""Experiment configuration and orchestration.

A run builds a density schedule from calibration curves, then for every trial
walks a drifting instance sequence over the sparse timesteps: route, compute
sparse outputs for each requested mode and the dense output, record fidelity,
the grouped-residual bound and the within-group sum-of-squares check.
All randomness is keyed on ``(seed, trial, step, layer, head)`` so the report
does not depend on how trials are scheduled across workers.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import budget
from .analysis import (
    fidelity,
    lemma1_check,
    proposition1_check,
    remark_counterexample_search,
    search_remark_counterexample,
    selection_stats,
    count_entropy,
)
from .blockstats import compute_block_statistics
from .kernel import piecewise_attention, scaled_variant_equivalences
from .modes import CompensationMode
from .oracle import dense_attention, piecewise_reference
from .routing import RoutingConfig, route
from .synth import generate_drifting_sequence, generate_instance, offset_logits, rng_for

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    seq_len: int = 4096
    head_dim: int = 32
    block_size: int = 64
    group_size: int = 32
    rho: float = budget.DEFAULT_RHO
    bias_beta: float = 0.1
    epsilon: float = 1e-6
    dense_frac: float = budget.DEFAULT_DENSE_FRAC
    total_steps: int = budget.DEFAULT_TOTAL_STEPS
    modes: tuple = ("FirstOrderGlobal", "FirstOrderGrouped")
    seed: int = 0
    num_trials: int = 2
    correlation_strength: float = 0.5
    drift_rate: float = 0.01
    num_layers: int = 1
    num_heads: int = 1
    force_k: int | None = None
    calibration_csv: str | None = None

    def __post_init__(self):
        if isinstance(self.modes, str):
            self.modes = tuple(m for m in self.modes.split(",") if m.strip())
        self.modes = tuple(CompensationMode.parse(m).value for m in self.modes)
        if not self.modes:
            raise ValueError("at least one mode is required")
        if self.seq_len % self.block_size:
            raise ValueError("seq_len must be a multiple of block_size")
        if not 0 <= self.correlation_strength <= 1:
            raise ValueError("correlation_strength must be in [0, 1]")
        if self.num_trials < 1:
            raise ValueError("num_trials must be >= 1")

    @property
    def num_blocks(self) -> int:
        return self.seq_len // self.block_size

    def routing(self, seed: int) -> RoutingConfig:
        return RoutingConfig(epsilon=self.epsilon, bias_beta=self.bias_beta, seed=seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modes"] = list(self.modes)
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string or typed values; keys may use ``-`` or ``_``."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name == "mode":
                name = "modes"
            if name == "trials":
                name = "num_trials"
            if name not in types:
                raise ValueError(f"unknown config key {key!r}")
            kw[name] = _coerce(types[name], raw)
        return cls(**kw)


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    t = str(type_name)
    if raw.strip().lower() in ("none", "") and "None" in t:
        return None
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw.strip()


def load_config_file(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return values


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed & ((1 << 64) - 1), trial]).generate_state(1, np.uint64)[0])


def build_run_schedule(cfg: ExperimentConfig) -> budget.BudgetSchedule:
    if cfg.calibration_csv:
        curve = budget.read_calibration_csv(cfg.calibration_csv)
    else:
        curve = budget.synthetic_calibration(cfg.total_steps, cfg.seed)
    seg = budget.sparse_segment(curve, cfg.total_steps, cfg.dense_frac)
    return budget.build_schedule(seg, cfg.rho, cfg.total_steps, cfg.dense_frac)


def _first_row_alphas(inst, stats, row: int) -> np.ndarray:
    a = inst.scale * (stats.centroids @ inst.Q[row])
    return np.exp(a - a.max())


def run_trial(cfg: ExperimentConfig, schedule: budget.BudgetSchedule, trial: int) -> dict:
    seed = trial_seed(cfg.seed, trial)
    entry = {"trial": trial, "seed": seed, "steps": [], "failure": None}
    plans = []
    try:
        B, nb = cfg.block_size, cfg.num_blocks
        steps = schedule.sparse_steps
        for layer in range(cfg.num_layers):
            for head in range(cfg.num_heads):
                seq = generate_drifting_sequence(
                    cfg.seq_len, cfg.head_dim, B, len(steps), cfg.drift_rate,
                    cfg.correlation_strength, seed, ctx=(layer, head, 0),
                )
                for step, inst in zip(steps, seq):
                    stats = compute_block_statistics(inst.K, inst.V, B, cfg.group_size, cfg.epsilon)
                    k = cfg.force_k if cfg.force_k is not None else schedule.top_k(step, nb)
                    plan = route(inst.Q, stats, cfg.routing(seed), k, inst.scale, (seed, step, layer, head))
                    plans.append(plan)
                    dense = dense_attention(inst)
                    fid = {}
                    for m in cfg.modes:
                        rep = fidelity(piecewise_attention(inst, plan, stats, m), dense)
                        fid[m] = {"rel_frobenius": rep.rel_frobenius, "max_row_l2": rep.max_row_l2}
                    unsel = np.flatnonzero(~plan.selected_mask()[0])
                    l1 = lemma1_check(stats.H, stats.group_of, _first_row_alphas(inst, stats, 0), unsel)
                    p1 = proposition1_check(stats.H, stats.group_of, stats.H_global)
                    entry["steps"].append({
                        "step": step, "layer": layer, "head": head, "k": plan.k_used,
                        "density": schedule.density_at(step),
                        "fidelity": fid,
                        "lemma1": l1.to_dict(),
                        "proposition1": {"passed": p1.passed,
                                         "max_gap": float(np.max(p1.lhs - p1.rhs))},
                    })
        ss = selection_stats(plans)
        entry["selection"] = {"entropy": ss.entropy, "jaccard": ss.jaccard,
                              "counts": [int(c) for c in ss.counts]}
    except Exception as exc:  # recorded, the run continues
        log.warning("trial %d failed: %s", trial, exc)
        entry["failure"] = f"{type(exc).__name__}: {exc}"
    return entry


def _aggregate(cfg: ExperimentConfig, schedule, trials: list[dict]) -> dict:
    ok = [t for t in trials if t["failure"] is None]
    agg = {"modes": {}, "failed_trials": len(trials) - len(ok)}
    for m in cfg.modes:
        errs = [s["fidelity"][m]["rel_frobenius"] for t in ok for s in t["steps"]]
        if errs:
            agg["modes"][m] = {"mean_rel_frobenius": float(np.mean(errs)),
                               "std_rel_frobenius": float(np.std(errs)),
                               "max_rel_frobenius": float(np.max(errs)), "n": len(errs)}
    ks = [s["k"] for t in ok for s in t["steps"]]
    if ks:
        agg["realized_sparsity"] = 1.0 - float(np.sum(ks)) / (len(ks) * cfg.num_blocks)
    agg["schedule_mean_density"] = float(np.mean(schedule.densities))
    return agg


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict:
    schedule = build_run_schedule(cfg)
    idx = range(cfg.num_trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(run_trial, [cfg] * len(idx), [schedule] * len(idx), idx))
    else:
        trials = [run_trial(cfg, schedule, i) for i in idx]

    ok = [t for t in trials if t["failure"] is None]
    l1 = [s["lemma1"] for t in ok for s in t["steps"]]
    p1 = [s["proposition1"] for t in ok for s in t["steps"]]
    counts = np.sum([t["selection"]["counts"] for t in ok], axis=0) if ok else np.zeros(cfg.num_blocks)
    jac = [t["selection"]["jaccard"] for t in ok if t["selection"]["jaccard"] is not None]
    return {
        "config": cfg.to_dict(),
        "schedule": schedule.to_dict(),
        "trials": trials,
        "aggregates": _aggregate(cfg, schedule, trials),
        "bound_checks": {
            "lemma1_checked": len(l1),
            "lemma1_all_satisfied": all(c["satisfied"] for c in l1),
            "lemma1_min_margin": min((c["margin"] for c in l1), default=None),
            "proposition1_checked": len(p1),
            "proposition1_all_passed": all(c["passed"] for c in p1),
        },
        "selection_stats": {
            "counts": [int(c) for c in counts],
            "sorted_counts": sorted((int(c) for c in counts), reverse=True),
            "entropy": count_entropy(counts),
            "mean_trial_entropy": float(np.mean([t["selection"]["entropy"] for t in ok])) if ok else None,
            "mean_jaccard": float(np.mean(jac)) if jac else None,
        },
    }


def report_passed(report: dict) -> bool:
    b = report["bound_checks"]
    return (
        report["aggregates"]["failed_trials"] == 0
        and b["lemma1_all_satisfied"]
        and b["proposition1_all_passed"]
    )


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# -- verify ------------------------------------------------------------------

def verify_suite(seed: int = 0, draws: int = 100) -> dict:
    """Randomized checks of the bound statements and the grouped-mode collapses."""
    rng = rng_for(0x5E71F, seed)
    out = {}

    l1_ok, p1_ok = True, True
    for _ in range(draws):
        d = int(rng.integers(1, 17))
        nb = int(rng.integers(2, 65))
        gs = int(rng.choice([1, 2, 8, 32, nb]))
        H = rng.standard_normal((nb, d, d)) * rng.uniform(0.1, 3.0)
        group_of = np.arange(nb) // gs
        alphas = rng.exponential(size=nb)
        unsel = np.flatnonzero(rng.random(nb) < 0.7)
        l1_ok &= lemma1_check(H, group_of, alphas, unsel).satisfied
        p1_ok &= proposition1_check(H, group_of, H.mean(axis=0)).passed
    out["lemma1"] = bool(l1_ok)
    out["proposition1"] = bool(p1_ok)
    found, _ = search_remark_counterexample(1000, seed)
    H = np.array([[[1.0]], [[3.0]], [[0.0]], [[0.0]]])
    out["remark"] = bool(found and remark_counterexample_search(H, [0, 0, 1, 1], H.mean(axis=0)))

    worst_eq, worst_stream = 0.0, 0.0
    for i in range(max(1, draws // 10)):
        B = int(rng.choice([4, 8]))
        nb = int(rng.integers(3, 9))
        inst = generate_instance(B * nb, int(rng.choice([4, 8])), B, 0.7, seed, ctx=(i, 0, 1))
        stats = compute_block_statistics(inst.K, inst.V, B, 2)
        plan = route(inst.Q, stats, RoutingConfig(bias_beta=0.5, seed=seed), int(rng.integers(1, nb)), inst.scale, (seed, i, 0, 0))
        rep = scaled_variant_equivalences(inst, plan, stats)
        worst_eq = max(worst_eq, rep.one_group_vs_global, rep.singleton_groups_vs_per_block)
        if i % 2:
            inst = offset_logits(inst, 500.0)
            stats = compute_block_statistics(inst.K, inst.V, B, 2)
        for m in CompensationMode:
            a = piecewise_attention(inst, plan, stats, m)
            b = piecewise_reference(inst, plan, m, stats)
            worst_stream = max(worst_stream, float(np.linalg.norm(a - b) / np.linalg.norm(b)))
    out["mode_collapse"] = worst_eq <= 1e-12
    out["streaming_vs_reference"] = worst_stream <= 1e-8
    out["max_collapse_deviation"] = worst_eq
    out["max_streaming_rel_error"] = worst_stream
    out["passed"] = all(out[k] for k in ("lemma1", "proposition1", "remark", "mode_collapse", "streaming_vs_reference"))
    return out


# -- bench -------------------------------------------------------------------

def bench(seq_lens=(256, 512, 1024, 2048), head_dim: int = 32, block_size: int = 64,
          group_size: int = 32, rho: float = 0.15, repeats: int = 3, seed: int = 0) -> list[dict]:
    """Median wall-clock seconds per mode (and dense) at each sequence length."""
    rows = []
    for S in seq_lens:
        inst = generate_instance(S, head_dim, block_size, 0.5, seed)
        stats = compute_block_statistics(inst.K, inst.V, block_size, group_size)
        nb = stats.num_blocks
        k = max(1, min(nb, int(round(rho * nb))))
        plan = route(inst.Q, stats, RoutingConfig(seed=seed), k, inst.scale)
        cases = [("Dense", lambda: dense_attention(inst))]
        cases += [(m.value, lambda m=m: piecewise_attention(inst, plan, stats, m)) for m in CompensationMode]
        for name, fn in cases:
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            rows.append({"seq_len": S, "mode": name, "k": k, "num_blocks": nb,
                         "seconds": float(np.median(times))})
    return rows
