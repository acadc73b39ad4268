"""Per-frame runtime benchmark: direct regression vs warm and cold IK.

Each mode is timed frame by frame over one smooth synthetic sequence; the
first ``warmup`` frames are discarded (this also absorbs JIT compilation)
and no I/O happens inside the timed region. ``regress`` measures a single
forward pass of the per-frame regressor with fixed random weights; the
ik modes run the damped-least-squares solver with and without
previous-frame initialization.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from . import so3, testbed
from .ik import IKConfig, solve_frame
from .kinematics import BodyShape, load_tree

BENCH_MODES = ("regress", "ik-warm", "ik-cold")
DEFAULT_MIN_SAMPLES = 1000


@dataclass(frozen=True)
class ModeStats:
    mean_ms: float
    std_ms: float
    samples: int
    mean_iterations: float | None

    def to_dict(self):
        return {
            "mean_ms": self.mean_ms,
            "std_ms": self.std_ms,
            "samples": self.samples,
            "mean_iterations": self.mean_iterations,
        }


@dataclass(frozen=True)
class BenchReport:
    modes: dict
    min_samples: int

    def __post_init__(self):
        for name, stats in self.modes.items():
            if stats.samples < self.min_samples:
                raise ValueError(
                    f"mode {name}: {stats.samples} samples below the minimum {self.min_samples}"
                )

    def to_dict(self):
        return {
            "min_samples": self.min_samples,
            "modes": {name: stats.to_dict() for name, stats in self.modes.items()},
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def format_table(self):
        lines = [
            f"{'Mode':10s}  {'ms/frame':>12s}  {'iterations':>10s}  {'samples':>8s}",
            f"{'-'*10}  {'-'*12}  {'-'*10}  {'-'*8}",
        ]
        for name, s in self.modes.items():
            iters = "-" if s.mean_iterations is None else f"{s.mean_iterations:.1f}"
            lines.append(
                f"{name:10s}  {s.mean_ms:6.3f} ± {s.std_ms:.3f}  {iters:>10s}  {s.samples:8d}"
            )
        return "\n".join(lines)


def _smooth_sequence(tree_name, frames, seed):
    spec = testbed.SyntheticSpec(
        tree=tree_name,
        num_sequences=1,
        frames_per_sequence=frames,
        keyframe_count=max(2, frames // 20),
        noise_std_2d=0.0,
        seed=seed,
    )
    return testbed.generate_synthetic(spec)[0]


def _time_regress(seq, tree, seed, warmup):
    cfg = testbed.RegressorConfig(head="naive", seed=seed, preflight=False)
    params = testbed.init_params(cfg, tree.joint_count, np.random.default_rng(seed))
    x_all = seq.pose2d.reshape(len(seq), -1)
    times = []
    for i, x in enumerate(x_all):
        t0 = time.perf_counter()
        h = np.tanh(x @ params["w1"] + params["b1"])
        raw = (h @ params["wr"] + params["br"]).reshape(tree.joint_count, 3, 3)
        so3.decode_rotations(cfg.representation, raw)
        (h @ params["wp"] + params["bp"]).reshape(tree.joint_count, 3)
        times.append(time.perf_counter() - t0)
    return times[warmup:], None


def _time_ik(seq, tree, shape, warm, cfg, warmup):
    times, iters = [], []
    init = None
    for targets in seq.pose3d:
        t0 = time.perf_counter()
        result = solve_frame(tree, shape, targets, init=init, cfg=cfg)
        times.append(time.perf_counter() - t0)
        iters.append(result.iterations_used)
        if warm:
            init = result.pose
    return times[warmup:], iters[warmup:]


def run_bench(modes=BENCH_MODES, samples=DEFAULT_MIN_SAMPLES, warmup=10, seed=0,
              tree_name="body22", ik_cfg=None, min_samples=None):
    """Benchmark the requested modes and return a BenchReport.

    ``samples`` timed frames per mode after ``warmup`` discarded frames;
    ``min_samples`` (default: the configured ``samples``) is the floor the
    report enforces on every mode.
    """
    for mode in modes:
        if mode not in BENCH_MODES:
            raise ValueError(f"unknown bench mode {mode!r}; choose from {BENCH_MODES}")
    if min_samples is None:
        min_samples = samples
    tree = load_tree(tree_name)
    shape = BodyShape.neutral(tree.joint_count)
    seq = _smooth_sequence(tree_name, samples + warmup, seed)
    ik_cfg = ik_cfg or IKConfig()
    stats = {}
    for mode in modes:
        if mode == "regress":
            times, iters = _time_regress(seq, tree, seed, warmup)
        elif mode == "ik-warm":
            times, iters = _time_ik(seq, tree, shape, True, ik_cfg, warmup)
        else:
            times, iters = _time_ik(seq, tree, shape, False, ik_cfg, warmup)
        ms = 1000.0 * np.asarray(times)
        stats[mode] = ModeStats(
            mean_ms=float(ms.mean()),
            std_ms=float(ms.std()),
            samples=len(ms),
            mean_iterations=None if iters is None else float(np.mean(iters)),
        )
    return BenchReport(modes=stats, min_samples=min_samples)
