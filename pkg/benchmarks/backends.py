"""Compare the numba kernel build against the pure-numpy fallback.

Times each hot kernel and one end-to-end IK solve under both builds.
Run from the repository root:

    python benchmarks/backends.py [--repeats 2000] [--seed 0]

The same comparison for a whole process is available by setting
ROTOKIN_NO_NUMBA=1 (e.g. around ``rotokin bench``); this script swaps the
kernel dispatch in place so both builds run in one process.
"""

import argparse
import time

import numpy as np

from rotokin import kernels, so3
from rotokin.ik import IKConfig, solve_frame
from rotokin.kinematics import BodyShape, forward_kinematics, load_tree

NUMBA_KERNELS = {
    "fk": "_fk_nb",
    "position_jacobian": "_position_jacobian_nb",
    "scale_jacobian": "_scale_jacobian_nb",
    "apply_rotation_step": "_apply_rotation_step_nb",
    "log_rotations": "_log_rotations_nb",
    "inv_right_jacobians": "_inv_right_jacobians_nb",
}


def _best_of(func, repeats):
    best = float("inf")
    loops = max(1, repeats // 10)
    for _ in range(10):
        t0 = time.perf_counter()
        for _ in range(loops):
            func()
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def _kernel_cases(tree, rng):
    rot = so3.random_rotations(tree.joint_count, rng)
    offsets = tree.template_offsets.copy()
    positions, globals_ = kernels.fk_np(tree.parents, offsets, rot)
    delta = 0.1 * rng.standard_normal(3 * tree.joint_count)
    aa = kernels.log_rotations_np(rot)
    return {
        "fk": (tree.parents, offsets, rot),
        "position_jacobian": (positions, globals_, tree.descendant_mask),
        "scale_jacobian": (tree.parents, positions, tree.chain_mask),
        "apply_rotation_step": (rot, delta),
        "log_rotations": (rot,),
        "inv_right_jacobians": (aa,),
    }


def _swap_backend(names):
    saved = {name: getattr(kernels, name) for name in names}

    def restore():
        for name, func in saved.items():
            setattr(kernels, name, func)

    return restore


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tree", default="body22")
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        raise SystemExit("numba build unavailable (ROTOKIN_NO_NUMBA set or numba missing)")

    rng = np.random.default_rng(args.seed)
    tree = load_tree(args.tree)
    shape = BodyShape.neutral(tree.joint_count)
    cases = _kernel_cases(tree, rng)

    print(f"{'kernel':22s}  {'numpy [us]':>11s}  {'numba [us]':>11s}  {'speedup':>8s}")
    print(f"{'-'*22}  {'-'*11}  {'-'*11}  {'-'*8}")
    for name, nb_name in NUMBA_KERNELS.items():
        np_func = getattr(kernels, f"{name}_np" if name != "fk" else "fk_np")
        nb_func = getattr(kernels, nb_name)
        arguments = cases[name]
        nb_func(*arguments)  # trigger JIT outside the timing
        t_np = _best_of(lambda: np_func(*arguments), args.repeats) * 1e6
        t_nb = _best_of(lambda: nb_func(*arguments), args.repeats) * 1e6
        print(f"{name:22s}  {t_np:11.2f}  {t_nb:11.2f}  {t_np / t_nb:7.1f}x")

    # end-to-end IK frame under each build
    gt = so3.random_rotations(tree.joint_count, rng, max_angle=2.0)
    targets, _ = forward_kinematics(tree, shape, gt)
    cfg = IKConfig(prior_weight=1e-3)

    def solve():
        solve_frame(tree, shape, targets, cfg=cfg)

    solve()
    t_nb = _best_of(solve, max(20, args.repeats // 50)) * 1e3

    restore = _swap_backend(NUMBA_KERNELS)
    try:
        for name in NUMBA_KERNELS:
            setattr(kernels, name, getattr(kernels, f"{name}_np" if name != "fk" else "fk_np"))
        solve()
        t_np = _best_of(solve, max(20, args.repeats // 50)) * 1e3
    finally:
        restore()

    print(f"\n{'ik solve_frame':22s}  {t_np:9.2f} ms  {t_nb:9.2f} ms  {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
