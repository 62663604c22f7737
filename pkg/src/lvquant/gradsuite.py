"""Finite-difference check of the full objective on a reduced network."""
from __future__ import annotations

import numpy as np

from .model import REDUCED_ARCH, ArchConfig, Bound, forward_sequence, init_params
from .numerics import GradCheckReport, finite_diff_check
from .objective import ObjectiveConfig, objective_terms


def reduced_problem(seed: int = 0, frames: int = 2, arch: ArchConfig = REDUCED_ARCH):
    """Random float64 parameters, inputs and targets for the reduced model."""
    rng = np.random.default_rng(seed)
    params = init_params(seed, arch, dtype=np.float64)
    # perturb biases and batchnorm affine terms away from their neutral init
    arrays = {k: v + (0.1 * rng.standard_normal(v.shape) if not k.endswith(".w") else 0.0)
              for k, v in params.arrays.items()}
    s = arch.input_size
    x = rng.standard_normal((1, frames, s, s))
    targets = {
        "area": rng.standard_normal((1, frames, 2)) * 0.1,
        "dim": rng.standard_normal((1, frames, 3)) * 0.1,
        "rwt": rng.standard_normal((1, frames, 6)) * 0.1,
        "phase": np.arange(frames)[None] % 2,
    }
    return arrays, params.buffers, x, targets


def objective_closure(buffers, x, targets, config: ObjectiveConfig, arch: ArchConfig = REDUCED_ARCH,
                      dropout_seed: int = 0):
    """Map a dict of parameter tensors to the scalar objective.

    Runs in train mode with a fixed dropout mask; running statistics are
    copied on every call so repeated evaluations agree.
    """
    def fn(tensors):
        bound = Bound(arch, tensors, {k: v.copy() for k, v in buffers.items()})
        preds = forward_sequence(x, bound, "train", seed=dropout_seed)
        weights = {f"w_{t}": tensors[f"heads.w_{t}"] for t in ("area", "dim", "rwt")}
        return objective_terms(preds, targets, weights, config)["total"]
    return fn


def run_gradcheck(seed: int = 0, lambda1: float = 0.1, lambda2: float = 0.1, boundary: str = "cyclic",
                  epsilon: float = 1e-5, tolerance: float = 1e-4, max_entries: int | None = None) -> GradCheckReport:
    arrays, buffers, x, targets = reduced_problem(seed)
    config = ObjectiveConfig(lambda1=lambda1, lambda2=lambda2, temporal_boundary=boundary)
    fn = objective_closure(buffers, x, targets, config)
    return finite_diff_check(fn, arrays, epsilon=epsilon, tolerance=tolerance, max_entries=max_entries, seed=seed)
