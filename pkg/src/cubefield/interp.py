"""Shape interpolation through the hypernetwork.

Latent mode blends the encoder embeddings of two grids and re-expands the
blend through the weight-generation head; theta mode blends the emitted
weight vectors directly.  The endpoints t=0 and t=1 reproduce the standalone
reconstructions exactly in both modes.
"""

from __future__ import annotations

from .mesh import TriangleMesh, marching_cubes
from .nets import (HyperNetwork, TargetNetParams, encoder_forward, field_eval_grid,
                   head_forward, hyper_forward)
from .voxels import VoxelGrid

SPACES = ("latent", "theta")


def interpolate(model: HyperNetwork, grid_a: VoxelGrid, grid_b: VoxelGrid,
                t: float, space: str = "latent") -> TargetNetParams:
    """Target weights for the blend parameter t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter must lie in [0, 1], got {t}")
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {space!r}")
    if space == "latent":
        e_a = encoder_forward(model, grid_a)
        e_b = encoder_forward(model, grid_b)
        if t == 0.0:
            e = e_a
        elif t == 1.0:
            e = e_b
        else:
            e = (1.0 - t) * e_a + t * e_b
        return head_forward(model, e)
    _, pa = hyper_forward(model, grid_a)
    _, pb = hyper_forward(model, grid_b)
    if t == 0.0:
        theta = pa.theta.copy()
    elif t == 1.0:
        theta = pb.theta.copy()
    else:
        theta = (1.0 - t) * pa.theta + t * pb.theta
    return TargetNetParams(theta, model.arch)


def interpolation_sequence(model: HyperNetwork, grid_a: VoxelGrid, grid_b: VoxelGrid,
                           steps: int, space: str = "latent", m: int = 32,
                           mode: str = "point") -> list[TriangleMesh]:
    """Meshes at t = 0, 1/(steps-1), ..., 1."""
    if steps < 2:
        raise ValueError(f"need at least 2 steps, got {steps}")
    meshes = []
    for i in range(steps):
        t = i / (steps - 1)
        params = interpolate(model, grid_a, grid_b, t, space)
        values = field_eval_grid(params, m, mode=mode)
        meshes.append(marching_cubes(values, 0.5))
    return meshes


def interpolation_ts(steps: int) -> list[float]:
    return [i / (steps - 1) for i in range(steps)]
