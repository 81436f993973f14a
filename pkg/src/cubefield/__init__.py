"""cubefield: hypernetwork-generated occupancy fields over voxel grids.

A voxelized shape is represented as a small per-shape classifier whose flat
weight vector is emitted by a shared hypernetwork.  The classifier can score
single 3D points, or — because all of its activations are monotone — entire
axis-aligned cubes via interval propagation, which yields sound whole-cell
inside/outside decisions.  The package also ships marching-cubes mesh
extraction, evaluation metrics (voxel MSE, IoU, Chamfer distance, mesh
component counts), shape interpolation, and a CLI tying these into
reproducible runs.
"""

from .errors import (BinvoxFormatError, CheckpointError, CubefieldError, DataError,
                     DivergenceError, IntervalDivisionError, IntervalError,
                     ShapeMismatchError)
from .intervals import (Box3, Interval, IntervalVector, activation_interval,
                        dense_interval, iadd, idiv, imul, isub, worst_case_output)
from .mesh import TriangleMesh, connected_components, export_obj, marching_cubes, sample_surface
from .metrics import EvalReport, chamfer, evaluate, iou, mse_grid
from .nets import (HyperNetwork, TargetArch, TargetNetParams, field_eval_grid,
                   hyper_forward, init_hypernetwork, load_checkpoint, save_checkpoint,
                   target_interval_forward, target_point_forward)
from .training import TrainConfig, adam_step, loss_interval, loss_point, train
from .voxels import (LabeledCube, VoxelGrid, desk_dataset, downsample, gen_shape,
                     grid_cells, load_binvox, sample_point, save_binvox, upsample)
from .interp import interpolate, interpolation_sequence

__version__ = "0.1.0"

__all__ = [
    "BinvoxFormatError", "Box3", "CheckpointError", "CubefieldError", "DataError",
    "DivergenceError", "EvalReport", "HyperNetwork", "Interval",
    "IntervalDivisionError", "IntervalError", "IntervalVector", "LabeledCube",
    "ShapeMismatchError", "TargetArch", "TargetNetParams", "TrainConfig",
    "TriangleMesh", "VoxelGrid", "activation_interval", "adam_step", "chamfer",
    "connected_components", "dense_interval", "desk_dataset", "downsample",
    "evaluate", "export_obj", "field_eval_grid", "gen_shape", "grid_cells",
    "hyper_forward", "iadd", "idiv", "imul", "init_hypernetwork", "interpolate",
    "interpolation_sequence", "iou", "isub", "load_binvox", "load_checkpoint",
    "loss_interval", "loss_point", "marching_cubes", "mse_grid", "sample_point",
    "sample_surface", "save_binvox", "save_checkpoint", "target_interval_forward",
    "target_point_forward", "train", "upsample", "worst_case_output",
]
