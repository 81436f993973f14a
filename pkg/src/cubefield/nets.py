"""Occupancy networks: a per-shape target classifier whose flat weight vector
is emitted by a hypernetwork from the shape's voxel grid.

The target network maps a 3D point to an occupancy score in (0, 1) through
ReLU hidden layers and a sigmoid output.  Because every activation is
monotone, the same weights also classify whole boxes soundly by propagating
interval bounds layer by layer (see :mod:`cubefield.intervals`).

The hypernetwork is a plain MLP pipeline: the input grid is majority-pooled
to a fixed encoder resolution, flattened, encoded to a latent vector, and a
head MLP expands the latent into the target weight vector.  All tensors are
float64 and forward passes are pure functions of (weights, input), so
repeated evaluation is bitwise reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .autodiff import Node, Tape
from .errors import CheckpointError, DataError, ShapeMismatchError
from .intervals import Box3, Interval, dense_interval_arrays
from .voxels import VoxelGrid, cell_lower_corners, downsample

Array = np.ndarray

CHECKPOINT_MAGIC = b"CFCKPT01"

_EVAL_CHUNK = 32768  # cells per batch during dense field evaluation


@dataclass(frozen=True)
class TargetArch:
    """Layer widths of the target classifier: 3 -> hidden... -> 1."""

    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise DataError(f"need at least one positive hidden width, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def widths(self) -> tuple[int, ...]:
        return (3, *self.hidden, 1)

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        w = self.widths
        return [((w[i + 1], w[i]), (w[i + 1],)) for i in range(self.num_layers)]

    @property
    def param_count(self) -> int:
        return sum(wi * wo + wo for (wo, wi), _ in self.layer_shapes())

    def slices(self) -> list[tuple[slice, tuple[int, int], slice, tuple[int]]]:
        """Flat-offset map: per layer, the W slice/shape and b slice/shape."""
        out, off = [], 0
        for (wo, wi), _ in self.layer_shapes():
            w_sl = slice(off, off + wo * wi)
            off += wo * wi
            b_sl = slice(off, off + wo)
            off += wo
            out.append((w_sl, (wo, wi), b_sl, (wo,)))
        return out


@dataclass(frozen=True)
class TargetNetParams:
    """Flat weight vector plus the architecture needed to slice it."""

    theta: Array = field(repr=False)
    arch: TargetArch = TargetArch()

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != self.arch.param_count:
            raise ShapeMismatchError("target-params", (theta.size,), (self.arch.param_count,))
        object.__setattr__(self, "theta", theta)

    def layers(self) -> list[tuple[Array, Array]]:
        return [(self.theta[w_sl].reshape(w_shape), self.theta[b_sl])
                for w_sl, w_shape, b_sl, _ in self.arch.slices()]

    @staticmethod
    def from_layers(arch: TargetArch, layers: list[tuple[Array, Array]]) -> "TargetNetParams":
        parts = []
        for w, b in layers:
            parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
            parts.append(np.asarray(b, dtype=np.float64).reshape(-1))
        return TargetNetParams(np.concatenate(parts), arch)


# ---- hypernetwork ----------------------------------------------------------


@dataclass
class HyperNetwork:
    """Encoder + weight-generation head; ``phi`` holds every trainable tensor.

    Tensor names are ``enc.{i}.w`` / ``enc.{i}.b`` and ``head.{i}.w`` /
    ``head.{i}.b``; the sorted name order is the canonical serialization
    order.
    """

    arch: TargetArch
    n_enc: int
    d_lat: int
    phi: dict[str, Array]

    def names(self) -> list[str]:
        return sorted(self.phi)

    def num_params(self) -> int:
        return sum(t.size for t in self.phi.values())

    def copy_phi(self) -> dict[str, Array]:
        return {k: v.copy() for k, v in self.phi.items()}

    def _stage_layers(self, stage: str) -> int:
        return sum(1 for k in self.phi if k.startswith(stage + ".") and k.endswith(".w"))


def reference_target_init(rng: np.random.Generator, arch: TargetArch,
                          output_gain: float = 0.2) -> Array:
    """A healthy standalone init for the target net, flattened.

    Hidden layers use +-sqrt(6/fan_in); the output layer is shrunk by
    ``output_gain`` so the initial occupancy stays close to 0.5 while hidden
    units remain active.  Used as the head's output bias so every emitted
    weight vector starts from a trainable network rather than the zero
    function (an all-zero target net is a saddle with no gradient into its
    weights).
    """
    parts = []
    shapes = arch.layer_shapes()
    for i, ((wo, wi), _) in enumerate(shapes):
        bound = np.sqrt(6.0 / wi)
        w = rng.uniform(-bound, bound, wo * wi)
        if i == len(shapes) - 1:
            w *= output_gain
        parts.append(w)
        parts.append(np.zeros(wo))
    return np.concatenate(parts)


def init_hypernetwork(rng: np.random.Generator,
                      arch: TargetArch = TargetArch(),
                      n_enc: int = 16,
                      enc_hidden: tuple[int, ...] = (256,),
                      d_lat: int = 128,
                      head_hidden: tuple[int, ...] = (256,),
                      head_output_scale: float = 0.1) -> HyperNetwork:
    """Uniform +-1/sqrt(fan_in) init for every layer; the head's output layer
    weight is shrunk by ``head_output_scale`` and its bias is replaced by a
    reference target-net init, so the initial field is near 0.5 everywhere
    with gradients flowing to all emitted weights."""
    enc_widths = (n_enc ** 3, *enc_hidden, d_lat)
    head_widths = (d_lat, *head_hidden, arch.param_count)
    phi: dict[str, Array] = {}

    def init_stage(stage: str, widths: tuple[int, ...]):
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            bound = 1.0 / np.sqrt(fan_in)
            phi[f"{stage}.{i}.w"] = rng.uniform(-bound, bound, (fan_out, fan_in))
            phi[f"{stage}.{i}.b"] = rng.uniform(-bound, bound, fan_out)

    init_stage("enc", enc_widths)
    init_stage("head", head_widths)
    last = len(head_widths) - 2
    phi[f"head.{last}.w"] *= head_output_scale
    phi[f"head.{last}.b"] = reference_target_init(rng, arch)
    return HyperNetwork(arch=arch, n_enc=n_enc, d_lat=d_lat, phi=phi)


def encoder_input(hn: HyperNetwork, grid: VoxelGrid) -> Array:
    """Flatten the grid at encoder resolution (majority-pool if finer)."""
    if grid.n % hn.n_enc != 0:
        raise DataError(f"grid resolution {grid.n} not divisible by encoder input {hn.n_enc}")
    pooled = downsample(grid, grid.n // hn.n_enc)
    return pooled.occupancy.astype(np.float64)


def _mlp_stage(hn: HyperNetwork, stage: str, x: Array) -> Array:
    layers = hn._stage_layers(stage)
    for i in range(layers):
        x = hn.phi[f"{stage}.{i}.w"] @ x + hn.phi[f"{stage}.{i}.b"]
        if i < layers - 1:
            x = np.maximum(x, 0.0)
    return x


def encoder_forward(hn: HyperNetwork, grid: VoxelGrid) -> Array:
    """Latent embedding of a voxel grid (linear output layer)."""
    return _mlp_stage(hn, "enc", encoder_input(hn, grid))


def head_forward(hn: HyperNetwork, latent: Array) -> TargetNetParams:
    """Expand a latent embedding into target-network weights."""
    if latent.shape != (hn.d_lat,):
        raise ShapeMismatchError("head", latent.shape, (hn.d_lat,))
    return TargetNetParams(_mlp_stage(hn, "head", latent), hn.arch)


def hyper_forward(hn: HyperNetwork, grid: VoxelGrid) -> tuple[Array, TargetNetParams]:
    """Grid -> (latent, target weights).  Pure and deterministic."""
    latent = encoder_forward(hn, grid)
    return latent, head_forward(hn, latent)


# ---- target network forward passes ----------------------------------------


def target_point_batch(params: TargetNetParams, points: Array) -> Array:
    """Occupancy scores for a (B, 3) batch of points; returns (B,)."""
    h = np.asarray(points, dtype=np.float64)
    layers = params.layers()
    for w, b in layers[:-1]:
        h = np.maximum(h @ w.T + b, 0.0)
    w, b = layers[-1]
    return expit(h @ w.T + b)[:, 0]


def target_point_forward(params: TargetNetParams, point) -> float:
    """Occupancy score of a single 3D point."""
    return float(target_point_batch(params, np.asarray(point, dtype=np.float64)[None, :])[0])


def target_interval_batch(params: TargetNetParams, lo: Array, hi: Array) -> tuple[Array, Array]:
    """Occupancy bounds for (B, 3) batches of box corners; returns ((B,), (B,))."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    layers = params.layers()
    for w, b in layers[:-1]:
        lo, hi = dense_interval_arrays(w, b, lo, hi)
        lo = np.maximum(lo, 0.0)
        hi = np.maximum(hi, 0.0)
    w, b = layers[-1]
    lo, hi = dense_interval_arrays(w, b, lo, hi)
    return expit(lo[:, 0]), expit(hi[:, 0])


def target_interval_forward(params: TargetNetParams, cube: Box3) -> Interval:
    """Sound occupancy interval for a whole box."""
    lo, hi = target_interval_batch(params, cube.lo[None, :], cube.hi[None, :])
    return Interval(float(lo[0]), float(hi[0]))


_FIELD_MODES = {
    "point": "point", "point-at-center": "point",
    "interval-lo": "lo", "interval-worst-lo": "lo",
    "interval-hi": "hi", "interval-worst-hi": "hi",
    "interval-mid": "mid", "interval": "mid",
}


def field_eval_bounds(params: TargetNetParams, m: int) -> tuple[Array, Array]:
    """Occupancy bounds over every cell of an m-resolution grid; two (m,m,m)
    arrays indexed [x, y, z]."""
    if m < 1:
        raise DataError(f"resolution must be >= 1, got {m}")
    lo_out = np.empty(m ** 3)
    hi_out = np.empty(m ** 3)
    step = 1.0 / m
    for start in range(0, m ** 3, _EVAL_CHUNK):
        idx = np.arange(start, min(start + _EVAL_CHUNK, m ** 3))
        lows = cell_lower_corners(m, idx)
        lo_out[idx], hi_out[idx] = target_interval_batch(params, lows, lows + step)
    return (lo_out.reshape(m, m, m).transpose(0, 2, 1),
            hi_out.reshape(m, m, m).transpose(0, 2, 1))


def field_eval_grid(params: TargetNetParams, m: int, mode: str = "point") -> Array:
    """Dense occupancy field at resolution m, independent of the training
    resolution.  Point mode evaluates cell centers; the interval modes return
    the per-cell lower bound, upper bound, or midpoint."""
    if mode not in _FIELD_MODES:
        raise ValueError(f"unknown field mode {mode!r}")
    resolved = _FIELD_MODES[mode]
    if resolved == "point":
        if m < 1:
            raise DataError(f"resolution must be >= 1, got {m}")
        out = np.empty(m ** 3)
        step = 1.0 / m
        for start in range(0, m ** 3, _EVAL_CHUNK):
            idx = np.arange(start, min(start + _EVAL_CHUNK, m ** 3))
            centers = cell_lower_corners(m, idx) + 0.5 * step
            out[idx] = target_point_batch(params, centers)
        return out.reshape(m, m, m).transpose(0, 2, 1)
    lo, hi = field_eval_bounds(params, m)
    if resolved == "lo":
        return lo
    if resolved == "hi":
        return hi
    return 0.5 * (lo + hi)


# ---- tape-recorded forward passes (training path) --------------------------


def hyper_forward_tape(tape: Tape, hn: HyperNetwork, x_enc: Array
                       ) -> tuple[dict[str, Node], Node]:
    """Record the hypernetwork forward pass; returns ({name: leaf}, theta)."""
    leaves = {name: tape.leaf(hn.phi[name]) for name in hn.names()}
    x = tape.constant(x_enc)
    for stage in ("enc", "head"):
        layers = hn._stage_layers(stage)
        for i in range(layers):
            x = tape.affine(x, leaves[f"{stage}.{i}.w"], leaves[f"{stage}.{i}.b"])
            if i < layers - 1:
                x = x.relu()
    return leaves, x


def target_param_nodes(tape: Tape, theta: Node, arch: TargetArch
                       ) -> list[tuple[Node, Node]]:
    """Slice the flat theta node into per-layer (W, b) nodes."""
    out = []
    for w_sl, w_shape, b_sl, _ in arch.slices():
        w = theta.slice1d(w_sl.start, w_sl.stop).reshape(w_shape)
        b = theta.slice1d(b_sl.start, b_sl.stop)
        out.append((w, b))
    return out


def target_point_tape(tape: Tape, layer_nodes: list[tuple[Node, Node]], points: Array) -> Node:
    """Record the point forward pass for a (B, 3) batch; returns (B, 1) scores."""
    h = tape.constant(points)
    for w, b in layer_nodes[:-1]:
        h = tape.affine(h, w, b).relu()
    w, b = layer_nodes[-1]
    return tape.affine(h, w, b).sigmoid()


def target_interval_tape(tape: Tape, layer_nodes: list[tuple[Node, Node]],
                         lo: Array, hi: Array) -> tuple[Node, Node]:
    """Record interval propagation for (B, 3) box corners.

    Uses the center/radius form per layer (two matrix products), re-splitting
    into endpoints around each activation; returns (B, 1) occupancy bounds.
    """
    lo_n = tape.constant(lo)
    hi_n = tape.constant(hi)
    last = len(layer_nodes) - 1
    for i, (w, b) in enumerate(layer_nodes):
        center = (hi_n + lo_n).scale(0.5)
        radius = (hi_n - lo_n).scale(0.5)
        center = tape.affine(center, w, b)
        radius = tape.linear(radius, w.abs())
        lo_n = center - radius
        hi_n = center + radius
        if i < last:
            lo_n = lo_n.relu()
            hi_n = hi_n.relu()
    return lo_n.sigmoid(), hi_n.sigmoid()


# ---- checkpoints ------------------------------------------------------------


def save_checkpoint(path, hn: HyperNetwork, meta: dict | None = None) -> None:
    """Binary checkpoint: magic, length-prefixed JSON header, raw f64 tensors.

    Byte-exact given identical weights and metadata.
    """
    names = hn.names()
    header = {
        "format": 1,
        "target_hidden": list(hn.arch.hidden),
        "n_enc": hn.n_enc,
        "d_lat": hn.d_lat,
        "tensors": [[name, list(hn.phi[name].shape)] for name in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(len(blob).to_bytes(8, "little"))
        fp.write(blob)
        for name in names:
            fp.write(np.ascontiguousarray(hn.phi[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[HyperNetwork, dict]:
    with open(path, "rb") as fp:
        magic = fp.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic in {path}")
        try:
            size = int.from_bytes(fp.read(8), "little")
            header = json.loads(fp.read(size).decode())
            phi = {}
            for name, shape in header["tensors"]:
                count = int(np.prod(shape, dtype=np.int64)) if shape else 1
                buf = fp.read(count * 8)
                if len(buf) != count * 8:
                    raise CheckpointError(f"truncated tensor {name} in {path}")
                phi[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
            hn = HyperNetwork(arch=TargetArch(tuple(header["target_hidden"])),
                              n_enc=int(header["n_enc"]),
                              d_lat=int(header["d_lat"]),
                              phi=phi)
            return hn, header.get("meta", {})
        except CheckpointError:
            raise
        except Exception as exc:
            raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
