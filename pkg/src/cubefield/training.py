"""Training loops for the two occupancy-field variants.

The point variant samples one uniform point per selected cell and regresses
the occupancy score to the cell label with mean squared error.  The interval
variant propagates each whole cell through the network and penalizes the
least favorable endpoint of the resulting occupancy interval (lower bound for
inside cells, upper bound for outside cells), so a zero loss certifies that
every point of every training cell is classified correctly.

Batches are class-balanced because occupancy grids are dominated by empty
cells.  All randomness flows from one seeded generator in a fixed call order,
which makes two runs with the same config bitwise identical.
"""

from __future__ import annotations

import json
import resource
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .errors import DataError, DivergenceError
from .nets import (HyperNetwork, TargetArch, TargetNetParams, encoder_input,
                   hyper_forward_tape, init_hypernetwork, target_interval_batch,
                   target_interval_tape, target_param_nodes, target_point_batch,
                   target_point_tape)
from .voxels import LabeledCube, VoxelGrid, cell_lower_corners

Array = np.ndarray

VARIANTS = ("point", "interval")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "point"
    epochs: int = 400
    batch_cubes: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    resolution: int = 32
    balance: float = 0.5          # inside fraction of each batch
    n_enc: int = 16
    enc_hidden: tuple[int, ...] = (256,)
    d_lat: int = 128
    head_hidden: tuple[int, ...] = (256,)
    target_hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.learning_rate <= 0:
            raise DataError("learning-rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DataError("adam betas must lie in (0, 1)")
        if self.batch_cubes < 1:
            raise DataError("batch size must be >= 1")
        if not 0 <= self.balance <= 1:
            raise DataError("class-balance fraction must lie in [0, 1]")
        for name in ("enc_hidden", "head_hidden", "target_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def to_text(self) -> str:
        """key=value serialization, sorted; tuples are comma-joined."""
        lines = []
        for key, value in sorted(asdict(self).items()):
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        cfg = base or TrainConfig()
        fields = {f: type(getattr(cfg, f)) for f in asdict(cfg)}
        updates = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise DataError(f"config line {lineno}: unknown key {key!r}")
            kind = fields[key]
            try:
                if kind is tuple:
                    updates[key] = tuple(int(v) for v in value.split(",") if v)
                elif kind is int:
                    updates[key] = int(value)
                elif kind is float:
                    updates[key] = float(value)
                else:
                    updates[key] = value
            except ValueError:
                raise DataError(f"config line {lineno}: bad value for {key}: {value!r}") from None
        return replace(cfg, **updates)


# ---- losses (contract surface; the loop uses the vectorized path) ----------


def loss_point(params: TargetNetParams, batch: list[tuple]) -> float:
    """Mean squared error of point occupancy scores against cell labels."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    pts = np.array([p for p, _ in batch], dtype=np.float64)
    labels = np.array([y for _, y in batch], dtype=np.float64)
    preds = target_point_batch(params, pts)
    return float(np.mean((preds - labels) ** 2))


def loss_interval(params: TargetNetParams, batch: list[LabeledCube]) -> float:
    """Mean squared error of the worst-case endpoint against cell labels."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    lo = np.array([c.cube.lo for c in batch], dtype=np.float64)
    hi = np.array([c.cube.hi for c in batch], dtype=np.float64)
    labels = np.array([c.label for c in batch], dtype=np.float64)
    occ_lo, occ_hi = target_interval_batch(params, lo, hi)
    worst = np.where(labels == 1.0, occ_lo, occ_hi)
    return float(np.mean((worst - labels) ** 2))


# ---- optimizer --------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, Array]
    v: dict[str, Array]
    step: int = 0


def init_optimizer(phi: dict[str, Array]) -> OptimizerState:
    return OptimizerState(m={k: np.zeros_like(p) for k, p in phi.items()},
                          v={k: np.zeros_like(p) for k, p in phi.items()})


def adam_step(phi: dict[str, Array], grads: dict[str, Array],
              state: OptimizerState, config: TrainConfig) -> None:
    """Bias-corrected Adam update, in place."""
    for name in phi:
        if name not in grads:
            raise DataError(f"missing gradient for {name}")
        if not np.isfinite(grads[name]).all():
            raise DivergenceError(f"non-finite gradient in {name} at adam step {state.step + 1}")
    t = state.step + 1
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    # p -= lr * m_hat / (sqrt(v_hat) + eps), folded so the big temporaries stay O(1)
    step_size = config.learning_rate * np.sqrt(c2) / c1
    eps_t = config.eps * np.sqrt(c2)
    for name in sorted(phi):
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * np.square(g)
        denom = np.sqrt(v)
        denom += eps_t
        phi[name] -= step_size * (m / denom)
    state.step = t


# ---- batch sampling ----------------------------------------------------------


def sample_balanced_batch(rng: np.random.Generator, inside_idx: Array, outside_idx: Array,
                          batch: int, balance: float) -> tuple[Array, Array]:
    """Flat cell indices and labels with ~``balance`` inside fraction.

    Falls back to a single class if the other is empty.
    """
    n_in = int(round(batch * balance))
    if inside_idx.size == 0:
        n_in = 0
    elif outside_idx.size == 0:
        n_in = batch
    n_out = batch - n_in
    parts = []
    if n_in:
        parts.append(rng.choice(inside_idx, size=n_in, replace=True))
    if n_out:
        parts.append(rng.choice(outside_idx, size=n_out, replace=True))
    idx = np.concatenate(parts)
    labels = np.concatenate([np.ones(n_in), np.zeros(n_out)])
    return idx, labels


# ---- training loop ------------------------------------------------------------


def _peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def train(dataset: list[VoxelGrid], config: TrainConfig,
          telemetry_path=None, on_epoch=None) -> tuple[HyperNetwork, list[dict]]:
    """Fit one hypernetwork to every grid in ``dataset``.

    Each epoch visits the shapes once in a seeded random order and takes one
    optimizer step per shape.  Returns the trained model and per-epoch
    telemetry records; raises :class:`DivergenceError` carrying the last
    finite-loss weights if the loss leaves the reals.
    """
    if not dataset:
        raise DataError("empty dataset")
    resolutions = {g.n for g in dataset}
    if len(resolutions) != 1:
        raise DataError(f"mixed grid resolutions {sorted(resolutions)}")
    if config.resolution not in resolutions:
        raise DataError(f"config resolution {config.resolution} != data resolution {resolutions.pop()}")

    rng = np.random.default_rng(config.seed)
    hn = init_hypernetwork(rng,
                           arch=TargetArch(config.target_hidden),
                           n_enc=config.n_enc,
                           enc_hidden=config.enc_hidden,
                           d_lat=config.d_lat,
                           head_hidden=config.head_hidden)
    state = init_optimizer(hn.phi)

    n = config.resolution
    enc_inputs = [encoder_input(hn, g) for g in dataset]
    inside = [np.flatnonzero(g.occupancy) for g in dataset]
    outside = [np.flatnonzero(g.occupancy == 0) for g in dataset]

    last_good = hn.copy_phi()
    telemetry: list[dict] = []
    tel_fp = open(telemetry_path, "w") if telemetry_path else None
    steps_done = 0
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            losses = []
            for si in rng.permutation(len(dataset)):
                try:
                    loss = _train_step(hn, state, config, rng,
                                       enc_inputs[si], inside[si], outside[si], n)
                except DivergenceError as exc:
                    exc.last_good = last_good
                    exc.epoch = epoch
                    raise
                if not np.isfinite(loss):
                    raise DivergenceError(f"loss became {loss} at epoch {epoch}",
                                          last_good=last_good, epoch=epoch)
                losses.append(loss)
                steps_done += 1
            for name in hn.phi:
                np.copyto(last_good[name], hn.phi[name])
            record = {
                "epoch": epoch,
                "step": steps_done,
                "loss": float(np.mean(losses)),
                "wall_ms": (time.perf_counter() - t0) * 1e3,
                "mem_bytes": _peak_rss_bytes(),
            }
            telemetry.append(record)
            if tel_fp:
                tel_fp.write(json.dumps(record, sort_keys=True) + "\n")
            if on_epoch:
                on_epoch(record)
    finally:
        if tel_fp:
            tel_fp.close()
    return hn, telemetry


def _train_step(hn: HyperNetwork, state: OptimizerState, config: TrainConfig,
                rng: np.random.Generator, x_enc: Array,
                inside_idx: Array, outside_idx: Array, n: int) -> float:
    idx, labels = sample_balanced_batch(rng, inside_idx, outside_idx,
                                        config.batch_cubes, config.balance)
    lows = cell_lower_corners(n, idx)
    step = 1.0 / n

    tape = Tape()
    leaves, theta = hyper_forward_tape(tape, hn, x_enc)
    layer_nodes = target_param_nodes(tape, theta, hn.arch)
    y = labels[:, None]

    if config.variant == "point":
        points = lows + rng.uniform(0.0, step, lows.shape)
        pred = target_point_tape(tape, layer_nodes, points)
    else:
        occ_lo, occ_hi = target_interval_tape(tape, layer_nodes, lows, lows + step)
        mask = tape.constant(y)
        inv_mask = tape.constant(1.0 - y)
        pred = occ_lo * mask + occ_hi * inv_mask
    diff = pred - tape.constant(y)
    loss = (diff * diff).mean()

    grads_by_id = tape.backward(loss)
    grads = {name: grads_by_id[node.nid] for name, node in leaves.items()}
    adam_step(hn.phi, grads, state, config)
    return float(loss.value)
