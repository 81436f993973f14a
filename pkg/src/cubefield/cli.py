"""Command-line entry point.

Subcommands wire the library into reproducible runs: ``gen-data`` writes
procedural binvox fixtures, ``train`` fits a checkpoint and logs telemetry,
``reconstruct`` extracts a mesh from one input at any resolution, ``eval``
scores a dataset and prints the scaled metric table, and ``interpolate``
emits a mesh sequence blending two shapes.

Exit codes: 0 success, 2 usage error, 3 data/file error, 4 numeric
divergence.  ``--threads`` (or the CUBEFIELD_THREADS environment variable)
caps the BLAS worker pool; the cap is applied through the standard
*_NUM_THREADS variables, so it must be resolved before numpy loads — which
is why the heavy imports below live inside the command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (BinvoxFormatError, CheckpointError, CubefieldError,
                     DataError, DivergenceError, IntervalError)

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

_KIND_CHOICES = ("sphere", "box", "torus", "two-spheres", "union-of-two-spheres",
                 "frame", "mixed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cubefield",
        description="Hypernetwork occupancy fields over voxel grids.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads (env: CUBEFIELD_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate procedural binvox shapes")
    p.add_argument("--kind", choices=_KIND_CHOICES, default="mixed")
    p.add_argument("--n", type=int, default=32, help="grid resolution")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a checkpoint on a binvox dataset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--variant", choices=("point", "interval"), default=None)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any other config field")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="extract a mesh from one shape")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="binvox file")
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--mode", choices=("point", "interval"), default="point")
    p.add_argument("--iso", type=float, default=0.5)
    p.add_argument("--out", required=True, help="OBJ path")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="score reconstructions for a dataset")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("point", "interval"), default=None,
                   help="field mode; defaults to the checkpoint's variant")
    p.add_argument("--oracle-gt", action="store_true",
                   help="score the ground-truth labels themselves (harness)")
    p.add_argument("--components", action="store_true",
                   help="include per-component triangle counts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interpolate", help="mesh sequence blending two shapes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--a", required=True, help="first binvox input")
    p.add_argument("--b", required=True, help="second binvox input")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--space", choices=("latent", "theta"), default="latent")
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--mode", choices=("point", "interval"), default="point")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_interpolate)
    return parser


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("CUBEFIELD_THREADS")
        if env:
            threads = int(env)
    if threads is not None:
        if threads < 1:
            raise ValueError(f"thread cap must be >= 1, got {threads}")
        for var in _THREAD_VARS:
            os.environ.setdefault(var, str(threads))


# ---- gen-data ---------------------------------------------------------------


def _jitter_params(kind: str, rng) -> dict:
    def tup(values):
        return tuple(float(v) for v in values)

    if kind == "sphere":
        return {"center": tup(0.5 + rng.uniform(-0.08, 0.08, 3)),
                "radius": float(rng.uniform(0.15, 0.3))}
    if kind == "box":
        return {"lo": tup(rng.uniform(0.1, 0.35, 3)),
                "hi": tup(rng.uniform(0.6, 0.9, 3))}
    if kind == "torus":
        return {"center": (float(0.5 + rng.uniform(-0.05, 0.05)),
                           float(0.5 + rng.uniform(-0.05, 0.05)),
                           float(0.5 + rng.uniform(-0.1, 0.1))),
                "major_radius": float(rng.uniform(0.22, 0.3)),
                "minor_radius": float(rng.uniform(0.07, 0.12))}
    if kind == "two_spheres":
        base1, base2 = (0.3, 0.35, 0.35), (0.7, 0.65, 0.65)
        return {"center1": tup(c + d for c, d in zip(base1, rng.uniform(-0.04, 0.04, 3))),
                "radius1": float(rng.uniform(0.12, 0.18)),
                "center2": tup(c + d for c, d in zip(base2, rng.uniform(-0.04, 0.04, 3))),
                "radius2": float(rng.uniform(0.12, 0.18))}
    if kind == "frame":
        return {"lo": tup(rng.uniform(0.15, 0.25, 3)),
                "hi": tup(rng.uniform(0.75, 0.85, 3)),
                "thickness": float(rng.uniform(0.1, 0.14))}
    raise DataError(f"unknown kind {kind!r}")


def cmd_gen_data(args) -> int:
    import numpy as np

    from .voxels import DESK_SHAPES, SHAPE_KINDS, gen_shape, save_binvox

    if args.count < 0:
        raise ValueError("count must be >= 0")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    kind = args.kind.replace("-", "_")
    if kind == "union_of_two_spheres":
        kind = "two_spheres"
    entries = []
    for i in range(args.count):
        if kind == "mixed":
            if i < len(DESK_SHAPES):
                _, shape_kind, params = DESK_SHAPES[i]
            else:
                shape_kind = SHAPE_KINDS[i % len(SHAPE_KINDS)]
                params = _jitter_params(shape_kind, rng)
        else:
            shape_kind = kind
            params = {} if i == 0 else _jitter_params(kind, rng)
        grid = gen_shape(shape_kind, args.n, params)
        fname = f"shape_{i:04d}.binvox"
        save_binvox(grid, out_dir / fname)
        entries.append({"file": fname, "kind": shape_kind,
                        "params": _jsonable(params), "occupied": grid.count})
    manifest = {"n": args.n, "seed": args.seed, "kind": args.kind,
                "count": args.count, "shapes": entries}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {args.count} shapes + manifest to {out_dir}")
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    return obj


def _load_dataset(data_dir: Path):
    from .voxels import load_binvox

    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json in {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    grids, ids = [], []
    for entry in manifest["shapes"]:
        grids.append(load_binvox(data_dir / entry["file"]))
        ids.append(Path(entry["file"]).stem)
    if not grids:
        raise DataError(f"manifest in {data_dir} lists no shapes")
    resolutions = {g.n for g in grids}
    if len(resolutions) != 1:
        raise DataError(f"mixed grid resolutions {sorted(resolutions)}")
    return grids, ids


# ---- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    from dataclasses import replace

    from .nets import HyperNetwork, TargetArch, save_checkpoint
    from .training import TrainConfig, train

    config = TrainConfig()
    explicit: set[str] = set()
    if args.config:
        text = Path(args.config).read_text()
        config = TrainConfig.from_text(text, base=config)
        explicit |= {line.split("=")[0].strip() for line in text.splitlines()
                     if "=" in line.split("#")[0]}
    overrides = {}
    for flag, key in (("variant", "variant"), ("epochs", "epochs"), ("seed", "seed"),
                      ("lr", "learning_rate"), ("batch", "batch_cubes")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    extra = "\n".join(args.set)
    if extra:
        config = TrainConfig.from_text(extra, base=config)
        explicit |= {line.split("=")[0].strip() for line in extra.splitlines()}
    if overrides:
        config = replace(config, **overrides)
        explicit |= set(overrides)

    grids, _ = _load_dataset(Path(args.data_dir))
    if "resolution" not in explicit and grids[0].n != config.resolution:
        config = replace(config, resolution=grids[0].n)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    (out.parent / (out.name + ".config")).write_text(config.to_text())
    telemetry_path = out.parent / (out.name + ".telemetry.jsonl")

    meta = {"variant": config.variant, "config": json.loads(
        json.dumps({k: list(v) if isinstance(v, tuple) else v
                    for k, v in config.__dict__.items()})),
        "data_resolution": grids[0].n}
    try:
        model, telemetry = train(grids, config, telemetry_path=telemetry_path)
    except DivergenceError as exc:
        print(f"error: {exc}; writing last finite checkpoint", file=sys.stderr)
        if exc.last_good is not None:
            shell = HyperNetwork(arch=TargetArch(config.target_hidden),
                                 n_enc=config.n_enc, d_lat=config.d_lat,
                                 phi=exc.last_good)
            save_checkpoint(out, shell, meta={**meta, "diverged": True,
                                              "diverged_epoch": exc.epoch})
        return 4
    save_checkpoint(out, model, meta=meta)
    print(f"trained {config.variant} variant for {config.epochs} epochs; "
          f"final loss {telemetry[-1]['loss']:.6f}; checkpoint {out}")
    return 0


# ---- reconstruct ----------------------------------------------------------------


def _field_mode(cli_mode: str) -> str:
    return "point" if cli_mode == "point" else "interval-mid"


def cmd_reconstruct(args) -> int:
    from .mesh import export_obj, marching_cubes
    from .nets import field_eval_grid, hyper_forward, load_checkpoint
    from .voxels import load_binvox

    model, _ = load_checkpoint(args.checkpoint)
    grid = load_binvox(args.input)
    _, params = hyper_forward(model, grid)
    values = field_eval_grid(params, args.res, mode=_field_mode(args.mode))
    mesh = marching_cubes(values, args.iso)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_obj(mesh, out)
    if mesh.is_empty:
        print(f"warning: empty mesh (no iso crossing) written to {out}", file=sys.stderr)
    else:
        print(f"wrote {mesh.num_vertices} vertices, {mesh.num_triangles} triangles to {out}")
    return 0


# ---- eval -----------------------------------------------------------------------


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .nets import load_checkpoint

    model, meta = (None, {})
    if args.checkpoint:
        model, meta = load_checkpoint(args.checkpoint)
    elif not args.oracle_gt:
        raise DataError("eval needs --checkpoint unless --oracle-gt is set")
    mode = args.mode
    if mode is None:
        mode = "interval" if meta.get("variant") == "interval" else "point"
    grids, ids = _load_dataset(Path(args.data_dir))
    report = evaluate(model, grids, args.res, samples_k=args.samples,
                      mode=_field_mode(mode), seed=args.seed, ids=ids,
                      component_sizes=args.components, oracle_gt=args.oracle_gt)
    report.metadata["variant"] = meta.get("variant", "oracle" if args.oracle_gt else "unknown")
    if args.checkpoint:
        report.metadata["checkpoint"] = str(args.checkpoint)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    print(report.format_table())
    return 0


# ---- interpolate ------------------------------------------------------------------


def cmd_interpolate(args) -> int:
    from .interp import interpolation_sequence, interpolation_ts
    from .mesh import export_obj
    from .nets import load_checkpoint
    from .voxels import load_binvox

    model, _ = load_checkpoint(args.checkpoint)
    grid_a = load_binvox(args.a)
    grid_b = load_binvox(args.b)
    meshes = interpolation_sequence(model, grid_a, grid_b, args.steps,
                                    space=args.space, m=args.res,
                                    mode=_field_mode(args.mode))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = interpolation_ts(args.steps)
    entries = []
    for i, (t, mesh) in enumerate(zip(ts, meshes)):
        fname = f"step_{i:03d}.obj"
        export_obj(mesh, out_dir / fname)
        entries.append({"t": t, "file": fname, "triangles": mesh.num_triangles})
    index = {"space": args.space, "res": args.res, "mode": args.mode,
             "steps": entries}
    (out_dir / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")
    print(f"wrote {args.steps} meshes to {out_dir}")
    return 0


# ---- driver -------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _apply_thread_cap(args.threads)
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, BinvoxFormatError, CheckpointError, IntervalError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except CubefieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
