import json
import os

import numpy as np
import pytest

from cubefield.cli import main
from cubefield.voxels import load_binvox

TINY_TRAIN = ["--set", "n_enc=4", "--set", "enc_hidden=16", "--set", "d_lat=8",
              "--set", "head_hidden=16", "--set", "target_hidden=8",
              "--epochs", "3", "--batch", "32"]


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert run("gen-data", "--kind", "mixed", "--n", "8", "--count", "2",
               "--seed", "0", "--out-dir", str(out)) == 0
    return out


@pytest.fixture()
def trained(tmp_path, data_dir):
    ckpt = tmp_path / "model.ckpt"
    code = run("train", "--data-dir", str(data_dir), "--variant", "point",
               "--out", str(ckpt), *TINY_TRAIN)
    assert code == 0
    return ckpt


def test_gen_data_writes_files_and_manifest(tmp_path):
    out = tmp_path / "d"
    assert run("gen-data", "--kind", "sphere", "--n", "8", "--count", "3",
               "--seed", "1", "--out-dir", str(out)) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["manifest.json", "shape_0000.binvox", "shape_0001.binvox",
                     "shape_0002.binvox"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 3
    assert all(e["kind"] == "sphere" for e in manifest["shapes"])
    grid = load_binvox(out / "shape_0000.binvox")
    assert grid.n == 8


def test_gen_data_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("gen-data", "--kind", "mixed", "--n", "8", "--count", "10",
                   "--seed", "5", "--out-dir", str(out)) == 0
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_gen_data_count_zero_manifest_only(tmp_path):
    out = tmp_path / "z"
    assert run("gen-data", "--kind", "box", "--n", "8", "--count", "0",
               "--seed", "0", "--out-dir", str(out)) == 0
    assert [p.name for p in out.iterdir()] == ["manifest.json"]


def test_gen_data_accepts_spec_kind_alias(tmp_path):
    out = tmp_path / "u"
    assert run("gen-data", "--kind", "union-of-two-spheres", "--n", "8",
               "--count", "1", "--seed", "0", "--out-dir", str(out)) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["shapes"][0]["kind"] == "two_spheres"


def test_train_writes_checkpoint_telemetry_config(tmp_path, data_dir):
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--data-dir", str(data_dir), "--variant", "point",
               "--out", str(ckpt), *TINY_TRAIN) == 0
    assert ckpt.exists()
    telemetry = (tmp_path / "m.ckpt.telemetry.jsonl").read_text().splitlines()
    assert len(telemetry) == 3  # exactly `epochs` records
    resolved = (tmp_path / "m.ckpt.config").read_text()
    assert "epochs=3" in resolved
    assert "resolution=8" in resolved  # picked up from the data


def test_train_missing_manifest_is_data_error(tmp_path):
    empty = tmp_path / "nodata"
    empty.mkdir()
    assert run("train", "--data-dir", str(empty), "--variant", "point",
               "--out", str(tmp_path / "x.ckpt"), *TINY_TRAIN) == 3


def test_train_config_file_with_flag_override(tmp_path, data_dir):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs=5\nbatch_cubes=16\nn_enc=4\nenc_hidden=16\n"
                   "d_lat=8\nhead_hidden=16\ntarget_hidden=8\n")
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--data-dir", str(data_dir), "--variant", "point",
               "--config", str(cfg), "--epochs", "2", "--out", str(ckpt)) == 0
    assert "epochs=2" in (tmp_path / "m.ckpt.config").read_text()
    telemetry = (tmp_path / "m.ckpt.telemetry.jsonl").read_text().splitlines()
    assert len(telemetry) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(tmp_path, data_dir):
    ckpt = tmp_path / "d.ckpt"
    code = run("train", "--data-dir", str(data_dir), "--variant", "point",
               "--out", str(ckpt), *TINY_TRAIN, "--lr", "1e150")
    assert code == 4
    assert ckpt.exists()  # last finite weights were saved


def test_train_determinism_same_seed_same_bytes(tmp_path, data_dir):
    outs = []
    for name in ("r1.ckpt", "r2.ckpt"):
        ckpt = tmp_path / name
        assert run("train", "--data-dir", str(data_dir), "--variant", "point",
                   "--out", str(ckpt), *TINY_TRAIN, "--seed", "3") == 0
        outs.append(ckpt)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    # telemetry matches on the deterministic fields
    t1 = [json.loads(l) for l in (tmp_path / "r1.ckpt.telemetry.jsonl").read_text().splitlines()]
    t2 = [json.loads(l) for l in (tmp_path / "r2.ckpt.telemetry.jsonl").read_text().splitlines()]
    for a, b in zip(t1, t2):
        assert a["loss"] == b["loss"]
        assert a["epoch"] == b["epoch"] and a["step"] == b["step"]


def test_reconstruct_multiple_resolutions(tmp_path, data_dir, trained):
    for m in (8, 16):
        out = tmp_path / f"r{m}.obj"
        assert run("reconstruct", "--checkpoint", str(trained),
                   "--input", str(data_dir / "shape_0000.binvox"),
                   "--res", str(m), "--mode", "point", "--out", str(out)) == 0
        assert out.exists()


def test_reconstruct_interval_mode(tmp_path, data_dir, trained):
    out = tmp_path / "ri.obj"
    assert run("reconstruct", "--checkpoint", str(trained),
               "--input", str(data_dir / "shape_0000.binvox"),
               "--res", "8", "--mode", "interval", "--out", str(out)) == 0


def test_reconstruct_empty_mesh_warns_but_succeeds(tmp_path, data_dir, trained, capsys):
    out = tmp_path / "e.obj"
    # iso above any occupancy value guarantees no crossing
    assert run("reconstruct", "--checkpoint", str(trained),
               "--input", str(data_dir / "shape_0000.binvox"),
               "--res", "8", "--iso", "1.5", "--out", str(out)) == 0
    assert "empty mesh" in capsys.readouterr().err
    assert out.read_text().startswith("#")


def test_reconstruct_bad_checkpoint_magic(tmp_path, data_dir):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbagemagic" + b"\x00" * 32)
    assert run("reconstruct", "--checkpoint", str(bad),
               "--input", str(data_dir / "shape_0000.binvox"),
               "--out", str(tmp_path / "x.obj")) == 3


def test_eval_oracle_gt(tmp_path, data_dir, capsys):
    out = tmp_path / "report.json"
    assert run("eval", "--data-dir", str(data_dir), "--res", "8",
               "--samples", "128", "--oracle-gt", "--out", str(out)) == 0
    report = json.loads(out.read_text())
    assert report["aggregate"]["mean_iou"] == 1.0
    assert report["aggregate"]["mean_mse"] == 0.0
    table = capsys.readouterr().out
    assert "IoU*1e2" in table and "100.00" in table


def test_eval_report_validates_against_schema(tmp_path, data_dir, trained):
    jsonschema = pytest.importorskip("jsonschema")
    from importlib import resources

    import cubefield

    out = tmp_path / "report.json"
    assert run("eval", "--checkpoint", str(trained), "--data-dir", str(data_dir),
               "--res", "8", "--samples", "64", "--components",
               "--out", str(out)) == 0
    schema = json.loads(resources.files(cubefield).joinpath(
        "schemas/eval_report.schema.json").read_text())
    report = json.loads(out.read_text())
    jsonschema.validate(report, schema)
    assert all("component_sizes" in s or s["components"] == 0
               for s in report["shapes"])


def test_interpolate_writes_sequence(tmp_path, data_dir, trained):
    out = tmp_path / "seq"
    assert run("interpolate", "--checkpoint", str(trained),
               "--a", str(data_dir / "shape_0000.binvox"),
               "--b", str(data_dir / "shape_0001.binvox"),
               "--steps", "5", "--res", "8", "--out-dir", str(out)) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["index.json"] + [f"step_{i:03d}.obj" for i in range(5)]
    index = json.loads((out / "index.json").read_text())
    assert [s["t"] for s in index["steps"]] == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_interpolate_endpoints_match_reconstruct_bytes(tmp_path, data_dir, trained):
    seq = tmp_path / "seq"
    assert run("interpolate", "--checkpoint", str(trained),
               "--a", str(data_dir / "shape_0000.binvox"),
               "--b", str(data_dir / "shape_0001.binvox"),
               "--steps", "2", "--res", "8", "--out-dir", str(seq)) == 0
    for step, shape in ((0, "shape_0000.binvox"), (1, "shape_0001.binvox")):
        obj = tmp_path / f"direct{step}.obj"
        assert run("reconstruct", "--checkpoint", str(trained),
                   "--input", str(data_dir / shape), "--res", "8",
                   "--mode", "point", "--out", str(obj)) == 0
        assert obj.read_bytes() == (seq / f"step_{step:03d}.obj").read_bytes()


def test_usage_errors_exit_2(tmp_path, data_dir, trained):
    assert run("interpolate", "--checkpoint", str(trained),
               "--a", str(data_dir / "shape_0000.binvox"),
               "--b", str(data_dir / "shape_0001.binvox"),
               "--space", "spiral", "--out-dir", str(tmp_path / "s")) == 2
    assert run("no-such-command") == 2
    assert run("gen-data", "--kind", "sphere", "--count", "-1",
               "--out-dir", str(tmp_path / "n")) == 2


def test_missing_input_file_exit_3(tmp_path, trained):
    assert run("reconstruct", "--checkpoint", str(trained),
               "--input", str(tmp_path / "missing.binvox"),
               "--out", str(tmp_path / "o.obj")) == 3


def test_threads_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("CUBEFIELD_THREADS", "2")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    out = tmp_path / "d"
    assert run("gen-data", "--kind", "sphere", "--n", "8", "--count", "1",
               "--seed", "0", "--out-dir", str(out)) == 0
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"


def test_threads_flag_invalid_exit_2(tmp_path):
    assert run("--threads", "0", "gen-data", "--kind", "sphere", "--n", "8",
               "--count", "1", "--seed", "0", "--out-dir", str(tmp_path / "t")) == 2
