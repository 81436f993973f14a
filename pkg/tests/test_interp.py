import numpy as np
import pytest

from cubefield.interp import interpolate, interpolation_sequence, interpolation_ts
from cubefield.nets import TargetArch, hyper_forward, init_hypernetwork
from cubefield.voxels import gen_shape


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(0)
    model = init_hypernetwork(rng, arch=TargetArch((16,)), n_enc=8,
                              enc_hidden=(32,), d_lat=16, head_hidden=(32,))
    grid_a = gen_shape("sphere", 16, {"radius": 0.3})
    grid_b = gen_shape("box", 16)
    return model, grid_a, grid_b


@pytest.mark.parametrize("space", ["latent", "theta"])
def test_endpoints_reproduce_standalone_weights(setup, space):
    model, grid_a, grid_b = setup
    _, pa = hyper_forward(model, grid_a)
    _, pb = hyper_forward(model, grid_b)
    p0 = interpolate(model, grid_a, grid_b, 0.0, space)
    p1 = interpolate(model, grid_a, grid_b, 1.0, space)
    assert p0.theta.tobytes() == pa.theta.tobytes()
    assert p1.theta.tobytes() == pb.theta.tobytes()


def test_theta_midpoint_is_elementwise_mean(setup):
    model, grid_a, grid_b = setup
    _, pa = hyper_forward(model, grid_a)
    _, pb = hyper_forward(model, grid_b)
    mid = interpolate(model, grid_a, grid_b, 0.5, "theta")
    assert np.allclose(mid.theta, 0.5 * (pa.theta + pb.theta), atol=1e-15)


def test_parameter_range_validated(setup):
    model, grid_a, grid_b = setup
    with pytest.raises(ValueError):
        interpolate(model, grid_a, grid_b, -0.1)
    with pytest.raises(ValueError):
        interpolate(model, grid_a, grid_b, 1.5)
    with pytest.raises(ValueError):
        interpolate(model, grid_a, grid_b, 0.5, space="spherical")


def test_sequence_lengths_and_ts(setup):
    model, grid_a, grid_b = setup
    meshes = interpolation_sequence(model, grid_a, grid_b, 4, m=8)
    assert len(meshes) == 4
    assert interpolation_ts(4) == [0.0, 1 / 3, 2 / 3, 1.0]
    with pytest.raises(ValueError):
        interpolation_sequence(model, grid_a, grid_b, 1, m=8)


def test_sequence_steps2_equals_endpoint_meshes(setup):
    from cubefield.mesh import marching_cubes
    from cubefield.nets import field_eval_grid

    model, grid_a, grid_b = setup
    meshes = interpolation_sequence(model, grid_a, grid_b, 2, m=8)
    for grid, mesh in zip((grid_a, grid_b), meshes):
        _, params = hyper_forward(model, grid)
        standalone = marching_cubes(field_eval_grid(params, 8, mode="point"), 0.5)
        assert np.array_equal(standalone.vertices, mesh.vertices)
        assert np.array_equal(standalone.triangles, mesh.triangles)


def test_sequence_deterministic(setup):
    model, grid_a, grid_b = setup
    m1 = interpolation_sequence(model, grid_a, grid_b, 3, m=8)
    m2 = interpolation_sequence(model, grid_a, grid_b, 3, m=8)
    for a, b in zip(m1, m2):
        assert a.vertices.tobytes() == b.vertices.tobytes()
        assert a.triangles.tobytes() == b.triangles.tobytes()
