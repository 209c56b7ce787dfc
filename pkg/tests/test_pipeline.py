import json

import numpy as np
import pytest

from surfflow.frame import Frame
from surfflow.io import write_json
from surfflow.marching_cubes import extract_isosurface
from surfflow.mesh import inflate_and_smooth
from surfflow.network import NetHyper
from surfflow.pipeline import PipelineConfig, PipelineError, identity_params, run_pipeline
from surfflow.synth import ShapeSpec, make_mask, make_sdf_volume
from surfflow.volume import LabelMask

HP = NetHyper(Q=1, K=3, C=8, C_mid=8, H=8)
C = (15.5, 15.5, 15.5)
DIMS = (32, 32, 32)


@pytest.fixture(scope="module")
def sphere_run():
    mask = make_mask(ShapeSpec("sphere", radius=9.0, center=C), DIMS)
    cfg = PipelineConfig(n_samples=2000)
    gt = extract_isosurface(make_sdf_volume(ShapeSpec("sphere", radius=9.0, center=C), DIMS), 0.0)
    return run_pipeline(mask, cfg, identity_params(HP), identity_params(HP), gt_inner=gt, gt_outer=gt)


def test_stages_and_split(sphere_run):
    names = [t["stage"] for t in sphere_run.timings]
    assert names == ["largest_component", "signed_distance", "sdf_postprocess", "topology_correction", "isosurface",
                     "initial_smoothing", "inner_flow", "inflate", "outer_flow"]
    split = sphere_run.split()
    assert split["vol"] > 0 and split["surf"] > 0
    assert split["vol"] + split["surf"] == pytest.approx(sum(t["seconds"] for t in sphere_run.timings))


def test_checks_genus_zero_and_clean(sphere_run):
    c = sphere_run.checks
    assert c["initial_euler"] == c["inner_euler"] == c["outer_euler"] == 2
    assert c["initial_sif"] == c["inner_sif"] == c["outer_sif"] == 0.0
    assert c["topology"]["changed_voxel_count"] == 0


def test_identity_networks_leave_meshes(sphere_run):
    inner, outer = sphere_run.inner_mesh, sphere_run.outer_mesh
    frame = Frame.for_dims(DIMS)
    expect = inflate_and_smooth(inner, 2, 0.002 * frame.scale)
    assert np.allclose(outer.vertices, expect.vertices, atol=1e-12)


def test_metrics_and_manifest(sphere_run, tmp_path):
    rep = sphere_run.metrics["inner"]
    # the level -0.05 surface sits 0.8 voxel outside the mask boundary
    assert 0.2 < rep.assd_mm < 1.5
    man = sphere_run.manifest
    assert man["schema"] == "surfflow.run/1"
    assert man["meshes"]["inner"]["faces"] == sphere_run.inner_mesh.n_faces
    back = json.loads(write_json(tmp_path / "m.json", man).read_text())
    assert back["config"]["inner_solver"] == {"method": "euler", "steps": 10, "horizon": 1.0}


def test_torus_is_corrected():
    mask = make_mask(ShapeSpec("torus", radius=8.0, tube=3.0, center=C), DIMS)
    res = run_pipeline(mask, PipelineConfig(), identity_params(HP), identity_params(HP))
    assert res.checks["topology"]["changed_voxel_count"] > 0
    assert res.checks["initial_euler"] == res.checks["outer_euler"] == 2


def test_label_selection():
    labels = np.zeros(DIMS, dtype=np.uint8)
    labels[make_mask(ShapeSpec("sphere", radius=6.0, center=(9.0, 15.5, 15.5)), DIMS).labels > 0] = 1
    labels[make_mask(ShapeSpec("sphere", radius=5.0, center=(22.0, 15.5, 15.5)), DIMS).labels > 0] = 2
    res = run_pipeline(LabelMask(labels), PipelineConfig(label=2), identity_params(HP), identity_params(HP))
    assert abs(res.inner_mesh.vertices[:, 0].mean() - 22.0) < 0.5


def test_failure_names_stage():
    with pytest.raises(PipelineError) as e:
        run_pipeline(np.zeros(DIMS, dtype=np.uint8), PipelineConfig(), identity_params(HP), identity_params(HP))
    assert e.value.stage == "largest_component"


def test_config_roundtrip_and_validation():
    cfg = PipelineConfig(alpha0=-0.1, label=2)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        PipelineConfig(alpha_hat=-0.01, alpha0=-0.05)
    with pytest.raises(ValueError):
        PipelineConfig(sdf_scale=0)
