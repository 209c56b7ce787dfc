"""Command line interface.

Meshes on disk are in voxel coordinates; commands that run a network convert
to the normalized frame and back.  Every command prints tab-separated
``key<TAB>value`` lines between ``---`` delimiters.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .flow import ORDER, SolverConfig, exponential_test_errors, integrate, observed_order
from .frame import Frame
from .io import load_params, read_json, read_mesh, read_vgrid, save_params, write_json, write_mesh, write_vgrid
from .marching_cubes import extract_isosurface
from .mesh import euler_characteristic, laplacian_smooth
from .metrics import evaluate
from .network import DeformationField, NetHyper, init_params
from .pipeline import PipelineConfig, run_pipeline
from .sdf import SignedDistanceVolume, sdf_postprocess, signed_distance_transform
from .synth import ShapeSpec, make_mask, make_sdf_volume, star_mesh
from .topology import correct_topology, correct_topology_full_domain
from .train import TrainConfig, train
from .volume import LabelMask, Volume, largest_connected_component, pyramid

log = logging.getLogger("surfflow")


def _emit(pairs: dict):
    print("---")
    for k, v in pairs.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        print(f"{k}\t{v}")
    print("---")


def _sdf(path) -> SignedDistanceVolume:
    vol = read_vgrid(path)
    if isinstance(vol, LabelMask):
        raise SystemExit(f"{path} holds labels, expected a scalar volume")
    return SignedDistanceVolume(vol)


def _mask(path) -> LabelMask:
    m = read_vgrid(path, as_mask=True)
    if not isinstance(m, LabelMask):
        raise SystemExit(f"{path} is not a label volume")
    return m


# --------------------------------------------------------------------------

def cmd_sdf(a):
    mask = _mask(a.mask)
    region = largest_connected_component(mask, a.label)
    sdf = signed_distance_transform(region)
    if not a.raw:
        sdf = sdf_postprocess(sdf, a.scale, a.sigma)
    write_vgrid(a.out, sdf.vol)
    _emit({"out": a.out, "min": float(sdf.data.min()), "max": float(sdf.data.max())})


def cmd_topofix(a):
    sdf = _sdf(a.sdf)
    fixed, rep = correct_topology_full_domain(sdf) if a.full_domain else correct_topology(sdf, a.alpha_hat)
    write_vgrid(a.out, fixed.vol)
    if a.report:
        write_json(a.report, rep.to_dict())
    _emit({"out": a.out, **rep.to_dict()})


def cmd_extract(a):
    sdf = _sdf(a.sdf)
    mesh = extract_isosurface(sdf, a.level)
    if a.smooth:
        mesh = laplacian_smooth(mesh, a.smooth)
    write_mesh(a.out, mesh)
    _emit({"out": a.out, "vertices": mesh.n_vertices, "faces": mesh.n_faces, "euler": euler_characteristic(mesh)})


def cmd_metrics(a):
    rep = evaluate(read_mesh(a.pred), read_mesh(a.gt), a.samples, a.seed, a.spacing)
    if a.out:
        write_json(a.out, rep.to_dict())
    _emit(rep.to_dict())


def cmd_deform(a):
    mesh = read_mesh(a.mesh)
    vol = _sdf(a.volume).vol
    params = load_params(a.params)
    frame = Frame.for_dims(vol.dims)
    fld = DeformationField(params, pyramid(vol, params.hyper.Q), frame)
    cfg = SolverConfig(a.method, a.steps)
    res = integrate(frame.to_normalized(mesh.vertices), fld, cfg, snapshots=bool(a.snapshots))
    out = mesh.with_vertices(frame.to_voxel(res.final_vertices))
    write_mesh(a.out, out)
    if a.snapshots:
        d = Path(a.snapshots)
        d.mkdir(parents=True, exist_ok=True)
        for n, snap in enumerate(res.snapshots):
            write_mesh(d / f"step_{n:03d}.obj", mesh.with_vertices(frame.to_voxel(snap)))
    _emit({"out": a.out, "method": a.method, "steps": a.steps, "nfe": res.nfe})


def cmd_train(a):
    cfg_dict = read_json(a.config) if a.config else {}
    if a.task:
        cfg_dict["task"] = a.task
    for key in ("epochs", "seed"):
        if getattr(a, key) is not None:
            cfg_dict[key] = getattr(a, key)
    cfg = TrainConfig.from_dict(cfg_dict)
    vol = _sdf(a.volume).vol
    frame = Frame.for_dims(vol.dims)
    init = read_mesh(a.init)
    target = read_mesh(a.target)
    init_n = init.with_vertices(frame.to_normalized(init.vertices))
    target_n = target.with_vertices(frame.to_normalized(target.vertices))
    params, hist = train(init_n, target_n, vol, cfg, frame=frame)
    save_params(a.out, params)
    if a.history:
        with open(a.history, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "sampled_loss", "fullset_loss"])
            for e, s, full in hist.rows():
                w.writerow([e, repr(s), "" if full is None else repr(full)])
    if a.plot:
        from .plotting import plot_loss_history

        plot_loss_history(hist, a.plot)
    _emit({"out": a.out, "task": cfg.task, "epochs": cfg.epochs, "final_loss": hist.sampled_loss[-1], "seconds": hist.seconds})


def cmd_synth(a):
    spec = ShapeSpec.from_dict(read_json(a.spec))
    dims = tuple(a.dims) * 3 if len(a.dims) == 1 else tuple(a.dims)
    frame = Frame.for_dims(dims) if a.normalized else None
    info = {}
    if a.out_sdf:
        sdf = make_sdf_volume(spec, dims, frame)
        if a.scale != 1.0:
            sdf = SignedDistanceVolume(Volume(sdf.data * a.scale))
        write_vgrid(a.out_sdf, sdf.vol)
        info["sdf"] = a.out_sdf
    if a.out_mask:
        write_vgrid(a.out_mask, make_mask(spec, dims, frame))
        info["mask"] = a.out_mask
    if a.out_mesh:
        mesh = star_mesh(spec, a.subdiv)
        if frame is not None:
            mesh = mesh.with_vertices(frame.to_voxel(mesh.vertices))
        write_mesh(a.out_mesh, mesh)
        info["mesh"] = a.out_mesh
    _emit({"kind": spec.kind, "dims": "x".join(map(str, dims)), **info})


def cmd_init_params(a):
    hyper = NetHyper(Q=a.Q, K=a.K, C=a.C, C_mid=a.C_mid, H=a.H)
    params = init_params(hyper, seed=a.seed, zero_head=True)
    save_params(a.out, params)
    _emit({"out": a.out, "n_params": params.n_params()})


def cmd_pipeline(a):
    cfg_dict = read_json(a.config) if a.config else {}
    mask = _mask(a.mask)
    labels = a.labels or [l for l in np.unique(mask.labels).tolist() if l != 0]
    inner = load_params(a.inner_net)
    outer = load_params(a.outer_net)
    gt_inner = read_mesh(a.gt_inner) if a.gt_inner else None
    gt_outer = read_mesh(a.gt_outer) if a.gt_outer else None
    out_dir = Path(a.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for label in labels:
        cfg = PipelineConfig.from_dict({**cfg_dict, "label": int(label), "inner_net": a.inner_net, "outer_net": a.outer_net})
        res = run_pipeline(mask, cfg, inner, outer, gt_inner, gt_outer)
        stem = out_dir / f"label{label}"
        write_mesh(f"{stem}_inner.obj", res.inner_mesh)
        write_mesh(f"{stem}_outer.obj", res.outer_mesh)
        write_json(f"{stem}_manifest.json", res.manifest)
        row = {"label": label, **{f"{k}_seconds": v for k, v in res.split().items()}}
        row.update({k: v for k, v in res.checks.items() if k != "topology"})
        for which, rep in res.metrics.items():
            row[f"{which}_assd"] = rep.assd_mm
            row[f"{which}_hd90"] = rep.hd90_mm
        if a.report:
            from .plotting import plot_stage_timings

            row["timings_png"] = str(plot_stage_timings(res.timings, f"{stem}_timings.png"))
        _emit(row)


def cmd_solver_study(a):
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for method in ORDER:
        for h, err in exponential_test_errors(method, a.steps):
            rows.append((method, h, err))
    with open(out / "solver_convergence.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "h", "error"])
        w.writerows(rows)
    from .plotting import plot_convergence

    png = plot_convergence(rows, out / "solver_convergence.png")
    summary = {f"order_{m}": observed_order([(h, e) for mm, h, e in rows if mm == m]) for m in ORDER}
    summary.update({f"nfe_{m}_{n}": SolverConfig(m, n).nfe for m, n in (("euler", 10), ("midpoint", 5), ("rk4", 5))})
    _emit({**summary, "csv": str(out / "solver_convergence.csv"), "png": str(png)})


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="surfflow", description="Surface reconstruction by learned diffeomorphic flows.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sdf", help="mask -> signed distance volume")
    s.add_argument("--mask", required=True)
    s.add_argument("--label", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=float, default=1.0 / 16.0)
    s.add_argument("--sigma", type=float, default=0.5)
    s.add_argument("--raw", action="store_true", help="skip rescaling and blur")
    s.set_defaults(func=cmd_sdf)

    s = sub.add_parser("topofix", help="topology correction of an SDF")
    s.add_argument("--sdf", required=True)
    s.add_argument("--alpha-hat", type=float, default=-1.0)
    s.add_argument("--full-domain", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_topofix)

    s = sub.add_parser("extract", help="isosurface extraction")
    s.add_argument("--sdf", required=True)
    s.add_argument("--level", type=float, default=-0.05)
    s.add_argument("--smooth", "--smooth-iters", dest="smooth", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("metrics", help="ASSD, HD90 and SIF of a predicted mesh")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spacing", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("deform", help="flow a mesh with a trained network")
    s.add_argument("--mesh", required=True)
    s.add_argument("--volume", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--method", choices=sorted(ORDER), default="euler")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--snapshots")
    s.set_defaults(func=cmd_deform)

    s = sub.add_parser("train", help="fit a deformation network")
    s.add_argument("--task", choices=["chamfer", "mse", "chamfer_fit", "corresponded_fit"])
    s.add_argument("--init", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--volume", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--history")
    s.add_argument("--plot", help="loss curve PNG")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthetic shapes")
    s.add_argument("--spec", required=True)
    s.add_argument("--dims", type=int, nargs="+", default=[64])
    s.add_argument("--normalized", action="store_true", help="spec is in normalized units")
    s.add_argument("--scale", type=float, default=1.0, help="multiply SDF values")
    s.add_argument("--out-sdf")
    s.add_argument("--out-mask")
    s.add_argument("--out-mesh")
    s.add_argument("--subdiv", type=int, default=4)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("init-params", help="write an identity-flow network")
    s.add_argument("--out", required=True)
    for k, d in (("Q", 3), ("K", 5), ("C", 128), ("C_mid", 128), ("H", 128), ("seed", 0)):
        s.add_argument(f"--{k}", type=int, default=d)
    s.set_defaults(func=cmd_init_params)

    s = sub.add_parser("pipeline", help="mask -> inner and outer surfaces")
    s.add_argument("--mask", required=True)
    s.add_argument("--config")
    s.add_argument("--inner-net", required=True)
    s.add_argument("--outer-net", required=True)
    s.add_argument("--labels", type=int, nargs="*")
    s.add_argument("--gt-inner")
    s.add_argument("--gt-outer")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--report", action="store_true", help="also render stage timing figures")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("solver-study", help="convergence orders and NFE of the solvers")
    s.add_argument("--steps", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_solver_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
