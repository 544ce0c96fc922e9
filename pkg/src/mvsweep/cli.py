"""Command-line pipeline: synth -> depth -> fuse -> eval, plus check.

Subcommands operate on a project directory laid out per
:class:`~mvsweep.formats.ProjectLayout`.  ``synth`` fabricates a ground
truth scene, ``depth`` estimates per-view depth maps by plane sweep,
``fuse`` filters and merges them into a point cloud, ``eval`` scores a
cloud against a reference, and ``check`` runs a quick built-in oracle
battery.

Reference views in ``depth`` are independent; set ``MVSWEEP_JOBS`` to
process several concurrently (results are identical regardless).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import costvol, estimator, features, formats, fusion, geometry, metrics
from . import regularizer, synth
from .depthmap import DepthMap
from .errors import MvsweepError, ParseError

log = logging.getLogger("mvsweep")

DEFAULT_VIEWS = 7
DEFAULT_DEPTHS = 64


def _add_synth(sub) -> None:
    p = sub.add_parser("synth", help="generate a synthetic scene project")
    p.add_argument("--out", required=True, help="project directory to create")
    p.add_argument("--scene", choices=("plane", "sphere"), default="plane")
    p.add_argument("--views", type=int, default=DEFAULT_VIEWS)
    p.add_argument("--size", default="64x48", help="image size WIDTHxHEIGHT")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="gaussian depth noise added to the stored maps")
    p.add_argument("--outlier-frac", type=float, default=0.0,
                   help="fraction of stored depths replaced by outliers")
    p.add_argument("--ring-radius", type=float, default=250.0)
    p.add_argument("--standoff", type=float, default=600.0)


def _add_depth(sub) -> None:
    p = sub.add_parser("depth", help="estimate depth maps by plane sweep")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="output project directory (default: --in)")
    p.add_argument("--views", type=int, help="number of views (default: all)")
    p.add_argument("--num-depths", type=int, default=DEFAULT_DEPTHS)
    p.add_argument("--depth-mode", choices=("uniform", "inverse"), default="uniform")
    p.add_argument("--features", choices=("photometric", "drenet"),
                   default="photometric")
    p.add_argument("--regularizer", choices=("passthrough", "hulstm"),
                   default="passthrough")
    p.add_argument("--weights", help="tensor container with network weights")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for untrained weights when none are given")


def _add_fuse(sub) -> None:
    p = sub.add_parser("fuse", help="filter depth maps and fuse a point cloud")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="output PLY path (default: <in>/cloud.ply)")
    p.add_argument("--filter", choices=("dynamic", "fixed"), default="dynamic")
    p.add_argument("--lambda", dest="lam", type=float, default=200.0,
                   help="depth-error weight inside the matching score")
    p.add_argument("--tau", type=float, default=1.8,
                   help="dynamic consistency floor")
    p.add_argument("--phi", type=float, default=0.4,
                   help="minimum estimator confidence")
    p.add_argument("--tau1", type=float, default=1.0,
                   help="fixed filter: max pixel reprojection error")
    p.add_argument("--tau2", type=float, default=0.01,
                   help="fixed filter: max relative depth error")
    p.add_argument("--min-views", type=int, default=3,
                   help="fixed filter: required supporting views")
    p.add_argument("--ascii", action="store_true", help="write ascii PLY")


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="score a cloud against a reference cloud")
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, required=True,
                   help="distance threshold for precision/recall")
    p.add_argument("--max-dist", type=float,
                   help="truncation for accuracy/completeness (default 20x threshold)")
    p.add_argument("--json", dest="json_out", help="also write the report as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvsweep",
        description="plane-sweep multi-view stereo reconstruction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_depth(sub)
    _add_fuse(sub)
    _add_eval(sub)
    sub.add_parser("check", help="run the built-in oracle battery")
    return parser


# ---------------------------------------------------------------------------
# synth


def _ring_pairs(n: int) -> dict[int, list[int]]:
    """Source ordering by ring distance: +-1, +-2, ... around each view."""
    pairs = {}
    for i in range(n):
        order = []
        for step in range(1, n // 2 + 1):
            order.append((i + step) % n)
            if (i - step) % n not in order:
                order.append((i - step) % n)
        pairs[i] = order
    return pairs


def cmd_synth(args) -> int:
    try:
        width, height = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise MvsweepError(f"--size must look like 64x48, got {args.size!r}")
    if args.scene == "plane":
        surface = synth.Plane()
    else:
        surface = synth.Sphere(radius=100.0)
    rig = synth.CameraRigSpec(
        n_views=args.views, radius=args.ring_radius, standoff=args.standoff,
        focal=2.2 * width, width=width, height=height)
    cams = synth.make_camera_ring(rig)
    scene = synth.SceneSpec(surface=surface, texture_seed=args.seed)
    rendered = synth.render_scene(scene, cams, width, height)

    layout = formats.ProjectLayout(Path(args.out))
    layout.make_dirs(with_gt=True)
    d_lo = min(float(np.nanmin(d.data)) for _, d in rendered)
    d_hi = max(float(np.nanmax(d.data)) for _, d in rendered)
    d_min, d_max = 0.9 * d_lo, 1.1 * d_hi
    depth_range = formats.DepthRange(
        d_min, (d_max - d_min) / (DEFAULT_DEPTHS - 1), DEFAULT_DEPTHS, d_max)

    gt_points = []
    for index, (cam, (image, depth)) in enumerate(zip(cams, rendered)):
        formats.write_image(layout.image(index), image)
        formats.write_cam(layout.cam(index), cam, depth_range)
        formats.write_pfm(layout.gt_depth(index), depth.data, depth.mask)
        stored = synth.perturb_depths(
            depth, sigma=args.noise_sigma, outlier_frac=args.outlier_frac,
            outlier_range=(d_min, d_max), seed=args.seed + index)
        formats.write_pfm(layout.depth(index), stored.data, stored.mask)
        formats.write_pfm(layout.confidence(index),
                          np.ones(depth.data.shape), depth.mask)
        ys, xs = np.nonzero(depth.mask)
        gt_points.append(geometry.back_project_grid(
            cam, xs.astype(float), ys.astype(float), depth.data[ys, xs]))
    layout.write_pairs(_ring_pairs(args.views))
    formats.write_ply(layout.gt_cloud, fusion.PointCloud(np.concatenate(gt_points)))
    log.info("wrote %d views to %s (depth range %.1f..%.1f)",
             args.views, args.out, d_lo, d_hi)
    return 0


# ---------------------------------------------------------------------------
# depth


def _load_project(layout: formats.ProjectLayout, n_views: int | None):
    count = layout.view_count()
    if count == 0:
        raise MvsweepError(f"no images under {layout.root}")
    if n_views is not None:
        count = min(count, n_views)
    views = []
    for i in range(count):
        cam, depth_range = formats.read_cam(layout.cam(i))
        image = formats.read_image(layout.image(i))
        views.append((cam, depth_range, image))
    try:
        pairs = layout.read_pairs()
    except FileNotFoundError:
        pairs = {i: [j for j in range(count) if j != i] for i in range(count)}
    pairs = {i: [j for j in pairs.get(i, []) if j < count] for i in range(count)}
    return views, pairs


def _feature_extractor(args):
    if args.features == "photometric":
        return features.photometric_features
    if args.weights:
        weights = features.DrenetWeights.from_tensors(
            formats.load_tensors(args.weights))
    else:
        log.warning("no --weights given; using seeded untrained weights")
        weights = features.random_drenet_weights(args.seed)
    return lambda img: features.drenet_forward(img, weights)


def _regularize(args, stream, height: int, width: int):
    if args.regularizer == "passthrough":
        return regularizer.passthrough_regularizer(stream)
    if args.weights and args.features != "drenet":
        weights = regularizer.HuLstmWeights.from_tensors(
            formats.load_tensors(args.weights))
    else:
        weights = regularizer.random_hulstm_weights(args.seed)
    return regularizer.regularize_stream(stream, weights)


def cmd_depth(args) -> int:
    layout = formats.ProjectLayout(Path(args.input))
    out_layout = formats.ProjectLayout(Path(args.out)) if args.out else layout
    out_layout.make_dirs()
    views, pairs = _load_project(layout, args.views)
    extract = _feature_extractor(args)
    feats = [extract(image) for _, _, image in views]

    def run_view(ref: int) -> None:
        cam, depth_range, image = views[ref]
        height, width = image.shape[:2]
        d_max = depth_range.d_max
        if d_max is None:
            count = depth_range.count or DEFAULT_DEPTHS
            d_max = depth_range.d_min + depth_range.d_interval * (count - 1)
        space = geometry.HypothesisSpace(
            depth_range.d_min, d_max, args.num_depths, args.depth_mode)
        src_ids = pairs[ref]
        stream = costvol.cost_volume_stream(
            feats[ref], [feats[j] for j in src_ids], cam,
            [views[j][0] for j in src_ids], space)
        scores = _regularize(args, stream, height, width)
        depth, confidence = estimator.online_softmax_wta(scores, space)
        formats.write_pfm(out_layout.depth(ref), depth.data, depth.mask)
        formats.write_pfm(out_layout.confidence(ref), confidence)
        log.info("view %d: depth map done", ref)

    jobs = int(os.environ.get("MVSWEEP_JOBS", "1"))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run_view, range(len(views))))
    else:
        for ref in range(len(views)):
            run_view(ref)
    return 0


# ---------------------------------------------------------------------------
# fuse


def _load_estimates(layout: formats.ProjectLayout) -> list[fusion.ViewEstimate]:
    count = layout.view_count()
    if count == 0:
        raise MvsweepError(f"no images under {layout.root}")
    estimates = []
    for i in range(count):
        cam, _ = formats.read_cam(layout.cam(i))
        depth_arr = formats.read_pfm(layout.depth(i)).astype(np.float64)
        conf = np.nan_to_num(
            formats.read_pfm(layout.confidence(i)).astype(np.float64))
        image = formats.read_image(layout.image(i))
        estimates.append(fusion.ViewEstimate(
            camera=cam, depth=DepthMap(depth_arr), confidence=conf, image=image))
    return estimates


def cmd_fuse(args) -> int:
    layout = formats.ProjectLayout(Path(args.input))
    params = fusion.FusionParams(
        lam=args.lam, tau=args.tau, phi=args.phi,
        tau1=args.tau1, tau2=args.tau2, min_views=args.min_views)
    estimates = _load_estimates(layout)
    try:
        pairs = layout.read_pairs()
    except FileNotFoundError:
        pairs = {i: [j for j in range(len(estimates)) if j != i]
                 for i in range(len(estimates))}
    # Confidence gating first, so weak pixels neither survive nor vouch.
    gated = [fusion.probability_filter(v, params.phi) for v in estimates]
    filtered = []
    for i, view in enumerate(gated):
        srcs = [gated[j] for j in pairs.get(i, []) if j < len(gated)]
        if args.filter == "dynamic":
            filtered.append(fusion.dynamic_filter(view, srcs, params))
        else:
            filtered.append(fusion.fixed_threshold_filter(view, srcs, params))
    cloud = fusion.fuse_point_cloud(filtered, lam=params.lam)
    out = Path(args.out) if args.out else layout.cloud
    formats.write_ply(out, cloud, mode="ascii" if args.ascii else "binary")
    kept = sum(v.depth.valid_count for v in filtered)
    total = sum(v.depth.data.size for v in filtered)
    log.info("%s filter kept %d/%d pixels; %d points -> %s",
             args.filter, kept, total, len(cloud), out)
    print(f"points={len(cloud)}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    recon = formats.read_ply(args.recon)
    truth = formats.read_ply(args.gt)
    report = metrics.evaluate_clouds(recon, truth, args.threshold, args.max_dist)
    print(report.to_text())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n")
    return 0


# ---------------------------------------------------------------------------
# check


def _battery() -> list[tuple[str, bool]]:
    results = []

    def run(name, fn):
        try:
            fn()
            results.append((name, True))
        except Exception:  # deliberate: any failure marks the check
            log.exception("check %s failed", name)
            results.append((name, False))

    def check_camera_round_trip():
        rng = np.random.default_rng(1)
        rig = synth.CameraRigSpec(n_views=5)
        for cam in synth.make_camera_ring(rig):
            point = rng.uniform(-50, 50, 3)
            pixel, depth = geometry.project(cam, point)
            back = geometry.back_project(cam, pixel, depth)
            assert np.max(np.abs(back - point)) < 1e-8

    def check_hypothesis_sampling():
        space = geometry.HypothesisSpace(425.0, 745.0, 128)
        depths = geometry.sample_hypotheses(space)
        assert depths[0] == 425.0 and depths[-1] == 745.0
        assert abs(np.diff(depths).max() - 320.0 / 127.0) < 1e-12

    def check_reprojection_chain():
        rig = synth.CameraRigSpec(n_views=3, width=32, height=24, focal=70.0)
        cams = synth.make_camera_ring(rig)
        surface = synth.Plane()
        sampler = synth.AnalyticDepth(cams[1], surface, 32, 24)
        own = synth.AnalyticDepth(cams[0], surface, 32, 24)
        pixel = (15.0, 11.0)
        depth = own.depth_at(*pixel)
        result = geometry.reproject(cams[0], cams[1], pixel, depth, sampler)
        assert result is not None
        xi_p, xi_d = geometry.reprojection_errors(pixel, result[0], depth, result[1])
        assert xi_p < 1e-9 and xi_d < 1e-12

    def check_conv_oracle():
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 6, 3))
        kernel = rng.normal(size=(2, 3, 3, 3))
        bias = rng.normal(size=2)
        got = features.conv3x3(x, kernel, bias, dilation=1)
        want = np.zeros((5, 6, 2))
        for y in range(5):
            for xx in range(6):
                for o in range(2):
                    acc = bias[o]
                    for ky in range(3):
                        for kx in range(3):
                            yy, xc = y + ky - 1, xx + kx - 1
                            if 0 <= yy < 5 and 0 <= xc < 6:
                                acc += kernel[o, :, ky, kx] @ x[yy, xc]
                    want[y, xx, o] = acc
        assert np.max(np.abs(got - want)) < 1e-9

    def check_streaming_softmax():
        rng = np.random.default_rng(3)
        scores = rng.normal(size=(16, 4, 5))
        space = geometry.HypothesisSpace(1.0, 2.0, 16)
        stream = (regularizer.ScoreSlice(index=i, score=scores[i])
                  for i in range(16))
        depth, conf = estimator.online_softmax_wta(stream, space)
        prob = estimator.softmax_volume(scores)
        argmax = scores.argmax(axis=0)
        depths = geometry.sample_hypotheses(space)
        assert np.array_equal(depth.data, depths[argmax])
        assert np.all(conf <= 1.0 + 1e-12)

    def check_consistency_values():
        assert abs(fusion.consistency_from_errors(1.0, 0.01, 200.0)
                   - np.exp(-3.0)) < 1e-12

    def check_formats_round_trip():
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            rig = synth.CameraRigSpec(n_views=1)
            cam = synth.make_camera_ring(rig)[0]
            formats.write_cam(tmp / "c.txt", cam, formats.DepthRange(1.0, 0.5, 4, 2.5))
            cam2, dr = formats.read_cam(tmp / "c.txt")
            assert np.max(np.abs(cam2.rotation - cam.rotation)) < 1e-9
            assert dr.count == 4
            data = np.array([[1.5, np.nan], [0.25, 8.0]], dtype=np.float32)
            formats.write_pfm(tmp / "d.pfm", data)
            back = formats.read_pfm(tmp / "d.pfm")
            assert np.array_equal(back, data, equal_nan=True)
            cloud = fusion.PointCloud(np.array([[1.0, 2.0, 3.0]]),
                                      np.array([[9, 8, 7]], dtype=np.uint8))
            formats.write_ply(tmp / "p.ply", cloud)
            back_cloud = formats.read_ply(tmp / "p.ply")
            assert np.allclose(back_cloud.xyz, cloud.xyz)

    run("camera_round_trip", check_camera_round_trip)
    run("hypothesis_sampling", check_hypothesis_sampling)
    run("reprojection_chain", check_reprojection_chain)
    run("conv_oracle", check_conv_oracle)
    run("streaming_softmax", check_streaming_softmax)
    run("consistency_values", check_consistency_values)
    run("formats_round_trip", check_formats_round_trip)
    return results


def cmd_check(args) -> int:
    results = _battery()
    for name, ok in results:
        print(f"{name}: {'ok' if ok else 'FAIL'}")
    return 0 if all(ok for _, ok in results) else 1


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "synth": cmd_synth,
        "depth": cmd_depth,
        "fuse": cmd_fuse,
        "eval": cmd_eval,
        "check": cmd_check,
    }
    try:
        return handlers[args.command](args)
    except (MvsweepError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
