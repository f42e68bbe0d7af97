"""Command-line driver: every pipeline stage as a subcommand, plus scene
generation, evaluation, overlay rendering, and the end-to-end `pipeline`
mode with manifest replay.

Exit codes: 0 success, 2 input error, 3 numerical divergence, 4 internal
invariant violation.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .core import GridShape
from .evaluate import ScoredInstance, ap_r, instances_from_labels, miou, score_instances
from .fieldfit import DivergedError, FitConfig
from .fldt import write_tensor
from .images import write_ppm
from .pipeline import (
    BG_MODES,
    FIELD_SOURCES,
    MODES,
    InputError,
    InvariantError,
    file_affinity,
    file_fit,
    file_instmap,
    file_mine,
    file_propagate,
    file_seeds,
    file_synth,
    load_guide,
    load_labels,
    load_score_stack,
    parse_manifest,
    run_pipeline,
)
from .core import PipelineConfig
from .render import render_overlay
from .synthgen import (
    CamParams,
    GenerationError,
    InstanceSpec,
    SceneSpec,
    gen_scene,
    oracle_fields,
    simulate_cams,
)

# every tunable the pipeline consumes: key -> (parser, default). Flags win
# over --config file entries, file entries over these defaults.
CONFIG_KEYS: dict[str, tuple] = {
    "theta_fg": (float, 0.3),
    "theta_bg": (float, 0.05),
    "gamma_train": (float, 10.0),
    "gamma_infer": (float, 5.0),
    "beta": (float, 10.0),
    "walk_iters": (int, 256),
    "refine_iters": (int, 100),
    "centroid_threshold": (float, 2.5),
    "bg_percentile": (float, 0.25),
    "eps_clamp": (float, 1e-5),
    "snap_radius": (float, 5.0),
    "bg_mode": (str, "quantile"),
    "threads": (int, 1),
    "fit_steps": (int, 500),
    "fit_step_size": (float, 0.1),
    "fit_momentum": (float, 0.9),
    "fit_init_scale": (float, 0.01),
    "fit_seed": (int, 0),
    "fit_loss_weights": (str, "1.0,1.0,1.0"),
}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InputError(msg)


def _parse_size(text: str) -> GridShape:
    try:
        h, w = (int(part) for part in text.lower().split("x"))
        return GridShape(h, w)
    except ValueError as exc:
        raise InputError(f"bad --size {text!r}: expected HxW") from exc


def _parse_instance(text: str) -> InstanceSpec:
    parts = text.split(":")
    _require(len(parts) == 3, f"bad --instance {text!r}: expected CLASS:KIND:P1,P2,...")
    try:
        class_id = int(parts[0])
        params = tuple(float(p) for p in parts[2].split(","))
    except ValueError as exc:
        raise InputError(f"bad --instance {text!r}: {exc}") from exc
    return InstanceSpec(class_id, parts[1], params)


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        out = tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise InputError(f"bad --thresholds {text!r}") from exc
    _require(all(0.0 < th <= 1.0 for th in out) and out, f"bad --thresholds {text!r}")
    return out


def resolve_config(args) -> dict:
    """Merge flags > --config file > defaults into one value per key."""
    file_vals = parse_manifest(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_vals) - set(CONFIG_KEYS))
    _require(not unknown, f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, (parse, default) in CONFIG_KEYS.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in file_vals:
            try:
                out[key] = parse(file_vals[key])
            except ValueError as exc:
                raise InputError(f"config key {key}: {exc}") from exc
        else:
            out[key] = default
    return out


def build_configs(vals: dict) -> tuple[PipelineConfig, FitConfig]:
    try:
        weights = tuple(float(w) for w in vals["fit_loss_weights"].split(","))
        if len(weights) != 3:
            raise ValueError("fit_loss_weights takes exactly three comma-separated values")
        cfg = PipelineConfig(
            theta_fg=vals["theta_fg"], theta_bg=vals["theta_bg"],
            gamma_train=vals["gamma_train"], gamma_infer=vals["gamma_infer"],
            beta=vals["beta"], walk_iters=vals["walk_iters"],
            refine_iters=vals["refine_iters"], centroid_threshold=vals["centroid_threshold"],
            bg_percentile=vals["bg_percentile"], eps_clamp=vals["eps_clamp"],
            snap_radius=vals["snap_radius"])
        fit_cfg = FitConfig(
            steps=vals["fit_steps"], step_size=vals["fit_step_size"],
            momentum=vals["fit_momentum"], init_scale=vals["fit_init_scale"],
            seed=vals["fit_seed"], loss_weights=weights, eps_clamp=vals["eps_clamp"])
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return cfg, fit_cfg


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_gen(args) -> None:
    shape = _parse_size(args.size)
    instances = tuple(_parse_instance(text) for text in args.instance)
    cam = CamParams(max_parts=args.max_parts, part_sigma=args.part_sigma,
                    coverage=args.coverage, noise_amp=args.noise_amp, dilate=args.dilate)
    spec = SceneSpec(shape, args.num_classes, instances, args.seed, args.guide_noise, cam)
    gt = gen_scene(spec)
    cams = simulate_cams(gt, cam, args.cam_seed)
    disp, boundary = oracle_fields(gt)
    os.makedirs(args.out, exist_ok=True)

    def path(name):
        return os.path.join(args.out, name)

    write_ppm(path("guide.ppm"), gt.guide)
    write_tensor(path("gt_labels.fldt"),
                 np.stack([gt.labels.class_plane, gt.labels.instance_plane]).astype(np.int32))
    write_tensor(path("oracle_disp.fldt"), disp.vectors.astype(np.float32))
    write_tensor(path("oracle_boundary.fldt"), boundary.values.astype(np.float32))
    write_tensor(path("cams.fldt"), cams.planes.astype(np.float32))
    lines = [f"size={shape.height}x{shape.width}", f"num_classes={spec.num_classes}",
             f"seed={spec.seed}", f"guide_noise={spec.guide_noise!r}",
             f"cam_seed={args.cam_seed}", f"cam.max_parts={cam.max_parts}",
             f"cam.part_sigma={cam.part_sigma!r}", f"cam.coverage={cam.coverage!r}",
             f"cam.noise_amp={cam.noise_amp!r}", f"cam.dilate={cam.dilate}"]
    lines += [f"instance.{n}={ins.class_id}:{ins.kind}:{','.join(repr(p) for p in ins.params)}"
              for n, ins in enumerate(instances, start=1)]
    with open(path("manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote scene files to {args.out}")


def cmd_seeds(args) -> None:
    _require(0.0 < args.theta_bg < args.theta_fg < 1.0, "need 0 < theta-bg < theta-fg < 1")
    _require(args.refine_iters >= 0, "refine-iters must be >= 0")
    file_seeds(args.cams, args.out, args.theta_fg, args.theta_bg, args.guide,
               args.refine_iters, args.window_radius, args.sigma_spatial,
               args.sigma_appearance)
    print(f"wrote {args.out}")


def cmd_mine(args) -> None:
    _require(args.gamma >= 1.0, "gamma must be >= 1")
    counts = file_mine(args.seeds, args.out, args.gamma)
    total = sum(counts.values())
    print(f"wrote {args.out} ({total} pairs: " +
          ", ".join(f"{name}={n}" for name, n in counts.items()) + ")")


def cmd_fit(args) -> None:
    _require(args.gamma >= 1.0, "gamma must be >= 1")
    try:
        weights = tuple(float(w) for w in args.loss_weights.split(","))
        fit_cfg = FitConfig(steps=args.steps, step_size=args.step_size,
                            momentum=args.momentum, init_scale=args.init_scale,
                            seed=args.fit_seed, loss_weights=weights,
                            eps_clamp=args.eps_clamp)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    os.makedirs(args.out, exist_ok=True)
    file_fit(args.seeds, os.path.join(args.out, "disp.fldt"),
             os.path.join(args.out, "boundary.fldt"),
             os.path.join(args.out, "loss_trace.txt"), args.gamma, fit_cfg)
    print(f"wrote fitted fields to {args.out}")


def cmd_instmap(args) -> None:
    _require(args.refine_iters >= 0, "refine-iters must be >= 0")
    _require(args.centroid_threshold > 0, "centroid-threshold must be positive")
    _require(args.snap_radius >= 0, "snap-radius must be >= 0")
    file_instmap(args.disp, args.seeds, args.out, args.refine_iters,
                 args.centroid_threshold, args.snap_radius)
    print(f"wrote {args.out}")


def cmd_affinity(args) -> None:
    _require(args.gamma_infer >= 1.0, "gamma-infer must be >= 1")
    n = file_affinity(args.boundary, args.out, args.gamma_infer)
    print(f"wrote {args.out} ({n} entries)")


def cmd_propagate(args) -> None:
    _require(args.beta >= 1.0, "beta must be >= 1")
    _require(args.t >= 0, "t must be >= 0")
    _require(args.gamma_infer >= 1.0, "gamma-infer must be >= 1")
    _require(args.threads >= 1, "threads must be >= 1")
    _require(args.semantic or args.instmap is not None,
             "instance propagation needs --instmap (or pass --semantic)")
    os.makedirs(args.out, exist_ok=True)
    planes = os.path.join(args.out, "planes.fldt")
    keys = None if args.semantic else os.path.join(args.out, "keys.fldt")
    file_propagate(args.cams, args.boundary, planes, instmap_path=args.instmap,
                   out_keys=keys, semantic=args.semantic, beta=args.beta, t=args.t,
                   gamma_infer=args.gamma_infer, threads=args.threads)
    print(f"wrote propagated planes to {args.out}")


def cmd_synth(args) -> None:
    _require(0.0 <= args.bg_percentile < 1.0, "bg-percentile must lie in [0, 1)")
    _require(args.semantic or args.keys is not None,
             "instance synthesis needs --keys (or pass --semantic)")
    _require(args.semantic or not args.split, "--split applies only with --semantic")
    file_synth(args.planes, args.out, keys_path=args.keys, semantic=args.semantic,
               split=args.split, bg_percentile=args.bg_percentile, bg_mode=args.bg_mode)
    print(f"wrote {args.out}")


def cmd_eval(args) -> None:
    pred = load_labels(args.pred)
    gt = load_labels(args.gt)
    if pred.shape != gt.shape:
        raise InputError(f"{args.pred}: labels are {pred.shape.height}x{pred.shape.width},"
                         f" gt in {args.gt} is {gt.shape.height}x{gt.shape.width}")
    thresholds = _parse_thresholds(args.thresholds)
    if args.planes is not None or args.keys is not None:
        _require(args.planes is not None and args.keys is not None,
                 "--planes and --keys go together")
        stack = load_score_stack(args.planes, args.keys)
        try:
            preds = score_instances(pred, stack)
        except (KeyError, ValueError) as exc:
            raise InputError(f"{args.pred}: labels inconsistent with scores: {exc}") from exc
    else:
        preds = [ScoredInstance(c, mask, 1.0) for c, _, mask in instances_from_labels(pred)]
    gts = [(c, mask) for c, _, mask in instances_from_labels(gt)]
    report = ap_r(preds, gts, thresholds)
    mean_iou, per_class = miou(pred, gt)

    rows = []
    for th in thresholds:
        name = f"ap{round(th * 100)}"
        rows.append((name, "all", report.ap[th] if report.ap_defined else float("nan")))
        rows += [(name, str(c), v) for c, v in sorted(report.per_class_ap[th].items())]
    rows += [("iou", str(c), v) for c, v in sorted(per_class.items())]
    rows.append(("miou", "all", mean_iou))
    for metric, klass, value in rows:
        print(f"{metric} {klass} {value:.4f}")
    if args.report:
        lines = [f"pred={args.pred}", f"gt={args.gt}", f"ap_defined={report.ap_defined}"]
        lines += [f"{metric}.{klass}={value:.4f}" for metric, klass, value in rows]
        with open(args.report, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def cmd_render(args) -> None:
    labels = load_labels(args.labels)
    guide = load_guide(args.guide, labels.shape)
    write_ppm(args.out, render_overlay(guide, labels))
    print(f"wrote {args.out}")


def cmd_pipeline(args) -> None:
    if args.replay:
        raw = parse_manifest(args.replay)
        for key in ("mode", "fields", "input.cams"):
            _require(key in raw, f"{args.replay}: missing {key}")
        vals = {}
        for key, (parse, default) in CONFIG_KEYS.items():
            text = raw.get(f"config.{key}")
            try:
                vals[key] = default if text is None else parse(text)
            except ValueError as exc:
                raise InputError(f"{args.replay}: config.{key}: {exc}") from exc
        if args.threads is not None:
            vals["threads"] = args.threads
        mode, fields = raw["mode"], raw["fields"]
        cams, disp, boundary = raw["input.cams"], raw.get("input.disp"), raw.get("input.boundary")
    else:
        _require(args.cams is not None, "--cams is required (or use --replay)")
        vals = resolve_config(args)
        mode, fields = args.mode, args.fields
        cams, disp, boundary = args.cams, args.disp, args.boundary
    cfg, fit_cfg = build_configs(vals)
    manifest = run_pipeline(cams, fields, args.out, cfg, fit_cfg, mode,
                            vals["bg_mode"], vals["threads"], disp, boundary)
    print(f"wrote {manifest.outputs['labels']}")


# ---------------------------------------------------------------------------
# parser assembly


def _add_config_flags(sub) -> None:
    grp = sub.add_argument_group("pipeline configuration (flags > --config file > defaults)")
    grp.add_argument("--config", help="key=value override file")
    grp.add_argument("--theta-fg", dest="theta_fg", type=float)
    grp.add_argument("--theta-bg", dest="theta_bg", type=float)
    grp.add_argument("--gamma-train", dest="gamma_train", type=float)
    grp.add_argument("--gamma-infer", dest="gamma_infer", type=float)
    grp.add_argument("--beta", dest="beta", type=float)
    grp.add_argument("--t", dest="walk_iters", type=int)
    grp.add_argument("--refine-iters", dest="refine_iters", type=int)
    grp.add_argument("--centroid-threshold", dest="centroid_threshold", type=float)
    grp.add_argument("--bg-percentile", dest="bg_percentile", type=float)
    grp.add_argument("--bg-mode", dest="bg_mode", choices=BG_MODES)
    grp.add_argument("--eps-clamp", dest="eps_clamp", type=float)
    grp.add_argument("--snap-radius", dest="snap_radius", type=float)
    grp.add_argument("--threads", dest="threads", type=int)
    grp.add_argument("--fit-steps", dest="fit_steps", type=int)
    grp.add_argument("--fit-step-size", dest="fit_step_size", type=float)
    grp.add_argument("--fit-momentum", dest="fit_momentum", type=float)
    grp.add_argument("--fit-init-scale", dest="fit_init_scale", type=float)
    grp.add_argument("--fit-seed", dest="fit_seed", type=int)
    grp.add_argument("--fit-loss-weights", dest="fit_loss_weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labelsynth",
        description="Synthesize instance/semantic pseudo-labels from class attention maps.")
    parser.add_argument("--version", action="version", version=f"labelsynth {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("gen", help="generate a synthetic scene with oracle fields")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--size", default="64x64")
    sub.add_argument("--num-classes", type=int, default=1)
    sub.add_argument("--instance", action="append", required=True,
                     help="CLASS:KIND:P1,P2,... (kinds: ellipse, rectangle, blob); repeatable")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--guide-noise", type=float, default=8.0)
    sub.add_argument("--cam-seed", type=int, default=0)
    sub.add_argument("--max-parts", type=int, default=3)
    sub.add_argument("--part-sigma", type=float, default=2.0)
    sub.add_argument("--coverage", type=float, default=0.5)
    sub.add_argument("--noise-amp", type=float, default=0.04)
    sub.add_argument("--dilate", type=int, default=2)
    sub.set_defaults(func=cmd_gen)

    sub = subs.add_parser("seeds", help="threshold CAMs into confident seed labels")
    sub.add_argument("--cams", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--theta-fg", dest="theta_fg", type=float, default=0.3)
    sub.add_argument("--theta-bg", dest="theta_bg", type=float, default=0.05)
    sub.add_argument("--guide", help="RGB guide image enabling mean-field refinement")
    sub.add_argument("--refine-iters", dest="refine_iters", type=int, default=5)
    sub.add_argument("--window-radius", dest="window_radius", type=int, default=5)
    sub.add_argument("--sigma-spatial", dest="sigma_spatial", type=float, default=3.0)
    sub.add_argument("--sigma-appearance", dest="sigma_appearance", type=float, default=13.0)
    sub.set_defaults(func=cmd_seeds)

    sub = subs.add_parser("mine", help="mine inter-pixel pairs (debug dump)")
    sub.add_argument("--seeds", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--gamma", type=float, default=10.0)
    sub.set_defaults(func=cmd_mine)

    sub = subs.add_parser("fit", help="fit displacement and boundary fields to mined pairs")
    sub.add_argument("--seeds", required=True)
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--gamma", type=float, default=10.0)
    sub.add_argument("--steps", type=int, default=500)
    sub.add_argument("--step-size", dest="step_size", type=float, default=0.1)
    sub.add_argument("--momentum", type=float, default=0.9)
    sub.add_argument("--init-scale", dest="init_scale", type=float, default=0.01)
    sub.add_argument("--fit-seed", dest="fit_seed", type=int, default=0)
    sub.add_argument("--loss-weights", dest="loss_weights", default="1.0,1.0,1.0")
    sub.add_argument("--eps-clamp", dest="eps_clamp", type=float, default=1e-5)
    sub.set_defaults(func=cmd_fit)

    sub = subs.add_parser("instmap", help="group displacement vectors into instances")
    sub.add_argument("--disp", required=True)
    sub.add_argument("--seeds", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--refine-iters", dest="refine_iters", type=int, default=100)
    sub.add_argument("--centroid-threshold", dest="centroid_threshold", type=float, default=2.5)
    sub.add_argument("--snap-radius", dest="snap_radius", type=float, default=5.0)
    sub.set_defaults(func=cmd_instmap)

    sub = subs.add_parser("affinity", help="dump the boundary-derived affinity graph")
    sub.add_argument("--boundary", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--gamma-infer", dest="gamma_infer", type=float, default=5.0)
    sub.set_defaults(func=cmd_affinity)

    sub = subs.add_parser("propagate", help="random-walk propagation of score planes")
    sub.add_argument("--cams", required=True)
    sub.add_argument("--boundary", required=True)
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--instmap")
    sub.add_argument("--semantic", action="store_true",
                     help="propagate raw class planes (skip instancing)")
    sub.add_argument("--beta", type=float, default=10.0)
    sub.add_argument("--t", type=int, default=256)
    sub.add_argument("--gamma-infer", dest="gamma_infer", type=float, default=5.0)
    sub.add_argument("--threads", type=int, default=1)
    sub.set_defaults(func=cmd_propagate)

    sub = subs.add_parser("synth", help="synthesize labels from propagated planes")
    sub.add_argument("--planes", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--keys", help="channel keys file (instance mode)")
    sub.add_argument("--semantic", action="store_true")
    sub.add_argument("--split", action="store_true",
                     help="with --semantic: split class regions into component instances")
    sub.add_argument("--bg-percentile", dest="bg_percentile", type=float, default=0.25)
    sub.add_argument("--bg-mode", dest="bg_mode", choices=BG_MODES, default="quantile")
    sub.set_defaults(func=cmd_synth)

    sub = subs.add_parser("eval", help="score predicted labels against ground truth")
    sub.add_argument("--pred", required=True)
    sub.add_argument("--gt", required=True)
    sub.add_argument("--planes", help="propagated planes for instance scoring")
    sub.add_argument("--keys", help="channel keys for instance scoring")
    sub.add_argument("--thresholds", default="0.5,0.7")
    sub.add_argument("--report", help="also write a key=value report file")
    sub.set_defaults(func=cmd_eval)

    sub = subs.add_parser("render", help="overlay labels on the guide image")
    sub.add_argument("--guide", required=True)
    sub.add_argument("--labels", required=True)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_render)

    sub = subs.add_parser("pipeline", help="run the label-synthesis pipeline end to end")
    sub.add_argument("--cams")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--fields", choices=FIELD_SOURCES, default="fit")
    sub.add_argument("--mode", choices=MODES, default="full")
    sub.add_argument("--disp", help="displacement field file (with --fields files)")
    sub.add_argument("--boundary", help="boundary map file (with --fields files)")
    sub.add_argument("--replay", help="rerun the run described by this manifest file")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (InputError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InvariantError, ValueError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
