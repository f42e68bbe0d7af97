"""File-level pipeline stages and the end-to-end driver.

Each stage function reads and writes the interchange formats (FLDT
tensors, netpbm images, key=value manifests). The driver composes the
same stage functions over the same files, so one `run_pipeline` call is
byte-identical to invoking the stages individually: arrays cross every
stage boundary through the same f32 files either way.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import __version__
from .affinity import TransitionMatrix, build_affinity_graph, transition_matrix
from .core import (
    NEUTRAL,
    BoundaryMap,
    DisplacementField,
    GridShape,
    LabelImage,
    PipelineConfig,
    RawScoreStack,
    ScoreStack,
)
from .fieldfit import FitConfig, fit_fields
from .fldt import FldtError, read_tensor, write_tensor
from .images import ImageFormatError, read_ppm
from .instancing import (
    InstanceMap,
    build_instance_map,
    center_displacement,
    detect_centroids,
    refine_displacement,
)
from .propagation import (
    InstanceScoreStack,
    class_plane_labels,
    instance_cams,
    propagate,
    propagate_semantic,
    synthesize_instance_labels,
)
from .relations import mine_pairs
from .seeding import ClassSeedMap, extract_seeds, normalize_cam, refine_seeds

MODES = ("full", "semantic", "cam-only", "cam+boundary")
FIELD_SOURCES = ("fit", "files")
BG_MODES = ("quantile", "absolute")

# partition codes used by the pair debug dump
PAIR_CODES = (("fg_pos", 0), ("bg_pos", 1), ("neg", 2))


class InputError(Exception):
    """Unusable input: missing/malformed file, bad option value, or a
    shape mismatch across input files."""


class InvariantError(Exception):
    """An internal cross-stage consistency check failed."""


# ---------------------------------------------------------------------------
# typed file loaders; every failure names the offending path


def _read(path) -> np.ndarray:
    try:
        return read_tensor(path)
    except (OSError, FldtError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_cams(path) -> ScoreStack:
    """Read a f32 [C,H,W] score stack and normalize it; classes whose
    plane is all zero are treated as absent."""
    arr = _read(path)
    if arr.ndim != 3:
        raise InputError(f"{path}: expected a [C,H,W] score stack, got dims {arr.shape}")
    planes = arr.astype(np.float64)
    present = frozenset(c + 1 for c in range(planes.shape[0]) if planes[c].any())
    try:
        raw = RawScoreStack(GridShape(*planes.shape[1:]), planes, present)
        return normalize_cam(raw)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_seeds(path) -> ClassSeedMap:
    arr = _read(path)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise InputError(f"{path}: expected a u8 [H,W] seed map, got {arr.dtype} dims {arr.shape}")
    labeled = arr[arr != NEUTRAL]
    num_classes = int(labeled.max()) if labeled.size else 0
    try:
        return ClassSeedMap(GridShape(*arr.shape), arr, num_classes)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_disp(path) -> DisplacementField:
    arr = _read(path)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise InputError(f"{path}: expected a f32 [H,W,2] displacement field, got dims {arr.shape}")
    try:
        return DisplacementField(GridShape(*arr.shape[:2]), arr.astype(np.float64))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_boundary(path) -> BoundaryMap:
    arr = _read(path)
    if arr.ndim != 2:
        raise InputError(f"{path}: expected a f32 [H,W] boundary map, got dims {arr.shape}")
    try:
        return BoundaryMap(GridShape(*arr.shape), arr.astype(np.float64))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_instance_map(path) -> InstanceMap:
    arr = _read(path)
    if arr.ndim != 2 or arr.dtype != np.int32:
        raise InputError(f"{path}: expected an i32 [H,W] instance map, got {arr.dtype} dims {arr.shape}")
    try:
        return InstanceMap(GridShape(*arr.shape), arr)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_labels(path) -> LabelImage:
    arr = _read(path)
    if arr.ndim != 3 or arr.shape[0] != 2 or arr.dtype != np.int32:
        raise InputError(f"{path}: expected an i32 [2,H,W] label image, got {arr.dtype} dims {arr.shape}")
    try:
        return LabelImage(GridShape(*arr.shape[1:]), arr[0], arr[1])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_score_stack(planes_path, keys_path) -> InstanceScoreStack:
    planes = _read(planes_path)
    keys = _read(keys_path)
    if planes.ndim != 3:
        raise InputError(f"{planes_path}: expected f32 [N,H,W] score planes, got dims {planes.shape}")
    if keys.ndim != 2 or keys.shape[1] != 2 or keys.shape[0] != planes.shape[0]:
        raise InputError(f"{keys_path}: expected i32 [{planes.shape[0]},2] channel keys, got dims {keys.shape}")
    try:
        return InstanceScoreStack(GridShape(*planes.shape[1:]),
                                  tuple((int(c), int(k)) for c, k in keys),
                                  planes.astype(np.float64))
    except ValueError as exc:
        raise InputError(f"{planes_path}: {exc}") from exc


def save_labels(path, labels: LabelImage) -> None:
    write_tensor(path, np.stack([labels.class_plane, labels.instance_plane]).astype(np.int32))


def load_guide(path, shape: GridShape) -> np.ndarray:
    try:
        guide = read_ppm(path)
    except (OSError, ImageFormatError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if guide.shape[:2] != (shape.height, shape.width):
        raise InputError(f"{path}: guide is {guide.shape[0]}x{guide.shape[1]},"
                         f" scores are {shape.height}x{shape.width}")
    return guide


# ---------------------------------------------------------------------------
# stage functions: one file-to-file step each


def file_seeds(cams_path, out_path, theta_fg=0.3, theta_bg=0.05, guide_path=None,
               refine_iters=5, window_radius=5, sigma_spatial=3.0,
               sigma_appearance=13.0) -> None:
    """CAM stack -> confident seed labels (u8 FLDT), optionally refined
    against an RGB guide image."""
    cams = load_cams(cams_path)
    seeds = extract_seeds(cams, theta_fg, theta_bg)
    if guide_path is not None:
        guide = load_guide(guide_path, cams.shape)
        seeds = refine_seeds(seeds, cams, guide, window_radius, refine_iters,
                             sigma_spatial, sigma_appearance, theta_fg, theta_bg)
    write_tensor(out_path, seeds.labels)


def file_mine(seeds_path, out_path, gamma=10.0) -> dict[str, int]:
    """Seed map -> i32 [N,3] debug dump of (i, j, partition code)."""
    pairs = mine_pairs(load_seeds(seeds_path), gamma)
    blocks = [np.hstack([getattr(pairs, name), np.full((len(getattr(pairs, name)), 1), code)])
              for name, code in PAIR_CODES]
    write_tensor(out_path, np.vstack(blocks).astype(np.int32))
    return {name: len(getattr(pairs, name)) for name, _ in PAIR_CODES}


def file_fit(seeds_path, out_disp, out_boundary, out_trace, gamma=10.0,
             fit_cfg: FitConfig = FitConfig()) -> None:
    """Seed map -> fitted displacement/boundary fields plus a plain-text
    loss trace (one "step value" line per step)."""
    seeds = load_seeds(seeds_path)
    pairs = mine_pairs(seeds, gamma)
    disp, boundary, trace = fit_fields(pairs, seeds.shape, fit_cfg)
    write_tensor(out_disp, disp.vectors.astype(np.float32))
    write_tensor(out_boundary, boundary.values.astype(np.float32))
    with open(out_trace, "w") as fh:
        fh.writelines(f"{step} {value!r}\n" for step, value in enumerate(trace))


def file_instmap(disp_path, seeds_path, out_path, refine_iters=100,
                 centroid_threshold=2.5, snap_radius=5.0) -> None:
    """Displacement field + seeds -> instance component map (i32 FLDT)."""
    disp = load_disp(disp_path)
    seeds = load_seeds(seeds_path)
    if disp.shape != seeds.shape:
        raise InputError(f"{disp_path}: field shape differs from seeds in {seeds_path}")
    refined = refine_displacement(center_displacement(disp, seeds), refine_iters)
    centroids = detect_centroids(refined, centroid_threshold)
    imap = build_instance_map(refined, centroids, snap_radius)
    write_tensor(out_path, imap.ids)


def file_affinity(boundary_path, out_path, gamma_infer=5.0) -> int:
    """Boundary map -> f32 [n,3] debug dump of affinity entries (i, j, a)."""
    graph = build_affinity_graph(load_boundary(boundary_path), gamma_infer)
    coo = graph.matrix.tocoo()
    entries = np.column_stack([coo.row, coo.col, coo.data]).astype(np.float32)
    write_tensor(out_path, entries)
    return len(coo.data)


def _transition(boundary: BoundaryMap, gamma_infer: float, beta: float) -> TransitionMatrix:
    return transition_matrix(build_affinity_graph(boundary, gamma_infer), beta)


def file_propagate(cams_path, boundary_path, out_planes, instmap_path=None,
                   out_keys=None, semantic=False, beta=10.0, t=256,
                   gamma_infer=5.0, threads=1) -> None:
    """Random-walk propagation of instance channels (default) or raw class
    planes (semantic). Instance mode writes planes + channel keys."""
    cams = load_cams(cams_path)
    boundary = load_boundary(boundary_path)
    if cams.shape != boundary.shape:
        raise InputError(f"{boundary_path}: boundary shape differs from scores in {cams_path}")
    trans = _transition(boundary, gamma_infer, beta)
    if semantic:
        planes = propagate_semantic(cams, trans, boundary, t, threads)
        write_tensor(out_planes, planes.astype(np.float32))
        return
    if instmap_path is None or out_keys is None:
        raise InputError("instance propagation needs an instance map path and a keys output path")
    imap = load_instance_map(instmap_path)
    if imap.shape != cams.shape:
        raise InputError(f"{instmap_path}: instance map shape differs from scores in {cams_path}")
    out = propagate(instance_cams(cams, imap), trans, boundary, t, threads)
    write_tensor(out_planes, out.planes.astype(np.float32))
    write_tensor(out_keys, np.asarray(out.keys, dtype=np.int32).reshape(-1, 2))


def file_synth(planes_path, out_path, keys_path=None, semantic=False, split=False,
               bg_percentile=0.25, bg_mode="quantile") -> None:
    """Propagated planes -> label image. Instance mode reads channel keys;
    semantic mode labels class planes directly, optionally splitting each
    class region into 8-connected component instances."""
    if semantic:
        planes = _read(planes_path)
        if planes.ndim != 3:
            raise InputError(f"{planes_path}: expected f32 [C,H,W] planes, got dims {planes.shape}")
        labels = class_plane_labels(GridShape(*planes.shape[1:]), planes.astype(np.float64),
                                    bg_percentile, bg_mode)
        if split:
            labels = split_class_components(labels)
    else:
        if keys_path is None:
            raise InputError("instance synthesis needs the channel keys file")
        stack = load_score_stack(planes_path, keys_path)
        labels = synthesize_instance_labels(stack, bg_percentile, bg_mode)
    save_labels(out_path, labels)


def split_class_components(labels: LabelImage) -> LabelImage:
    """Split every class region into 8-connected components and number the
    components 1.. by their first pixel in raster order."""
    inst = np.zeros_like(labels.instance_plane)
    comps = []
    eight = np.ones((3, 3), dtype=bool)
    for c in np.unique(labels.class_plane):
        if c == 0:
            continue
        comp, n = ndimage.label(labels.class_plane == c, structure=eight)
        for k in range(1, n + 1):
            mask = comp == k
            comps.append((int(np.flatnonzero(mask.ravel())[0]), mask))
    comps.sort(key=lambda item: item[0])
    for next_id, (_, mask) in enumerate(comps, start=1):
        inst[mask] = next_id
    return LabelImage(labels.shape, labels.class_plane, inst)


def file_cam_only(cams_path, out_path, bg_percentile=0.25, bg_mode="quantile") -> None:
    """Ablation stage: threshold the normalized CAMs directly and split
    class regions into connected-component instances. No fields involved."""
    cams = load_cams(cams_path)
    labels = class_plane_labels(cams.shape, cams.planes, bg_percentile, bg_mode)
    save_labels(out_path, split_class_components(labels))


# ---------------------------------------------------------------------------
# the end-to-end driver


@dataclass
class RunManifest:
    """Everything needed to reproduce a pipeline run bit-exactly, plus the
    stage timings observed while producing it."""

    tool: str
    mode: str
    fields_source: str
    inputs: dict[str, str] = field(default_factory=dict)
    config: dict[str, object] = field(default_factory=dict)
    timings_ms: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"tool={self.tool}", f"mode={self.mode}", f"fields={self.fields_source}"]
        lines += [f"input.{k}={v}" for k, v in self.inputs.items()]
        lines += [f"config.{k}={v!r}" if isinstance(v, float) else f"config.{k}={v}"
                  for k, v in self.config.items()]
        lines += [f"timing.{k}_ms={v:.3f}" for k, v in self.timings_ms.items()]
        lines += [f"output.{k}={v}" for k, v in self.outputs.items()]
        return "\n".join(lines) + "\n"


def parse_manifest(path) -> dict[str, str]:
    """Flat key=value view of a manifest (or any key=value report) file."""
    out = {}
    try:
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{line_no}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return out


def _config_snapshot(config: PipelineConfig, fit_cfg: FitConfig, bg_mode: str,
                     threads: int) -> dict[str, object]:
    snap = {name: getattr(config, name) for name in (
        "theta_fg", "theta_bg", "gamma_train", "gamma_infer", "beta", "walk_iters",
        "refine_iters", "centroid_threshold", "bg_percentile", "eps_clamp", "snap_radius")}
    snap["bg_mode"] = bg_mode
    snap["threads"] = threads
    for name in ("steps", "step_size", "momentum", "init_scale", "seed"):
        snap[f"fit_{name}"] = getattr(fit_cfg, name)
    snap["fit_loss_weights"] = ",".join(repr(w) for w in fit_cfg.loss_weights)
    return snap


def run_pipeline(cams_path, fields_source, out_dir, config: PipelineConfig = PipelineConfig(),
                 fit_cfg: FitConfig = FitConfig(), mode="full", bg_mode="quantile",
                 threads=1, disp_path=None, boundary_path=None) -> RunManifest:
    """Drive the label-synthesis pipeline end to end over files in out_dir.

    Stage chain (full mode): seeds -> fit or load fields -> instance map ->
    propagate -> synthesize. `semantic` skips instancing and propagates the
    class planes; `cam-only` thresholds CAMs and splits components;
    `cam+boundary` propagates first, then splits. Writes every intermediate
    plus labels.fldt and manifest.txt into out_dir.
    """
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")
    if fields_source not in FIELD_SOURCES:
        raise InputError(f"unknown fields source {fields_source!r}; expected one of {FIELD_SOURCES}")
    if bg_mode not in BG_MODES:
        raise InputError(f"unknown background mode {bg_mode!r}; expected one of {BG_MODES}")
    if threads < 1:
        raise InputError("threads must be >= 1")
    os.makedirs(out_dir, exist_ok=True)

    # vet user inputs before any stage runs: past this point an InputError
    # can only concern a file the pipeline produced itself
    cams = load_cams(cams_path)
    if fields_source == "files" and mode != "cam-only":
        if boundary_path is None:
            raise InputError(f"mode {mode} with fields from files needs --boundary")
        if load_boundary(boundary_path).shape != cams.shape:
            raise InputError(f"{boundary_path}: boundary shape differs from scores in {cams_path}")
        if mode == "full":
            if disp_path is None:
                raise InputError("mode full with fields from files needs --disp")
            if load_disp(disp_path).shape != cams.shape:
                raise InputError(f"{disp_path}: field shape differs from scores in {cams_path}")

    manifest = RunManifest(tool=f"labelsynth {__version__}", mode=mode,
                           fields_source=fields_source,
                           inputs={"cams": str(cams_path)},
                           config=_config_snapshot(config, fit_cfg, bg_mode, threads))

    def timed(name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except InputError as exc:
            raise InvariantError(f"stage {name}: {exc}") from exc
        manifest.timings_ms[name] = (time.perf_counter() - start) * 1e3
        return result

    def out(name, filename):
        path = os.path.join(out_dir, filename)
        manifest.outputs[name] = path
        return path

    if mode == "cam-only":
        timed("synth", file_cam_only, cams_path, out("labels", "labels.fldt"),
              config.bg_percentile, bg_mode)
        return _finish(manifest, out_dir)

    if fields_source == "fit":
        seeds_path = out("seeds", "seeds.fldt")
        timed("seeds", file_seeds, cams_path, seeds_path, config.theta_fg, config.theta_bg)
        disp_p = out("disp", "disp.fldt")
        bound_p = out("boundary", "boundary.fldt")
        timed("fit", file_fit, seeds_path, disp_p, bound_p, out("trace", "loss_trace.txt"),
              config.gamma_train, fit_cfg)
    else:
        bound_p, disp_p = boundary_path, disp_path
        manifest.inputs["boundary"] = str(boundary_path)
        if mode == "full":
            manifest.inputs["disp"] = str(disp_path)
            seeds_path = out("seeds", "seeds.fldt")
            timed("seeds", file_seeds, cams_path, seeds_path, config.theta_fg, config.theta_bg)

    planes_p = out("planes", "planes.fldt")
    if mode == "full":
        instmap_p = out("instmap", "instmap.fldt")
        timed("instmap", file_instmap, disp_p, seeds_path, instmap_p,
              config.refine_iters, config.centroid_threshold, config.snap_radius)
        keys_p = out("keys", "keys.fldt")
        timed("propagate", file_propagate, cams_path, bound_p, planes_p,
              instmap_path=instmap_p, out_keys=keys_p, beta=config.beta,
              t=config.walk_iters, gamma_infer=config.gamma_infer, threads=threads)
        timed("synth", file_synth, planes_p, out("labels", "labels.fldt"), keys_path=keys_p,
              bg_percentile=config.bg_percentile, bg_mode=bg_mode)
    else:
        timed("propagate", file_propagate, cams_path, bound_p, planes_p, semantic=True,
              beta=config.beta, t=config.walk_iters, gamma_infer=config.gamma_infer,
              threads=threads)
        timed("synth", file_synth, planes_p, out("labels", "labels.fldt"), semantic=True,
              split=mode == "cam+boundary", bg_percentile=config.bg_percentile,
              bg_mode=bg_mode)
    return _finish(manifest, out_dir)


def _finish(manifest: RunManifest, out_dir) -> RunManifest:
    path = os.path.join(out_dir, "manifest.txt")
    manifest.outputs["manifest"] = path
    with open(path, "w") as fh:
        fh.write(manifest.to_text())
    return manifest
