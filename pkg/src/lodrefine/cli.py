"""Command-line interface.

Three subcommands:

* ``refine``   — full pipeline: visibility analysis, map fusion,
  instance extraction, library fitting, semantic embedding.  Writes
  ``refined.cm.json``, ``refined.gml``, and ``report.json`` into the
  output directory (plus optional map/voxel exports).
* ``maps``     — diagnostic export of the per-wall rasters
  (``<wall>_conflict.pgm``, ``<wall>_pc.pgm``, ``<wall>_posterior.pgm``).
* ``validate`` — run the model validator and print findings.

Configuration comes from flags, optionally layered over a JSON config
file (flags win).  All outputs are byte-identical across runs with the
same configuration; the embedding timestamp is part of the
configuration (key ``timestamp``), not wall-clock time.

Exit codes: 0 success; 2 completed with findings or skipped instances
(outputs still written); 1 fatal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import embed, fusion, maps, model, reconstruct, visibility
from .cloud import load_point_cloud
from .errors import EmptyWall, HoleOutsideWall, HoleOverlap, LodRefineError
from .geom import rings_in_frame, wall_frame_from_polygon

DEFAULT_TIMESTAMP = "1970-01-01T00:00:00Z"

_DEFAULTS = {
    "voxel_size": visibility.DEFAULT_VOXEL_SIZE,
    "padding": visibility.DEFAULT_PADDING,
    "resolution": maps.DEFAULT_RESOLUTION,
    "max_offset": maps.DEFAULT_MAX_OFFSET,
    "sigma_model": 0.3,
    "sigma_point": 0.05,
    "threshold": fusion.DEFAULT_THRESHOLD,
    "min_area": fusion.DEFAULT_MIN_AREA,
    "opening_depth": reconstruct.DEFAULT_OPENING_DEPTH,
    "installation_depth": reconstruct.DEFAULT_INSTALLATION_DEPTH,
    "jobs": 1,
    "timestamp": DEFAULT_TIMESTAMP,
}


@dataclass
class RunConfig:
    """Resolved pipeline configuration (flags over config file over defaults)."""

    model: str = None
    cloud: str = None
    textures: str = None
    library: str = None
    out: str = "."
    voxel_size: float = _DEFAULTS["voxel_size"]
    padding: float = _DEFAULTS["padding"]
    resolution: float = _DEFAULTS["resolution"]
    max_offset: float = _DEFAULTS["max_offset"]
    sigma_model: float = _DEFAULTS["sigma_model"]
    sigma_point: float = _DEFAULTS["sigma_point"]
    threshold: float = _DEFAULTS["threshold"]
    min_area: float = _DEFAULTS["min_area"]
    opening_depth: float = _DEFAULTS["opening_depth"]
    installation_depth: float = _DEFAULTS["installation_depth"]
    jobs: int = 1
    timestamp: str = DEFAULT_TIMESTAMP
    export_maps: bool = False
    export_voxels: bool = False
    disable_underpass_rule: bool = False

    def validate(self):
        for key in ("voxel_size", "padding", "resolution", "max_offset",
                    "sigma_model", "sigma_point", "min_area",
                    "opening_depth", "installation_depth"):
            value = getattr(self, key)
            if key != "padding" and value <= 0:
                raise ValueError(f"--{key.replace('_', '-')} must be positive")
            if key == "padding" and value < 0:
                raise ValueError("--padding must be non-negative")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("--threshold must be in (0, 1)")
        if self.jobs < 1:
            raise ValueError("--jobs must be >= 1")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lodrefine",
        description="Refine LoD1/LoD2 building models to LoD3 from labeled MLS scans.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--model", help="input building model (.cm.json)")
        sp.add_argument("--cloud", help="labeled point cloud (.lpc)")
        sp.add_argument("--textures",
                        help="JSON manifest mapping wall ids to texture rasters")
        sp.add_argument("--library", help="object library JSON (default: built-in)")
        sp.add_argument("--out", help="output directory (default: current)")
        sp.add_argument("--config", help="JSON config file; flags override it")
        for key in ("voxel-size", "padding", "resolution", "max-offset",
                    "sigma-model", "sigma-point", "threshold", "min-area",
                    "opening-depth", "installation-depth"):
            sp.add_argument(f"--{key}", type=float)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--timestamp", help="acquisition timestamp attribute (ISO-8601)")
        sp.add_argument("--export-maps", action="store_true", default=None)
        sp.add_argument("--export-voxels", action="store_true", default=None)
        sp.add_argument("--disable-underpass-rule", action="store_true", default=None)

    common(sub.add_parser("refine", help="run the full refinement pipeline"))
    common(sub.add_parser("maps", help="export per-wall probability map rasters"))
    v = sub.add_parser("validate", help="validate a building model")
    v.add_argument("--model", required=True)
    return p


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = {}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "rb") as f:
            try:
                cfg = json.load(f)
            except json.JSONDecodeError as exc:
                raise LodRefineError(f"config {config_path}: invalid JSON ({exc})")
        if not isinstance(cfg, dict):
            raise LodRefineError(f"config {config_path}: expected a JSON object")

    rc = RunConfig()
    for key in vars(rc):
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(rc, key, flag)
        elif key in cfg:
            setattr(rc, key, cfg[key])
    rc.validate()
    return rc


# ---------------------------------------------------------------------------
# pipeline pieces

@dataclass
class WallDetection:
    """Per-wall intermediate results of the detection stage."""

    wall_id: str
    frame: object
    conflicts: object
    conflict_map: object
    pc_map: object
    posterior: object
    instances: list
    conflict_coverage: bool = True
    notes: list = field(default_factory=list)


def _load_textures(cfg: RunConfig) -> dict:
    """Texture manifest: wall_id -> raster (PGM path or {raw, sidecar})."""
    if not cfg.textures:
        return {}
    with open(cfg.textures, "rb") as f:
        manifest = json.load(f)
    out = {}
    for wall_id, entry in manifest.items():
        if isinstance(entry, str):
            with open(entry, "rb") as f:
                out[wall_id] = maps.read_texture_pgm(f.read())
        else:
            with open(entry["raw"], "rb") as f:
                raw = f.read()
            with open(entry["sidecar"], "rb") as f:
                side = f.read()
            out[wall_id] = maps.read_texture_raw(raw, side)
    return out


def _detect_wall(wall, occ, states, cloud, textures, cfg: RunConfig) -> WallDetection:
    """Detection stage for one wall: conflicts, maps, fusion, instances."""
    from .cloud import UncertaintyParams

    params = UncertaintyParams(sigma_model=cfg.sigma_model, sigma_point=cfg.sigma_point)
    frame = wall_frame_from_polygon(wall.geometry)
    rings = rings_in_frame(wall.geometry, frame)
    wc = visibility.classify_wall_conflicts(occ, states, wall.id, frame, rings, params)

    notes = []
    coverage = True
    try:
        conflict_map = maps.rasterize_conflicts(wc, wall.geometry, cfg.resolution)
    except EmptyWall:
        conflict_map = maps.uniform_conflict_map(frame, wall.geometry, cfg.resolution)
        coverage = False
        notes.append("no conflict coverage: wall not reached by any ray")

    pc_map = maps.rasterize_point_labels(cloud, frame, cfg.resolution, cfg.max_offset)
    tex_map = None
    if wall.id in textures:
        tex_map = maps.ingest_texture_map(textures[wall.id], frame, cfg.resolution)

    posterior = fusion.fuse(conflict_map, pc_map, tex_map)
    instances = fusion.extract_instances(
        posterior, threshold=cfg.threshold, min_area=cfg.min_area, wall_id=wall.id,
        underpass_rule=not cfg.disable_underpass_rule)
    return WallDetection(wall_id=wall.id, frame=frame, conflicts=wc,
                         conflict_map=conflict_map, pc_map=pc_map,
                         posterior=posterior, instances=instances,
                         conflict_coverage=coverage, notes=notes)


def _run_detection(cfg: RunConfig):
    """Shared front half of refine/maps: load inputs, cast, detect per wall."""
    m = model.load_model(cfg.model)
    cloud = load_point_cloud(cfg.cloud)
    textures = _load_textures(cfg)

    grid = visibility.build_grid(cloud, m, cfg.voxel_size, cfg.padding)
    occ = visibility.cast_all(grid, cloud, jobs=cfg.jobs)
    states = visibility.voxel_state(occ)

    walls = [w for b in m.buildings for w in b.walls()]
    if cfg.jobs > 1 and len(walls) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            detections = list(pool.map(
                lambda w: _detect_wall(w, occ, states, cloud, textures, cfg), walls))
    else:
        detections = [_detect_wall(w, occ, states, cloud, textures, cfg)
                      for w in walls]
    return m, cloud, occ, states, detections


def _merged_instances(det: WallDetection) -> list:
    return reconstruct.merge_opening_instances(det.instances)


def _instance_row(inst) -> dict:
    row = json.loads(fusion.instances_to_json([inst]).decode("utf-8"))[0]
    row["pixel_count"] = inst.pixel_count
    return row


def _write(path, data: bytes):
    with open(path, "wb") as f:
        f.write(data)


def cmd_refine(cfg: RunConfig) -> int:
    import os

    for key in ("model", "cloud"):
        if not getattr(cfg, key):
            print(f"error: refine requires --{key}", file=sys.stderr)
            return 1
    m, cloud, occ, states, detections = _run_detection(cfg)
    library = (reconstruct.load_library(cfg.library) if cfg.library
               else reconstruct.default_library())

    refined = m
    report_walls = {}
    n_embedded = 0
    n_skipped = 0
    for det in detections:
        frame = det.frame
        embedded_rows = []
        skipped_rows = []
        for inst in _merged_instances(det):
            lib = library.get(inst.cls)
            if lib is None:
                skipped_rows.append({**_instance_row(inst),
                                     "reason": f"no library object for {inst.cls.value}"})
                continue
            try:
                if inst.cls in fusion.OPENING_CLASSES:
                    rect = reconstruct.inset_rect_to_frame(
                        inst.rect, frame, cfg.resolution / 2.0)
                    if rect != inst.rect:
                        inst = dataclasses.replace(inst, rect=rect)
                    placed = reconstruct.fit_object(inst, lib, frame, cfg.opening_depth)
                    refined = embed.embed_opening(refined, det.wall_id, placed,
                                                  cfg.timestamp)
                else:
                    placed = reconstruct.build_installation_geometry(
                        inst, lib, frame, cfg.installation_depth)
                    refined = embed.embed_installation(refined, det.wall_id, placed,
                                                       cfg.timestamp)
            except (HoleOutsideWall, HoleOverlap) as exc:
                skipped_rows.append({**_instance_row(inst), "reason": str(exc)})
                continue
            embedded_rows.append(_instance_row(inst))
        n_embedded += len(embedded_rows)
        n_skipped += len(skipped_rows)
        report_walls[det.wall_id] = {
            "instances": embedded_rows,
            "skipped": skipped_rows,
            "conflict_coverage": det.conflict_coverage,
            "notes": det.notes,
        }

    validation = model.validate_model(refined)

    os.makedirs(cfg.out, exist_ok=True)
    _write(os.path.join(cfg.out, "refined.cm.json"), model.serialize_model(refined))
    _write(os.path.join(cfg.out, "refined.gml"), model.export_citygml(refined))
    report = {
        "walls": {k: report_walls[k] for k in sorted(report_walls)},
        "validation": validation.to_json(),
        "embedded": n_embedded,
        "skipped": n_skipped,
    }
    _write(os.path.join(cfg.out, "report.json"),
           (json.dumps(report, indent=1, sort_keys=True) + "\n").encode("utf-8"))

    if cfg.export_maps:
        _export_maps(cfg, detections)
    if cfg.export_voxels:
        _write(os.path.join(cfg.out, "voxels.txt"),
               _voxel_dump(occ, states, detections).encode("utf-8"))

    if not validation.clean or n_skipped:
        return 2
    return 0


def _voxel_dump(occ, states, detections) -> str:
    conflicts = {det.wall_id: det.conflicts for det in detections}
    merged = visibility.conflict_state_grid(states, conflicts)
    p_conf = visibility.p_confirmed_grid(occ.grid.dims, conflicts)
    return visibility.dump_voxels(merged, p_conf)


def _export_maps(cfg: RunConfig, detections) -> None:
    import os
    import re

    import numpy as np

    os.makedirs(cfg.out, exist_ok=True)
    for det in detections:
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", det.wall_id)
        base = os.path.join(cfg.out, safe)
        _write(base + "_conflict.pgm", maps.export_map_pgm(det.conflict_map, "conflict"))
        # Multichannel rasters export their per-pixel winning value.
        for tag, pmap in (("pc", det.pc_map), ("posterior", det.posterior)):
            best = np.max(pmap.values, axis=0)
            flat = maps.ProbabilityMap(frame=pmap.frame, resolution=pmap.resolution,
                                       channels=("best",), values=best[None])
            _write(f"{base}_{tag}.pgm", maps.export_map_pgm(flat, "best"))


def cmd_maps(cfg: RunConfig) -> int:
    for key in ("model", "cloud"):
        if not getattr(cfg, key):
            print(f"error: maps requires --{key}", file=sys.stderr)
            return 1
    _, _, occ, states, detections = _run_detection(cfg)
    _export_maps(cfg, detections)
    if cfg.export_voxels:
        import os

        _write(os.path.join(cfg.out, "voxels.txt"),
               _voxel_dump(occ, states, detections).encode("utf-8"))
    return 0


def cmd_validate(model_path: str) -> int:
    m = model.load_model(model_path)
    report = model.validate_model(m)
    sys.stdout.write(report.format_text())
    return 0 if report.clean else 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.model)
        cfg = _resolve_config(args)
        if args.command == "refine":
            return cmd_refine(cfg)
        return cmd_maps(cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc.filename or exc}: file not found", file=sys.stderr)
        return 1
    except (LodRefineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
