"""FastAPI service wrapping the engine.

Endpoints operate on server-visible file paths (this is a local tool
service; run it next to your data). Fitted prototype sets can be held in
the process under a name (``store_as``) so a long-running deployment can
fit once and serve many predictions.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..annotation import (BoundingBox, boxes_to_patch_labels,
                          mask_to_tight_boxes)
from ..errors import ManifestError, PromiError
from ..evaluation import (load_manifest, run_benchmark, sweep, write_report,
                          write_sweep_csv, write_sweep_plot)
from ..feature_store import l2_normalize, load_feature_map
from ..fixtures import write_scene_pool
from ..inference import predict
from ..mask_io import (load_mask_png, mask_to_rle, save_mask_png,
                       save_mask_rle, save_overlay_png)
from ..prototypes import SupportBatch, fit, load_prototypes, save_prototypes
from ..synth import SynthScene, load_scene_file
from . import schemas

logger = logging.getLogger("promi.service")


def create_app() -> FastAPI:
    app = FastAPI(title="promi", version=__version__,
                  description="Prototype-mixture few-shot binary segmentation")
    app.state.prototype_store = {}

    @app.exception_handler(PromiError)
    async def promi_error_handler(request: Request, exc: PromiError):
        logger.warning("%s: %s", type(exc).__name__, exc)
        return JSONResponse(status_code=422, content={
            "error": type(exc).__name__, "message": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/fit", response_model=schemas.FitResponse)
    def fit_endpoint(req: schemas.FitRequest):
        items = _support_items(req)
        maps, grids = [], []
        for item in items:
            fmap = load_feature_map(item.feature_path, image_h=item.image_h,
                                    image_w=item.image_w)
            boxes = _item_boxes(item)
            maps.append(l2_normalize(fmap))
            grids.append(boxes_to_patch_labels(
                boxes, image_h=fmap.image_h, image_w=fmap.image_w,
                grid_h=fmap.grid_h, grid_w=fmap.grid_w))
        batch = SupportBatch.from_maps(maps, grids)
        protos = fit(batch, req.config.to_core())
        if req.output_path:
            save_prototypes(protos, req.output_path)
        diagnostics_path = None
        if req.diagnostics_path or req.output_path:
            diagnostics_path = req.diagnostics_path or str(
                Path(req.output_path).with_suffix(".diag.json"))
            _write_diagnostics(diagnostics_path, req, protos)
        if req.store_as:
            app.state.prototype_store[req.store_as] = protos
        return schemas.FitResponse(
            depth=protos.depth, num_bg=protos.num_bg, k_max=protos.k_max,
            diagnostics=_diag_model(protos),
            output_path=req.output_path,
            diagnostics_path=diagnostics_path,
            stored_as=req.store_as)

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict_endpoint(req: schemas.PredictRequest):
        if req.prototypes_ref is not None:
            protos = app.state.prototype_store.get(req.prototypes_ref)
            if protos is None:
                raise ManifestError(
                    f"no stored prototype set named {req.prototypes_ref!r}")
        elif req.prototypes_path is not None:
            protos = load_prototypes(req.prototypes_path)
        else:
            raise ManifestError("need prototypes_path or prototypes_ref")
        query = l2_normalize(load_feature_map(
            req.query_feature_path, image_h=req.image_h, image_w=req.image_w))
        mask = predict(query, protos)
        if req.mask_path:
            save_mask_png(mask, req.mask_path)
        if req.rle_path:
            save_mask_rle(mask, req.rle_path)
        if req.overlay_path:
            if not req.source_image_path:
                raise ManifestError("overlay_path needs source_image_path")
            save_overlay_png(mask, req.source_image_path, req.overlay_path)
        return schemas.PredictResponse(
            height=mask.height, width=mask.width,
            foreground_pixels=int(mask.data.sum()),
            mask_path=req.mask_path, rle_path=req.rle_path,
            overlay_path=req.overlay_path,
            rle=mask_to_rle(mask) if req.include_rle else None)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate_endpoint(req: schemas.EvaluateRequest):
        manifest = load_manifest(req.manifest_path)
        report = run_benchmark(
            manifest, req.config.to_core(), seeds=req.seeds,
            tasks_per_seed=req.tasks_per_seed, shots=req.shots,
            include_background_class=req.include_background_class,
            jobs=req.jobs)
        if req.report_path:
            write_report(report, req.report_path)
        if req.csv_path:
            _write_eval_csv(report, req.csv_path)
        return schemas.EvaluateResponse(
            mean_iou=report["mean_iou"],
            per_seed_mean_iou=[s["mean_iou"] for s in report["seeds"]],
            failed_tasks=sum(s["failed_tasks"] for s in report["seeds"]),
            report_path=req.report_path, csv_path=req.csv_path,
            report=report)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep_endpoint(req: schemas.SweepRequest):
        manifest = load_manifest(req.manifest_path)
        rows = sweep(manifest, req.config.to_core(), req.axis,
                     values=req.values, seeds=req.seeds,
                     tasks_per_seed=req.tasks_per_seed, shots=req.shots,
                     include_background_class=req.include_background_class,
                     jobs=req.jobs)
        if req.json_path:
            write_report({"rows": rows}, req.json_path)
        if req.csv_path:
            write_sweep_csv(rows, req.csv_path)
        if req.plot_path:
            write_sweep_plot(rows, req.plot_path)
        return schemas.SweepResponse(
            rows=[schemas.SweepRow(axis=r["axis"], value=r["value"],
                                   mean_iou=r["report"]["mean_iou"])
                  for r in rows],
            json_path=req.json_path, csv_path=req.csv_path,
            plot_path=req.plot_path)

    @app.post("/synthesize", response_model=schemas.SynthResponse)
    def synthesize_endpoint(req: schemas.SynthRequest):
        if req.scenes is not None:
            scenes = [SynthScene.from_dict(s) for s in req.scenes]
        elif req.scene_path is not None:
            scenes = load_scene_file(req.scene_path)
        else:
            raise ManifestError("need scene_path or inline scenes")
        manifest_path = write_scene_pool(scenes, req.out_dir,
                                         images_per_class=req.images_per_class)
        n_files = sum(1 for _ in Path(req.out_dir).rglob("*") if _.is_file())
        return schemas.SynthResponse(
            manifest_path=str(manifest_path),
            classes=[s.name for s in scenes],
            files_written=n_files)

    @app.post("/boxes/derive", response_model=schemas.DeriveBoxesResponse)
    def derive_boxes_endpoint(req: schemas.DeriveBoxesRequest):
        mask = load_mask_png(req.mask_path)
        boxes = mask_to_tight_boxes(mask, connectivity=req.connectivity,
                                    min_component_px=req.min_component_px)
        return schemas.DeriveBoxesResponse(boxes=[b.as_list() for b in boxes])

    return app


def _support_items(req: schemas.FitRequest) -> list[schemas.SupportItem]:
    import json

    if req.support:
        return req.support
    if not req.support_manifest_path:
        raise ManifestError("need inline support items or support_manifest_path")
    path = Path(req.support_manifest_path)
    if not path.is_file():
        raise ManifestError(f"support manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
        items = [schemas.SupportItem(**ent) for ent in raw["support"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"bad support manifest {path}: {exc}") from exc
    base = path.parent
    resolved = []
    for item in items:
        upd = {"feature_path": str(_resolve(base, item.feature_path))}
        if item.mask_path:
            upd["mask_path"] = str(_resolve(base, item.mask_path))
        resolved.append(item.model_copy(update=upd))
    return resolved


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _item_boxes(item: schemas.SupportItem) -> list[BoundingBox]:
    if item.boxes:
        return [BoundingBox.from_list(b) for b in item.boxes]
    if item.mask_path:
        return mask_to_tight_boxes(load_mask_png(item.mask_path))
    raise ManifestError(
        f"support item {item.feature_path} has neither boxes nor a mask")


def _diag_model(protos) -> schemas.DiagnosticsModel:
    d = protos.diagnostics
    return schemas.DiagnosticsModel(
        iterations_run=d.iterations_run, spawn_events=d.spawn_events,
        empty_cluster_events=d.empty_cluster_events,
        stop_reason=d.stop_reason)


def _write_diagnostics(path, req: schemas.FitRequest, protos) -> None:
    import json

    payload = {
        "config": req.config.model_dump(),
        "depth": protos.depth,
        "num_bg": protos.num_bg,
        "diagnostics": _diag_model(protos).model_dump(),
    }
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_eval_csv(report: dict, path) -> None:
    import csv

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "class", "intersection", "union", "iou",
                         "tasks"])
        for seed_rep in report["seeds"]:
            for name in sorted(seed_rep["classes"]):
                c = seed_rep["classes"][name]
                writer.writerow([seed_rep["seed"], name, c["intersection"],
                                 c["union"], c["iou"], c["tasks"]])
            writer.writerow([seed_rep["seed"], "__mean__", "", "",
                             seed_rep["mean_iou"], ""])
        writer.writerow(["all", "__mean__", "", "", report["mean_iou"], ""])


app = create_app()


def serve() -> None:
    """Run the service under uvicorn (honors PROMI_LOG)."""
    import uvicorn

    level = os.environ.get("PROMI_LOG", "info").lower()
    uvicorn.run("promi.service.app:app", host="127.0.0.1", port=8008,
                log_level=level)
