"""HTTP front door: upload an image, poll the job, download exports."""

from __future__ import annotations

from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from ..config import ServiceConfig
from ..geometry import simplify_polygon
from ..tiling import WindowedReader
from .exports import export_csv, export_masks_zip, overlay_png_bytes
from .jobs import JobError, JobParams, JobRecord, JobRunner, JobStore


def _error(exc: JobError) -> JSONResponse:
    return JSONResponse(
        status_code=exc.status, content={"code": exc.code, "message": exc.message}
    )


def _job_summary(record: JobRecord) -> dict:
    return {
        "id": record.id,
        "state": record.state,
        "created": record.created,
        "finished": record.finished,
        "input_name": record.input_name,
        "image_size": record.image_size,
        "params": record.to_json()["params"],
        "error": record.error,
        "warnings": record.warnings,
        "counts": record.counts,
        "duplicates_removed": record.duplicates_removed,
        "border_excluded": record.border_excluded,
        "rejected_measurements": record.rejected_measurements,
    }


def create_app(config: ServiceConfig, frontend_dir: str | Path | None = None) -> FastAPI:
    store = JobStore(config.data_root)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        runner.start()
        yield
        runner.stop()

    app = FastAPI(title="fiberscope", version="0.1.0", lifespan=lifespan)
    runner = JobRunner(store, config)
    app.state.store = store
    app.state.runner = runner
    app.state.config = config

    @app.exception_handler(JobError)
    async def job_error_handler(request: Request, exc: JobError):
        return _error(exc)

    @app.post("/api/jobs")
    async def submit_job(
        file: UploadFile = File(...),
        conf: float = Form(default=config.inference.conf_threshold),
        nms: float = Form(default=config.inference.nms_iou),
        tile: int = Form(default=config.tiling.tile_size),
        overlap: int = Form(default=config.tiling.overlap),
        dedup: float = Form(default=config.tiling.dedup_iou),
        border_margin: int = Form(default=config.tiling.border_margin),
        px_um: float = Form(default=config.calibration.microns_per_pixel),
    ):
        data = await file.read()
        try:
            params = JobParams(
                conf_threshold=conf,
                nms_iou=nms,
                tile_size=tile,
                overlap=overlap,
                dedup_iou=dedup,
                border_margin=border_margin,
                microns_per_pixel=px_um,
            )
        except ValueError as exc:
            raise JobError("invalid_params", str(exc), 400) from exc
        record = store.create(data, file.filename or "upload.png", params)
        runner.submit(record.id)
        return {"id": record.id}

    @app.get("/api/jobs")
    async def list_jobs():
        return {"jobs": [_job_summary(r) for r in store.list_jobs()]}

    @app.get("/api/jobs/{job_id}")
    async def get_job(job_id: str):
        record = store.get(job_id)
        payload = _job_summary(record)
        if record.state == "done":
            detections, records = store.load_results(job_id)
            by_id = {r.object_id: r for r in records}
            rows = []
            for det in detections:
                rec = by_id.get(det.object_id)
                if rec is None:
                    continue
                contour = simplify_polygon(det.contour, tolerance=1.0)
                rows.append(
                    {
                        "object_id": det.object_id,
                        "class": det.class_name,
                        "confidence": round(det.confidence, 4),
                        "bbox": [det.box.x0, det.box.y0, det.box.x1, det.box.y1],
                        "contour": np.round(contour.vertices, 2).tolist(),
                        "length_um": rec.length_um,
                        "width_um": rec.width_um,
                        "area_um2": rec.area_um2,
                    }
                )
            payload["detections"] = rows
            payload["exports"] = {
                "csv": f"/api/jobs/{job_id}/results.csv",
                "masks": f"/api/jobs/{job_id}/masks.zip",
                "overlay": f"/api/jobs/{job_id}/overlay.png",
            }
        return payload

    @app.get("/api/jobs/{job_id}/results.csv")
    async def results_csv(job_id: str):
        detections, records = store.load_results(job_id)
        return Response(
            content=export_csv(detections, records),
            media_type="text/csv",
            headers={
                "Content-Disposition": f'attachment; filename="{job_id}_results.csv"'
            },
        )

    @app.get("/api/jobs/{job_id}/masks.zip")
    async def masks_zip(job_id: str):
        record = store.get(job_id)
        detections, _ = store.load_results(job_id)
        return Response(
            content=export_masks_zip(detections, record.image_size, job_id),
            media_type="application/zip",
            headers={
                "Content-Disposition": f'attachment; filename="{job_id}_masks.zip"'
            },
        )

    @app.get("/api/jobs/{job_id}/overlay.png")
    async def overlay(job_id: str, conf: float = 0.0, max_px: int | None = None):
        record = store.get(job_id)
        detections, _ = store.load_results(job_id)
        reader = WindowedReader(store.input_path(job_id))
        image = reader.read_window(0, 0, reader.width, reader.height)
        return Response(
            content=overlay_png_bytes(image, detections, conf, max_px),
            media_type="image/png",
        )

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app
