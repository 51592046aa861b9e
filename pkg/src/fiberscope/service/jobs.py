"""Durable analysis jobs: one directory per job under a data root.

Layout: jobs/<id>/{input.<ext>, params.json, status.json, detections.json,
masks.npz, measurements.json}.  Status transitions queued -> running ->
done|failed are atomic file replacements, so jobs survive process restarts
and exports stay byte-identical.
"""

from __future__ import annotations

import io
import json
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

from PIL import Image

from ..config import (
    CalibrationConfig,
    InferenceParams,
    MorphometryConfig,
    ServiceConfig,
    TilingParams,
)
from ..inference import Detection, load_detections, load_session, save_detections
from ..morphometry import MorphometryRecord, measure_detections
from ..tiling import MergedDetectionSet, WindowedReader, plan_tiles, run_tiled

VALID_STATES = ("queued", "running", "done", "failed")


class JobError(Exception):
    """Job-level failure with an HTTP-ish code."""

    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


@dataclass(frozen=True)
class JobParams:
    """Immutable parameter snapshot taken at submission."""

    conf_threshold: float = 0.25
    nms_iou: float = 0.7
    tile_size: int = 1024
    overlap: int = 256
    dedup_iou: float = 0.5
    border_margin: int = 0
    microns_per_pixel: float = 0.65

    def __post_init__(self) -> None:
        InferenceParams(conf_threshold=self.conf_threshold, nms_iou=self.nms_iou)
        TilingParams(
            tile_size=self.tile_size,
            overlap=self.overlap,
            dedup_iou=self.dedup_iou,
            border_margin=self.border_margin,
        )
        CalibrationConfig(microns_per_pixel=self.microns_per_pixel)

    def inference(self) -> InferenceParams:
        return InferenceParams(
            conf_threshold=self.conf_threshold, nms_iou=self.nms_iou
        )

    def tiling(self, workers: int = 2) -> TilingParams:
        return TilingParams(
            tile_size=self.tile_size,
            overlap=self.overlap,
            dedup_iou=self.dedup_iou,
            border_margin=self.border_margin,
            workers=workers,
        )


@dataclass
class JobRecord:
    id: str
    state: str
    created: float
    finished: float | None
    params: JobParams
    input_name: str
    image_size: tuple[int, int] | None = None
    error: str | None = None
    warnings: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    duplicates_removed: int = 0
    border_excluded: int = 0
    rejected_measurements: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        return d

    @staticmethod
    def from_json(d: dict) -> "JobRecord":
        params = JobParams(**d.pop("params"))
        size = d.get("image_size")
        d["image_size"] = tuple(size) if size else None
        return JobRecord(params=params, **{k: v for k, v in d.items() if k != "params"})


def analyze_image(
    session,
    image,
    params: JobParams,
    workers: int = 2,
    morphometry: MorphometryConfig | None = None,
) -> tuple[MergedDetectionSet, list[MorphometryRecord], list[tuple[int | None, str]]]:
    """Tiled detection plus morphometry; the shared core of CLI and service."""
    reader = image if isinstance(image, WindowedReader) else WindowedReader(image)
    grid = plan_tiles(reader.size, params.tile_size, params.overlap)
    merged = run_tiled(
        session,
        reader,
        grid=grid,
        inference=params.inference(),
        tiling=params.tiling(workers),
    )
    calibration = CalibrationConfig(microns_per_pixel=params.microns_per_pixel)
    records, rejected = measure_detections(
        merged.detections, calibration, morphometry or MorphometryConfig()
    )
    return merged, records, rejected


class JobStore:
    """Filesystem-backed job persistence."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def job_dir(self, job_id: str) -> Path:
        return self.root / "jobs" / job_id

    def create(self, image_bytes: bytes, filename: str, params: JobParams) -> JobRecord:
        if not image_bytes:
            raise JobError("empty_upload", "uploaded file is empty", 400)
        try:
            probe = Image.open(io.BytesIO(image_bytes))
            probe.verify()
            probe = Image.open(io.BytesIO(image_bytes))
            size = probe.size
        except Exception as exc:
            raise JobError("undecodable_image", f"cannot decode image: {exc}", 400) from exc
        warnings = []
        if probe.mode not in ("RGB", "RGBA"):
            warnings.append(
                f"input mode {probe.mode} expanded to RGB for analysis"
            )
        if min(size) < params.tile_size:
            warnings.append("image smaller than tile; analyzed as a single tile")
        job_id = uuid.uuid4().hex[:12]
        jdir = self.job_dir(job_id)
        jdir.mkdir(parents=True)
        suffix = Path(filename).suffix.lower() or ".png"
        (jdir / f"input{suffix}").write_bytes(image_bytes)
        record = JobRecord(
            id=job_id,
            state="queued",
            created=time.time(),
            finished=None,
            params=params,
            input_name=filename,
            image_size=size,
            warnings=warnings,
        )
        self._write(record)
        (jdir / "params.json").write_text(json.dumps(asdict(params), indent=1))
        return record

    def _write(self, record: JobRecord) -> None:
        jdir = self.job_dir(record.id)
        tmp = jdir / "status.json.tmp"
        tmp.write_text(json.dumps(record.to_json(), indent=1))
        tmp.replace(jdir / "status.json")

    def get(self, job_id: str) -> JobRecord:
        status = self.job_dir(job_id) / "status.json"
        if not status.is_file():
            raise JobError("not_found", f"no job with id {job_id!r}", 404)
        return JobRecord.from_json(json.loads(status.read_text()))

    def list_jobs(self) -> list[JobRecord]:
        out = []
        jobs_dir = self.root / "jobs"
        for status in sorted(jobs_dir.glob("*/status.json")):
            out.append(JobRecord.from_json(json.loads(status.read_text())))
        out.sort(key=lambda r: r.created, reverse=True)
        return out

    def transition(self, job_id: str, state: str, **updates) -> JobRecord:
        if state not in VALID_STATES:
            raise ValueError(f"invalid state {state!r}")
        with self._lock:
            record = self.get(job_id)
            allowed = {
                "queued": ("running",),
                "running": ("done", "failed"),
                "done": (),
                "failed": (),
            }
            if state not in allowed[record.state]:
                raise JobError(
                    "invalid_transition",
                    f"cannot move job {job_id} from {record.state} to {state}",
                    409,
                )
            record.state = state
            for key, value in updates.items():
                setattr(record, key, value)
            if state in ("done", "failed"):
                record.finished = time.time()
            self._write(record)
            return record

    def input_path(self, job_id: str) -> Path:
        jdir = self.job_dir(job_id)
        for p in sorted(jdir.glob("input.*")):
            return p
        raise JobError("missing_input", f"job {job_id} has no stored input", 500)

    def save_results(
        self,
        job_id: str,
        merged: MergedDetectionSet,
        records: list[MorphometryRecord],
    ) -> None:
        jdir = self.job_dir(job_id)
        save_detections(
            merged.detections, jdir / "detections.json", jdir / "masks.npz"
        )
        rows = [asdict(r) for r in records]
        (jdir / "measurements.json").write_text(json.dumps(rows, indent=1))

    def load_results(
        self, job_id: str
    ) -> tuple[list[Detection], list[MorphometryRecord]]:
        record = self.get(job_id)
        if record.state != "done":
            raise JobError(
                "not_done", f"job {job_id} is {record.state}, not done", 409
            )
        jdir = self.job_dir(job_id)
        detections = load_detections(jdir / "detections.json", jdir / "masks.npz")
        rows = json.loads((jdir / "measurements.json").read_text())
        records = [MorphometryRecord(**row) for row in rows]
        return detections, records


class JobRunner:
    """In-process queue feeding a small pool of worker threads."""

    def __init__(self, store: JobStore, config: ServiceConfig):
        self.store = store
        self.config = config
        self._queue: queue.Queue[str] = queue.Queue()
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._session = None
        self._session_lock = threading.Lock()

    def session(self):
        with self._session_lock:
            if self._session is None:
                self._session = load_session(self.config.model_path)
            return self._session

    def start(self) -> None:
        if self._threads:
            return
        for k in range(max(1, self.config.workers)):
            t = threading.Thread(target=self._loop, name=f"fiberscope-worker-{k}", daemon=True)
            t.start()
            self._threads.append(t)
        # re-enqueue interrupted work from a previous process
        for record in self.store.list_jobs():
            if record.state == "queued":
                self._queue.put(record.id)

    def stop(self) -> None:
        self._stop.set()
        for _ in self._threads:
            self._queue.put("")  # wake workers
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()
        self._stop.clear()

    def submit(self, job_id: str) -> None:
        self._queue.put(job_id)

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                job_id = self._queue.get(timeout=0.2)
            except queue.Empty:
                continue
            if not job_id:
                continue
            try:
                self.process(job_id)
            except Exception:
                pass  # failure already recorded on the job

    def process(self, job_id: str) -> JobRecord:
        record = self.store.transition(job_id, "running")
        try:
            reader = WindowedReader(self.store.input_path(job_id))
            merged, records, rejected = analyze_image(
                self.session(),
                reader,
                record.params,
                workers=self.config.workers,
                morphometry=self.config.morphometry,
            )
            kept_ids = {r.object_id for r in records}
            merged.detections = [
                d for d in merged.detections if d.object_id in kept_ids
            ]
            self.store.save_results(job_id, merged, records)
            return self.store.transition(
                job_id,
                "done",
                counts=merged.class_counts(),
                duplicates_removed=merged.duplicates_removed,
                border_excluded=merged.border_excluded,
                rejected_measurements=len(rejected),
            )
        except Exception as exc:
            return self.store.transition(job_id, "failed", error=str(exc))

    def wait_for(self, job_id: str, timeout: float = 60.0) -> JobRecord:
        deadline = time.time() + timeout
        while time.time() < deadline:
            record = self.store.get(job_id)
            if record.state in ("done", "failed"):
                return record
            time.sleep(0.02)
        raise TimeoutError(f"job {job_id} did not finish within {timeout}s")
