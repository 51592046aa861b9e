import io
import json
import zipfile

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from fiberscope.config import ServiceConfig
from fiberscope.service import (
    JobError,
    JobParams,
    JobRunner,
    JobStore,
    create_app,
)
from fiberscope.synthetic import bar_polygon, blank_canvas, draw_polygon


def scene_png(width=640, height=640, bars=((200, 200, 150, 14, 0.0), (420, 420, 80, 40, 90.0))):
    canvas = blank_canvas(width, height)
    for cx, cy, length, w, angle in bars:
        draw_polygon(canvas, bar_polygon(cx, cy, length, w, angle))
    buf = io.BytesIO()
    Image.fromarray(canvas).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture()
def service(tmp_path):
    config = ServiceConfig(data_root=tmp_path / "data", model_path="stub", workers=2)
    app = create_app(config)
    with TestClient(app) as client:
        yield client, app


def wait_done(client, job_id, timeout=30.0):
    import time

    deadline = time.time() + timeout
    while time.time() < deadline:
        r = client.get(f"/api/jobs/{job_id}")
        assert r.status_code == 200
        body = r.json()
        if body["state"] in ("done", "failed"):
            return body
        time.sleep(0.05)
    raise TimeoutError(job_id)


class TestSubmit:
    def test_valid_upload_reaches_done(self, service):
        client, _ = service
        r = client.post(
            "/api/jobs", files={"file": ("scene.png", scene_png(), "image/png")}
        )
        assert r.status_code == 200
        job_id = r.json()["id"]
        body = wait_done(client, job_id)
        assert body["state"] == "done"
        assert sum(body["counts"].values()) == 2
        assert {d["class"] for d in body["detections"]} == {"fiber", "vessel"}

    def test_zero_byte_upload_rejected(self, service):
        client, app = service
        r = client.post("/api/jobs", files={"file": ("x.png", b"", "image/png")})
        assert r.status_code == 400
        assert r.json()["code"] == "empty_upload"
        assert app.state.store.list_jobs() == []

    def test_garbage_upload_rejected(self, service):
        client, _ = service
        r = client.post(
            "/api/jobs", files={"file": ("x.png", b"not an image", "image/png")}
        )
        assert r.status_code == 400
        assert r.json()["code"] == "undecodable_image"

    def test_tiny_image_warns_and_completes(self, service):
        client, _ = service
        buf = io.BytesIO()
        Image.fromarray(np.full((1, 1, 3), 255, dtype=np.uint8)).save(buf, "PNG")
        r = client.post("/api/jobs", files={"file": ("px.png", buf.getvalue(), "image/png")})
        job_id = r.json()["id"]
        body = wait_done(client, job_id)
        assert body["state"] == "done"
        assert body["counts"] == {}
        assert any("smaller than tile" in w for w in body["warnings"])

    def test_invalid_params_rejected(self, service):
        client, _ = service
        r = client.post(
            "/api/jobs",
            files={"file": ("s.png", scene_png(), "image/png")},
            data={"conf": "1.5"},
        )
        assert r.status_code == 400
        assert r.json()["code"] == "invalid_params"

    def test_grayscale_accepted_with_warning(self, service):
        client, _ = service
        arr = np.asarray(Image.open(io.BytesIO(scene_png())).convert("L"))
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, "PNG")
        r = client.post("/api/jobs", files={"file": ("g.png", buf.getvalue(), "image/png")})
        body = wait_done(client, r.json()["id"])
        assert body["state"] == "done"
        assert any("expanded to RGB" in w for w in body["warnings"])
        assert sum(body["counts"].values()) == 2


class TestResults:
    def test_unknown_id_not_found(self, service):
        client, _ = service
        r = client.get("/api/jobs/doesnotexist")
        assert r.status_code == 404
        assert r.json()["code"] == "not_found"

    def test_csv_rows_match_detection_count(self, service):
        client, _ = service
        r = client.post("/api/jobs", files={"file": ("s.png", scene_png(), "image/png")})
        job_id = r.json()["id"]
        body = wait_done(client, job_id)
        csv = client.get(f"/api/jobs/{job_id}/results.csv")
        assert csv.status_code == 200
        lines = csv.text.strip().split("\n")
        assert lines[0].startswith("object_id,class,length_um")
        assert len(lines) - 1 == len(body["detections"])

    def test_csv_before_done_conflicts(self, service, tmp_path):
        client, app = service
        store: JobStore = app.state.store
        record = store.create(scene_png(), "s.png", JobParams())
        # job created but never submitted to the runner: stays queued
        r = client.get(f"/api/jobs/{record.id}/results.csv")
        assert r.status_code == 409
        assert r.json()["code"] == "not_done"

    def test_csv_reexport_byte_identical(self, service):
        client, _ = service
        r = client.post("/api/jobs", files={"file": ("s.png", scene_png(), "image/png")})
        job_id = r.json()["id"]
        wait_done(client, job_id)
        a = client.get(f"/api/jobs/{job_id}/results.csv").content
        b = client.get(f"/api/jobs/{job_id}/results.csv").content
        assert a == b

    def test_masks_zip_preserves_overlap(self, service):
        client, _ = service
        # two crossing bars share pixels; both full masks must contain them
        png = scene_png(
            bars=((320, 320, 200, 16, 0.0), (320, 320, 200, 16, 90.0))
        )
        r = client.post(
            "/api/jobs",
            files={"file": ("cross.png", png, "image/png")},
            data={"dedup": "0.9"},  # crossing bars overlap well below this
        )
        job_id = r.json()["id"]
        body = wait_done(client, job_id)
        assert body["state"] == "done"
        z = client.get(f"/api/jobs/{job_id}/masks.zip")
        archive = zipfile.ZipFile(io.BytesIO(z.content))
        names = [n for n in archive.namelist() if n.endswith(".png")]
        manifest = json.loads(archive.read("manifest.json"))
        assert manifest["count"] == len(names)
        if len(names) >= 2:
            masks = [
                np.asarray(Image.open(io.BytesIO(archive.read(n)))) > 0
                for n in names[:2]
            ]
            assert (masks[0] & masks[1]).sum() > 0

    def test_empty_job_masks_zip_has_manifest(self, service):
        client, _ = service
        buf = io.BytesIO()
        Image.fromarray(np.full((64, 64, 3), 255, dtype=np.uint8)).save(buf, "PNG")
        r = client.post("/api/jobs", files={"file": ("blank.png", buf.getvalue(), "image/png")})
        job_id = r.json()["id"]
        wait_done(client, job_id)
        z = client.get(f"/api/jobs/{job_id}/masks.zip")
        archive = zipfile.ZipFile(io.BytesIO(z.content))
        assert archive.namelist() == ["manifest.json"]
        assert json.loads(archive.read("manifest.json"))["count"] == 0

    def test_mask_file_round_trips(self, service):
        client, app = service
        r = client.post("/api/jobs", files={"file": ("s.png", scene_png(), "image/png")})
        job_id = r.json()["id"]
        wait_done(client, job_id)
        detections, _ = app.state.store.load_results(job_id)
        record = app.state.store.get(job_id)
        z = zipfile.ZipFile(
            io.BytesIO(client.get(f"/api/jobs/{job_id}/masks.zip").content)
        )
        for det in detections:
            name = f"{det.object_id}_{det.class_name}.png"
            arr = np.asarray(Image.open(io.BytesIO(z.read(name)))) > 0
            assert np.array_equal(arr, det.full_mask(*record.image_size).bits)


class TestOverlay:
    def test_cutoff_one_returns_input(self, service):
        client, _ = service
        png = scene_png()
        r = client.post("/api/jobs", files={"file": ("s.png", png, "image/png")})
        job_id = r.json()["id"]
        wait_done(client, job_id)
        resp = client.get(f"/api/jobs/{job_id}/overlay.png?conf=1.0")
        original = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
        overlaid = np.asarray(Image.open(io.BytesIO(resp.content)).convert("RGB"))
        assert np.array_equal(original, overlaid)

    def test_cutoff_zero_draws_everything(self, service):
        client, _ = service
        png = scene_png()
        r = client.post("/api/jobs", files={"file": ("s.png", png, "image/png")})
        job_id = r.json()["id"]
        wait_done(client, job_id)
        at0 = np.asarray(
            Image.open(
                io.BytesIO(client.get(f"/api/jobs/{job_id}/overlay.png?conf=0").content)
            )
        )
        original = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
        assert not np.array_equal(at0, original)

    def test_monotone_in_cutoff(self, service):
        client, _ = service
        png = scene_png()
        r = client.post("/api/jobs", files={"file": ("s.png", png, "image/png")})
        job_id = r.json()["id"]
        wait_done(client, job_id)
        original = np.asarray(Image.open(io.BytesIO(png)).convert("RGB")).astype(int)
        changed = []
        for conf in (0.0, 0.8, 1.0):
            img = np.asarray(
                Image.open(
                    io.BytesIO(
                        client.get(
                            f"/api/jobs/{job_id}/overlay.png?conf={conf}"
                        ).content
                    )
                )
            ).astype(int)
            changed.append(int((np.abs(img - original).sum(axis=2) > 0).sum()))
        assert changed[0] >= changed[1] >= changed[2]
        assert changed[2] == 0


class TestDurability:
    def test_done_jobs_survive_restart(self, tmp_path):
        config = ServiceConfig(data_root=tmp_path / "d", model_path="stub", workers=1)
        app1 = create_app(config)
        with TestClient(app1) as client:
            r = client.post("/api/jobs", files={"file": ("s.png", scene_png(), "image/png")})
            job_id = r.json()["id"]
            wait_done(client, job_id)
            csv_before = client.get(f"/api/jobs/{job_id}/results.csv").content
            masks_before = client.get(f"/api/jobs/{job_id}/masks.zip").content

        app2 = create_app(config)  # same data root, fresh process state
        with TestClient(app2) as client:
            body = client.get(f"/api/jobs/{job_id}").json()
            assert body["state"] == "done"
            assert client.get(f"/api/jobs/{job_id}/results.csv").content == csv_before
            assert client.get(f"/api/jobs/{job_id}/masks.zip").content == masks_before

    def test_queued_jobs_resume_on_restart(self, tmp_path):
        config = ServiceConfig(data_root=tmp_path / "d", model_path="stub", workers=1)
        store = JobStore(config.data_root)
        record = store.create(scene_png(), "s.png", JobParams())
        # simulate a crash before processing: job sits queued on disk
        app = create_app(config)
        with TestClient(app) as client:
            body = wait_done(client, record.id)
            assert body["state"] == "done"


class TestJobStore:
    def test_state_transitions_enforced(self, tmp_path):
        store = JobStore(tmp_path)
        record = store.create(scene_png(), "s.png", JobParams())
        store.transition(record.id, "running")
        store.transition(record.id, "done")
        with pytest.raises(JobError):
            store.transition(record.id, "running")

    def test_listing_sorted_by_creation(self, tmp_path):
        store = JobStore(tmp_path)
        ids = [store.create(scene_png(), f"{k}.png", JobParams()).id for k in range(3)]
        listed = [r.id for r in store.list_jobs()]
        assert set(listed) == set(ids)

    def test_params_snapshot_immutable(self, tmp_path):
        store = JobStore(tmp_path)
        record = store.create(scene_png(), "s.png", JobParams(conf_threshold=0.4))
        loaded = store.get(record.id)
        assert loaded.params.conf_threshold == 0.4
        with pytest.raises(Exception):
            loaded.params.conf_threshold = 0.9
