from .app import create_app
from .exports import export_csv, export_masks_zip, overlay_png_bytes, render_overlay
from .jobs import JobError, JobParams, JobRecord, JobRunner, JobStore, analyze_image

__all__ = [
    "create_app",
    "export_csv",
    "export_masks_zip",
    "overlay_png_bytes",
    "render_overlay",
    "JobError",
    "JobParams",
    "JobRecord",
    "JobRunner",
    "JobStore",
    "analyze_image",
]
