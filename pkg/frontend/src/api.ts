// Thin fetch wrappers over the analysis service API.

import type { JobSummary } from "./types.js";

export class ApiError extends Error {
  code: string;
  status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let code = "error";
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    code = body.code ?? code;
    message = body.message ?? message;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, code, message);
}

export async function submitJob(file: File): Promise<string> {
  const form = new FormData();
  form.append("file", file);
  const res = await fetch("/api/jobs", { method: "POST", body: form });
  if (!res.ok) throw await parseError(res);
  const body = await res.json();
  return body.id;
}

export async function listJobs(): Promise<JobSummary[]> {
  const res = await fetch("/api/jobs");
  if (!res.ok) throw await parseError(res);
  return (await res.json()).jobs;
}

export async function getJob(id: string): Promise<JobSummary> {
  const res = await fetch(`/api/jobs/${id}`);
  if (!res.ok) throw await parseError(res);
  return await res.json();
}

export async function fetchCsv(id: string): Promise<string> {
  const res = await fetch(`/api/jobs/${id}/results.csv`);
  if (!res.ok) throw await parseError(res);
  return await res.text();
}

export function overlayUrl(id: string, maxPx = 2048): string {
  // conf=1.0 returns the unmodified input; vectors are drawn client-side
  return `/api/jobs/${id}/overlay.png?conf=1.0&max_px=${maxPx}`;
}

export function masksUrl(id: string): string {
  return `/api/jobs/${id}/masks.zip`;
}
