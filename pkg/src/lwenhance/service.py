"""HTTP gateway: enhancement, cluster coefficient tuning, dataset build jobs.

All state lives in one working directory:

    workdir/images/        source photographs (PNG/JPEG)
    workdir/clusters.json  brightness-cluster model over those images
    workdir/coeffs/N.json  retouch coefficients for cluster N
    workdir/<out>/         dataset build output (inputs/, targets/, manifest)

Responses are deterministic given the request bytes and the workdir state;
every file write goes through a temp-file rename.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import __version__, datasetgen, imgcore, nn
from . import enhance as enhance_mod
from . import train as train_mod
from .errors import ConfigurationError, InvalidInputError
from .retouch import RetouchCoefficients, retouch

DEFAULT_MAX_PIXELS = 8_000_000
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_STATE_ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


@dataclass
class JobRecord:
    id: str
    kind: str
    state: str = "queued"
    progress: float = 0.0
    message: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "state": self.state,
                "progress": self.progress, "message": self.message}


@dataclass
class ClusterInfo:
    id: int
    size: int
    representative: str | None  # file name under workdir/images


class ClusterSet:
    def __init__(self, model: datasetgen.ClusterModel, files: list[str],
                 infos: list[ClusterInfo]):
        self.model = model
        self.files = files
        self.infos = {info.id: info for info in infos}


class ServiceState:
    """Weights, workdir, lazily-built cluster view, and the job queue."""

    def __init__(self, weights: nn.WeightStore, workdir,
                 max_pixels: int = DEFAULT_MAX_PIXELS):
        self.weights = weights
        self.workdir = Path(workdir)
        self.max_pixels = max_pixels
        self.lock = threading.Lock()
        self.jobs: dict[str, JobRecord] = {}
        self._job_seq = 0
        self.queue: queue.Queue = queue.Queue()
        self.clusters: ClusterSet | None = None
        self._clusters_built = False
        worker = threading.Thread(target=self._work, daemon=True,
                                  name="lwe-jobs")
        worker.start()

    # -- clusters -----------------------------------------------------------

    def images_dir(self) -> Path:
        return self.workdir / "images"

    def ensure_clusters(self) -> ClusterSet | None:
        with self.lock:
            if self._clusters_built:
                return self.clusters
            self.clusters = self._build_clusters()
            self._clusters_built = True
            return self.clusters

    def _build_clusters(self) -> ClusterSet | None:
        images = self.images_dir()
        if not images.is_dir():
            return None
        files = sorted(p.name for p in images.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            return None

        hists = [datasetgen.histogram(imgcore.ensure_rgb(imgcore.read_image(images / f)))
                 for f in files]
        model = None
        state_path = self.workdir / "clusters.json"
        if state_path.exists():
            stored = json.loads(state_path.read_text(encoding="utf-8"))
            if stored.get("files") == files:
                model = datasetgen.ClusterModel.from_dict(stored)
        if model is None:
            model = datasetgen.cluster(hists, k=min(4, len(files)), seed=0)
            payload = model.to_dict()
            payload["files"] = files
            _atomic_write_text(state_path,
                               json.dumps(payload, indent=2, sort_keys=True) + "\n")

        infos = []
        for cid in range(model.k):
            members = [i for i, a in enumerate(model.assignments) if a == cid]
            rep = None
            if members:
                d = [float(((hists[i] - model.centroids[cid]) ** 2).sum())
                     for i in members]
                rep = files[members[int(np.argmin(d))]]
            infos.append(ClusterInfo(cid, len(members), rep))
        return ClusterSet(model, files, infos)

    def cluster_info(self, cid: int) -> ClusterInfo:
        cs = self.ensure_clusters()
        if cs is None or cid not in cs.infos:
            raise HTTPException(404, f"unknown cluster {cid}")
        return cs.infos[cid]

    # -- coefficients -------------------------------------------------------

    def coeffs_path(self, cid: int) -> Path:
        return self.workdir / "coeffs" / f"{cid}.json"

    def load_coeffs(self, cid: int) -> RetouchCoefficients:
        path = self.coeffs_path(cid)
        if path.exists():
            return RetouchCoefficients.from_json(path.read_text(encoding="utf-8"))
        return RetouchCoefficients()

    def save_coeffs(self, cid: int, coeffs: RetouchCoefficients) -> None:
        path = self.coeffs_path(cid)
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write_text(path, coeffs.to_json())

    # -- jobs ---------------------------------------------------------------

    def submit(self, kind: str, fn) -> dict:
        with self.lock:
            self._job_seq += 1
            job = JobRecord(id=f"job-{self._job_seq:06d}", kind=kind)
            self.jobs[job.id] = job
        self.queue.put((job, fn))
        return job.to_dict()

    def job_snapshot(self, job_id: str) -> dict:
        with self.lock:
            job = self.jobs.get(job_id)
            if job is None:
                raise HTTPException(404, f"unknown job {job_id}")
            return job.to_dict()

    def _update(self, job: JobRecord, state: str | None = None,
                progress: float | None = None, message: str | None = None) -> None:
        with self.lock:
            if state is not None and _STATE_ORDER[state] >= _STATE_ORDER[job.state]:
                job.state = state
            if progress is not None:
                job.progress = max(job.progress, min(1.0, progress))
            if message is not None:
                job.message = message

    def _work(self) -> None:
        while True:
            job, fn = self.queue.get()
            self._update(job, state="running", message="started")
            try:
                fn(job)
                self._update(job, state="done", progress=1.0, message="completed")
            except Exception as exc:  # job isolation: record, keep serving
                self._update(job, state="failed", message=str(exc))

    def run_build(self, job: JobRecord, ranges: datasetgen.DegradeRanges,
                  out_name: str) -> None:
        cs = self.ensure_clusters()
        if cs is None:
            raise ConfigurationError("no images under workdir/images")
        images = [imgcore.ensure_rgb(imgcore.read_image(self.images_dir() / f))
                  for f in cs.files]
        coeffs = {cid: self.load_coeffs(cid) for cid in cs.infos}
        self._update(job, progress=0.2,
                     message=f"rendering {len(images)} pairs")
        datasetgen.build_pairs(images, cs.model, coeffs, ranges,
                               self.workdir / out_name)


# ---------------------------------------------------------------------------
# Request parsing helpers
# ---------------------------------------------------------------------------


def _check_gamma(name: str, value: float) -> float:
    if not np.isfinite(value) or not 0.0 <= value <= 1.0:
        raise HTTPException(400, f"{name} must be in [0, 1], got {value}")
    return float(value)


async def _image_from_request(request: Request) -> bytes:
    ctype = request.headers.get("content-type", "")
    if ctype.startswith("multipart/form-data"):
        form = await request.form()
        for value in form.values():
            if hasattr(value, "read"):
                return await value.read()
        raise HTTPException(400, "multipart body carries no file field")
    return await request.body()


def _float_list(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise HTTPException(400, f"{name} must be comma-separated numbers") from None


_COEFF_LIST_FIELDS = ("theta1", "gamma1", "theta2", "gamma2")
_COEFF_SCALAR_FIELDS = ("theta4", "alpha", "epsilon")
_FUSION_FIELDS = ("w_contrast", "w_saturation", "w_exposedness", "sigma_e")


def _coeffs_from_query(base: RetouchCoefficients, params) -> RetouchCoefficients:
    d = base.to_dict()
    for name in _COEFF_LIST_FIELDS:
        if name in params:
            d[name] = _float_list(params[name], name)
    for name in _COEFF_SCALAR_FIELDS:
        if name in params:
            try:
                d[name] = float(params[name])
            except ValueError:
                raise HTTPException(400, f"{name} must be a number") from None
    for name in _FUSION_FIELDS:
        if name in params:
            try:
                d["theta3"][name] = float(params[name])
            except ValueError:
                raise HTTPException(400, f"{name} must be a number") from None
    if "levels" in params:
        try:
            d["theta3"]["levels"] = int(params["levels"])
        except ValueError:
            raise HTTPException(400, "levels must be an integer") from None
    try:
        return RetouchCoefficients.from_dict(d)
    except (InvalidInputError, ConfigurationError) as exc:
        raise HTTPException(400, str(exc)) from None


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def create_app(weights: nn.WeightStore, workdir,
               max_pixels: int = DEFAULT_MAX_PIXELS,
               static_dir=None) -> FastAPI:
    state = ServiceState(weights, workdir, max_pixels)
    app = FastAPI(title="lwenhance", version=__version__)
    app.state.service = state

    @app.exception_handler(RequestValidationError)
    async def _validation_as_400(request, exc):
        return JSONResponse(status_code=400,
                            content={"detail": "malformed parameters"})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/api/enhance")
    async def api_enhance(request: Request, g1: float = 1.0, g2: float = 1.0,
                          g3: float = 1.0):
        params = enhance_mod.EnhanceParams(
            gamma1=_check_gamma("g1", g1),
            gamma2=_check_gamma("g2", g2),
            gamma3=_check_gamma("g3", g3),
        )
        data = await _image_from_request(request)
        if not data:
            raise HTTPException(400, "request carries no image bytes")
        try:
            img = imgcore.ensure_rgb(imgcore.decode_image(data))
        except Exception:
            raise HTTPException(400, "body is not a decodable PNG/JPEG") from None
        if img.shape[0] * img.shape[1] > state.max_pixels:
            raise HTTPException(
                413, f"image exceeds {state.max_pixels} pixels")
        out = enhance_mod.interactive_enhance(img, state.weights, params)
        return Response(content=imgcore.encode_png(out), media_type="image/png")

    @app.get("/api/clusters")
    def clusters():
        cs = state.ensure_clusters()
        if cs is None:
            return []
        return [
            {"id": info.id, "size": info.size,
             "representative": (f"/api/clusters/{info.id}/representative"
                                if info.representative else None)}
            for info in cs.infos.values()
        ]

    @app.get("/api/clusters/{cid}/representative")
    def representative(cid: int):
        info = state.cluster_info(cid)
        if info.representative is None:
            raise HTTPException(404, f"cluster {cid} has no members")
        img = imgcore.ensure_rgb(imgcore.read_image(state.images_dir() / info.representative))
        return Response(content=imgcore.encode_png(img), media_type="image/png")

    @app.get("/api/clusters/{cid}/preview")
    def preview(cid: int, request: Request):
        info = state.cluster_info(cid)
        if info.representative is None:
            raise HTTPException(404, f"cluster {cid} has no members")
        coeffs = _coeffs_from_query(state.load_coeffs(cid),
                                    dict(request.query_params))
        img = imgcore.ensure_rgb(imgcore.read_image(state.images_dir() / info.representative))
        try:
            out = retouch(img, coeffs)
        except InvalidInputError as exc:
            # e.g. a pyramid depth the representative cannot support
            raise HTTPException(400, str(exc)) from None
        return Response(content=imgcore.encode_png(out), media_type="image/png")

    @app.put("/api/clusters/{cid}/coefficients")
    async def put_coefficients(cid: int, request: Request):
        state.cluster_info(cid)
        body = await request.body()
        try:
            coeffs = RetouchCoefficients.from_json(body.decode("utf-8"))
        except (ConfigurationError, InvalidInputError, UnicodeDecodeError) as exc:
            raise HTTPException(400, str(exc)) from None
        state.save_coeffs(cid, coeffs)
        return {"id": cid, "coefficients": coeffs.to_dict()}

    @app.post("/api/dataset/build")
    async def dataset_build(request: Request):
        raw = await request.body()
        try:
            body = json.loads(raw) if raw else {}
        except json.JSONDecodeError:
            raise HTTPException(400, "body must be a JSON object") from None
        if not isinstance(body, dict):
            raise HTTPException(400, "body must be a JSON object")
        out_name = body.get("out", "dataset")
        if not isinstance(out_name, str) or not out_name \
                or "/" in out_name or out_name.startswith("."):
            raise HTTPException(400, "out must be a plain directory name")
        try:
            ranges = datasetgen.DegradeRanges(
                sigma_c=tuple(body.get("sigma_c", (0.0, 0.06))),
                sigma_s=tuple(body.get("sigma_s", (0.0, 0.03))),
                jpeg_quality=tuple(body.get("jpeg_q", (60, 95))),
                seed=int(body.get("seed", 0)),
            )
        except (TypeError, ValueError, InvalidInputError) as exc:
            raise HTTPException(400, f"bad degradation ranges: {exc}") from None
        return state.submit(
            "dataset-build",
            lambda job: state.run_build(job, ranges, out_name))

    @app.get("/api/jobs/{job_id}")
    def job(job_id: str):
        return state.job_snapshot(job_id)

    static = _resolve_static_dir(static_dir, Path(workdir))
    if static is not None:
        app.mount("/", StaticFiles(directory=static, html=True), name="ui")
    return app


def _resolve_static_dir(static_dir, workdir: Path) -> Path | None:
    if static_dir is not None:
        return Path(static_dir) if Path(static_dir).is_dir() else None
    for candidate in (workdir / "static", Path("frontend") / "dist"):
        if candidate.is_dir():
            return candidate
    return None


def run(port: int, weights_path=None, workdir=".",
        max_pixels: int = DEFAULT_MAX_PIXELS) -> None:
    """Blocking entry point used by the CLI `serve` subcommand."""
    import uvicorn

    ws = nn.load_weights(weights_path) if weights_path \
        else train_mod.init_full_weights(0)
    app = create_app(ws, workdir, max_pixels)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="info")
