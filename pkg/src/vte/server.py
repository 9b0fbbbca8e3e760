"""HTTP front for the annotation service.

Routes: GET /api/batch, POST /api/submit, GET /api/export, plus static
image files and (optionally) the built annotation UI. Batch payloads never
include the trusted position or any gold label.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotation import Batch, Submission
from .corpus import Label
from .errors import (
    AuthorizationError,
    ConflictError,
    InsufficientWorkError,
    IntegrityError,
    NotFoundError,
)
from .service import AnnotationService


class SubmissionIn(BaseModel):
    pair_id: str
    label: Optional[str] = None
    highlighted: list[int] = []
    explanation: str = ""

    def to_submission(self, worker_id: str) -> Submission:
        label = None
        if self.label is not None:
            try:
                label = Label.from_str(self.label)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
        return Submission(
            pair_id=self.pair_id,
            worker_id=worker_id,
            label=label,
            highlighted=tuple(self.highlighted),
            explanation=self.explanation,
        )


class SubmitRequest(BaseModel):
    worker_id: str
    batch_id: str
    submissions: list[SubmissionIn]


def batch_payload(batch: Batch) -> dict:
    """Public view of a batch; the trusted item is indistinguishable."""
    return {
        "status": "ok",
        "batch_id": batch.batch_id,
        "items": [
            {
                "pair_id": inst.pair_id,
                "image_url": f"/images/{inst.image_id}",
                "hypothesis": list(inst.hypothesis),
            }
            for inst in batch.items
        ],
    }


def create_app(
    service: AnnotationService,
    images_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="annotation service")

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/batch")
    def get_batch(worker_id: str = Query(...)):
        try:
            batch = service.get_batch(worker_id)
        except AuthorizationError as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        except InsufficientWorkError:
            return {"status": "no_work"}
        return batch_payload(batch)

    @app.post("/api/submit")
    def submit(request: SubmitRequest):
        submissions = [s.to_submission(request.worker_id) for s in request.submissions]
        try:
            result = service.submit_batch(request.worker_id, request.batch_id, submissions)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except IntegrityError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if result.accepted:
            return {"status": "accepted"}
        if result.item_failures:
            return JSONResponse(
                status_code=422,
                content={
                    "detail": result.reason,
                    "item_failures": {
                        str(index): [f.value for f in failures]
                        for index, failures in sorted(result.item_failures.items())
                    },
                },
            )
        return JSONResponse(status_code=403, content={"detail": result.reason})

    @app.get("/api/export")
    def export(split: Optional[str] = None):
        return PlainTextResponse(service.export_lines(split))

    if images_dir is not None:
        app.mount("/images", StaticFiles(directory=str(images_dir)), name="images")
    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
