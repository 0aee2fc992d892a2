from __future__ import annotations
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .. import __version__
from ..core import Orchestrator
from ..core.schemas import AttributionMethod, AttributionTarget, MetricsReport, PhantomParams
from ..data import generate_phantom


app = FastAPI(
    title="knee_xai API",
    version=__version__,
    description="""
    **knee_xai API** - knee-MRI classification, reconstruction and attribution benchmark.

    ## Features

    - Synthetic knee phantoms with ground-truth tear masks
    - Checkpoint evaluation (AUC / accuracy, PSNR / SSIM)
    - Saliency, SmoothGrad, guided backpropagation, Grad-CAM and guided Grad-CAM maps
    - Results table across training runs

    Training and grid search are long-running and stay on the command line
    (`python -m knee_xai train|gridsearch`).
    """,
    contact={
        "name": "knee_xai maintainers",
    },
)


_orchestrator: Optional[Orchestrator] = None


def get_orchestrator() -> Orchestrator:
    global _orchestrator
    if _orchestrator is None:
        _orchestrator = Orchestrator()
    return _orchestrator


class HealthResponse(BaseModel):
    """Health check response model."""
    status: str = Field(..., description="Service status", examples=["ok"])
    version: str = Field(..., description="Package version")


class PhantomRequest(BaseModel):
    params: PhantomParams = Field(default_factory=PhantomParams, description="Generator settings")
    index: int = Field(default=0, ge=0, description="Patient index within the phantom family")


class PhantomResponse(BaseModel):
    patient_id: str
    plane: str
    shape: List[int]
    label: Optional[int]
    lesion_pixels: Optional[int]


class EvaluateRequest(BaseModel):
    checkpoint: str = Field(..., min_length=1, description="Checkpoint file")
    data: Optional[str] = Field(default=None, description="Manifest, phantom directory or volume file; "
                                                          "default is the checkpoint's validation split")


class AttributeRequest(BaseModel):
    checkpoint: str = Field(..., min_length=1)
    volume: str = Field(..., min_length=1, description="NPY volume file")
    method: AttributionMethod = Field(default=AttributionMethod.GRADCAM, examples=["gradcam", "saliency"])
    out_dir: str = Field(..., min_length=1, description="Directory for overlays, maps and index.json")
    target: Optional[AttributionTarget] = Field(default=None, description="Defaults by model family")
    seed: int = Field(default=0)


class AttributeResponse(BaseModel):
    patient_id: str
    method: str
    target: str
    tap_layer: Optional[str]
    shape: List[int]
    value_range: List[float]
    slices: List[Dict[str, Any]]
    localization_energy: Optional[float] = Field(default=None, description="Map mass inside the tear mask")
    mask_area_fraction: Optional[float] = Field(default=None, description="Mask area over its lesion slices")


class ReportRequest(BaseModel):
    runs_dir: str = Field(..., min_length=1, description="Directory searched for record.json files")
    out_dir: str = Field(..., min_length=1)


class ReportResponse(BaseModel):
    runs: int
    table: str = Field(..., description="Markdown results table")
    files: Dict[str, str]


@app.get("/health", response_model=HealthResponse, summary="Health Check")
async def health() -> HealthResponse:
    """Check if the API service is running."""
    return HealthResponse(status="ok", version=__version__)


@app.post("/phantom", response_model=PhantomResponse, summary="Generate One Phantom")
async def phantom(request: PhantomRequest) -> PhantomResponse:
    """Generate phantom ``index`` and return its summary (the same index always yields the same volume)."""
    try:
        return PhantomResponse(**generate_phantom(request.params, request.index).summary())
    except ValueError as e:
        raise HTTPException(status_code=400, detail=f"Invalid phantom parameters: {str(e)}")
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Phantom generation failed: {str(e)}")


@app.post(
    "/evaluate",
    response_model=MetricsReport,
    summary="Evaluate a Checkpoint",
    responses={400: {"description": "Missing file, or checkpoint and data do not fit"},
               500: {"description": "Evaluation failed"}},
)
async def evaluate(request: EvaluateRequest) -> MetricsReport:
    try:
        return MetricsReport(**get_orchestrator().evaluate(request.checkpoint, request.data))
    except (ValueError, FileNotFoundError) as e:
        raise HTTPException(status_code=400, detail=f"Invalid evaluation request: {str(e)}")
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Evaluation failed: {str(e)}")


@app.post("/attribute", response_model=AttributeResponse, summary="Attribution Maps for One Volume")
async def attribute(request: AttributeRequest) -> AttributeResponse:
    """Write one overlay and one raw map per slice; returns the index document."""
    try:
        index = get_orchestrator().attribute(request.checkpoint, request.volume, request.method,
                                             request.out_dir, request.target, request.seed)
        return AttributeResponse(**index)
    except (ValueError, FileNotFoundError) as e:
        raise HTTPException(status_code=400, detail=f"Invalid attribution request: {str(e)}")
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Attribution failed: {str(e)}")


@app.post("/report", response_model=ReportResponse, summary="Results Table for a Runs Directory")
async def report(request: ReportRequest) -> ReportResponse:
    try:
        return ReportResponse(**get_orchestrator().report(request.runs_dir, request.out_dir))
    except (ValueError, FileNotFoundError) as e:
        raise HTTPException(status_code=400, detail=f"Invalid report request: {str(e)}")
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Report failed: {str(e)}")
