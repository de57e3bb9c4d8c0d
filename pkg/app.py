# app.py

from fastapi import FastAPI, HTTPException

from src.api.docs.request import DescribeRequest, MetricsRequest, RegisterRequest
from src.api.docs.response import DescribeResponse, HealthResponse, MetricsResponse, RegisterResponse
from src.core.service import checkpoint_path, describe_points, get_pipeline, pose_metrics, register_clouds
from src.exceptions import CheckpointError, GediError


app = FastAPI(
    title="GeDi Registration API",
    description="Rotation-invariant local descriptors and RANSAC point cloud registration.",
    version="1.0.0",
)


def _unprocessable(exc: Exception) -> HTTPException:
    code = getattr(exc, "code", "invalid_input")
    return HTTPException(status_code=422, detail={"error": code, "message": str(exc)})


@app.get("/health", response_model=HealthResponse, tags=["service"], summary="Liveness and model status")
def health():
    return HealthResponse(model_loaded=checkpoint_path() is not None and get_pipeline().model is not None,
                          checkpoint=checkpoint_path())


@app.post(
    "/register",
    response_model=RegisterResponse,
    tags=["registration"],
    summary="Estimate the pose of a source cloud in a target cloud's frame",
)
def register(payload: RegisterRequest):
    """
    - Matches the supplied descriptors by mutual nearest neighbour.
    - Runs RANSAC over the matched keypoint coordinates.
    - Returns the 4x4 pose, the inliers and the iteration count.
    """
    try:
        return register_clouds(payload)
    except (GediError, ValueError) as exc:
        raise _unprocessable(exc)
    except OSError as exc:
        raise HTTPException(status_code=500, detail=f"Registration failed: {exc}")


@app.post(
    "/describe",
    response_model=DescribeResponse,
    tags=["descriptors"],
    summary="Compute descriptors for sampled points of a cloud",
)
def describe(payload: DescribeRequest):
    """
    - Samples keypoints with the given seed.
    - Describes them with the checkpoint named by GEDI_CHECKPOINT.
    """
    if checkpoint_path() is None:
        raise HTTPException(status_code=503, detail="No checkpoint configured (set GEDI_CHECKPOINT)")
    try:
        return describe_points(payload)
    except CheckpointError as exc:
        raise HTTPException(status_code=500, detail=f"Checkpoint could not be loaded: {exc}")
    except (GediError, ValueError) as exc:
        raise _unprocessable(exc)
    except OSError as exc:
        raise HTTPException(status_code=500, detail=f"Checkpoint could not be read: {exc}")


@app.post(
    "/metrics",
    response_model=MetricsResponse,
    tags=["evaluation"],
    summary="Relative translation and rotation error of a pose estimate",
)
def metrics(payload: MetricsRequest):
    try:
        return pose_metrics(payload)
    except (GediError, ValueError) as exc:
        raise _unprocessable(exc)
