from contextlib import asynccontextmanager
from fastapi import FastAPI, Request, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
import logging

from app.api.endpoints import scenarios
from app.core.config import settings
from app.core.errors import (
    ConfigValidationError,
    ConflictError,
    NoKeyError,
    NotFoundError,
    RefusedError,
    RelayNetError,
)

# 配置日志
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(f"{settings.PROJECT_NAME} startup complete")
    yield
    logger.info(f"{settings.PROJECT_NAME} shutdown complete")


app = FastAPI(title=settings.PROJECT_NAME, lifespan=lifespan)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(scenarios.router, prefix="/api/scenarios", tags=["scenarios"])

ERROR_STATUS = (
    (ConfigValidationError, status.HTTP_400_BAD_REQUEST),
    (NoKeyError, status.HTTP_403_FORBIDDEN),
    (RefusedError, status.HTTP_403_FORBIDDEN),
    (NotFoundError, status.HTTP_404_NOT_FOUND),
    (ConflictError, status.HTTP_409_CONFLICT),
)


@app.exception_handler(RelayNetError)
async def relaynet_error_handler(request: Request, exc: RelayNetError):
    code = next((c for cls, c in ERROR_STATUS if isinstance(exc, cls)), status.HTTP_422_UNPROCESSABLE_ENTITY)
    body = {"detail": exc.detail, "failure_class": exc.failure_class}
    if isinstance(exc, ConfigValidationError):
        body["violations"] = exc.violations
    return JSONResponse(status_code=code, content=body)


@app.get("/")
async def root():
    return {"message": f"Welcome to {settings.PROJECT_NAME} API"}
