from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
import logging
from dotenv import load_dotenv
from contextlib import asynccontextmanager

# Load environment variables
load_dotenv()

from models.config import configure_logging, get_settings
from models.errors import (
    CapabilityError,
    InfeasibleDeadlineError,
    InvalidInputError,
    VerificationError,
)
from routes import bench, verify

configure_logging()
logger = logging.getLogger(__name__)

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager"""
    settings = get_settings()
    logger.info(f"Starting Online Verification Service (seed {settings.seed}, "
                f"{settings.max_workers} background workers)")
    yield
    logger.info("Shutting down Online Verification Service...")


app = FastAPI(
    title="Online Neural Network Verification",
    description="Step-by-step verification of ReLU networks under input drift and weight updates",
    version=VERSION,
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=get_settings().cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(verify.router, prefix="/api")
app.include_router(verify.network_router, prefix="/api")
app.include_router(bench.router, prefix="/api")


def error_status(exc: Exception) -> int:
    """HTTP status for an engine error"""
    if isinstance(exc, InvalidInputError):
        return 400
    if isinstance(exc, (CapabilityError, InfeasibleDeadlineError)):
        return 422
    if isinstance(exc, VerificationError):
        return 409
    return 500


@app.exception_handler(VerificationError)
async def verification_exception_handler(request: Request, exc: VerificationError):
    logger.error(f"{type(exc).__name__} on {request.url.path}: {exc}")
    return JSONResponse(
        status_code=error_status(exc),
        content={"detail": str(exc), "error": type(exc).__name__}
    )


# Global exception handler
@app.exception_handler(Exception)
async def global_exception_handler(request, exc):
    """Global exception handler"""
    logger.error(f"Unhandled exception: {exc}")
    return JSONResponse(
        status_code=500,
        content={"detail": "Internal server error"}
    )


# Health check endpoint
@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "service": "Online Verification Service",
        "version": VERSION
    }


@app.get("/api/info")
async def api_info():
    """Get API information"""
    return {
        "name": "Online Verification API",
        "version": VERSION,
        "endpoints": {
            "verification": "/api/verify",
            "benchmarks": "/api/bench",
            "networks": "/api/network"
        },
        "accelerators": ["bmi", "bmw", "lb", "rsr", "inn", "ic"],
        "scenarios": ["domain_shift", "network_updates", "fine_tuning", "dimming"]
    }


if __name__ == "__main__":
    import uvicorn
    settings = get_settings()
    uvicorn.run(
        "app:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug,
        log_level=settings.log_level.lower()
    )
