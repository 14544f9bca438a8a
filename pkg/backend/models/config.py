import logging
import os
from typing import List

from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Settings(BaseModel):
    """Process-wide settings read from the environment (.env supported)"""

    log_level: str = "INFO"
    seed: int = 0
    coverage_samples: int = Field(2000, ge=1)
    max_workers: int = Field(4, ge=1)
    host: str = "0.0.0.0"
    port: int = 8000
    cors_origins: List[str] = ["http://localhost:3000", "http://localhost:5173"]
    debug: bool = False

    @classmethod
    def from_env(cls) -> "Settings":
        cors = os.getenv("CORS_ORIGINS")
        return cls(
            log_level=os.getenv("ONLINE_VERIFY_LOG_LEVEL", "INFO").upper(),
            seed=int(os.getenv("ONLINE_VERIFY_SEED", 0)),
            coverage_samples=int(os.getenv("ONLINE_VERIFY_COVERAGE_SAMPLES", 2000)),
            max_workers=int(os.getenv("ONLINE_VERIFY_MAX_WORKERS", 4)),
            host=os.getenv("HOST", "0.0.0.0"),
            port=int(os.getenv("PORT", 8000)),
            cors_origins=cors.split(",") if cors else cls.model_fields["cors_origins"].default,
            debug=os.getenv("DEBUG") == "True",
        )


def configure_logging(level: str = None):
    """Configure root logging the same way for every entry point"""
    logging.basicConfig(
        level=getattr(logging, (level or get_settings().log_level).upper(), logging.INFO),
        format=LOG_FORMAT
    )


# Global settings instance
_settings = None

def get_settings() -> Settings:
    """Get singleton settings instance"""
    global _settings
    if _settings is None:
        _settings = Settings.from_env()
    return _settings


def reset_settings():
    """Drop the cached settings so the next call re-reads the environment"""
    global _settings
    _settings = None
