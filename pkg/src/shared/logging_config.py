"""
Structured logging setup shared by the training and evaluation entry points.
"""
import logging
import sys
from typing import Optional

import structlog
from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict


load_dotenv()


class RuntimeSettings(BaseSettings):
    """Process-level settings read from SEMISEG_* environment variables."""
    model_config = SettingsConfigDict(env_prefix="SEMISEG_", extra="ignore")

    log_level: str = "INFO"
    log_format: str = "console"  # console | json
    torch_threads: int = 0  # 0 keeps torch's default


def configure_logging(settings: Optional[RuntimeSettings] = None) -> RuntimeSettings:
    """Configure structlog once for the whole process."""
    settings = settings or RuntimeSettings()
    level = logging.getLevelName(settings.log_level.upper())
    if not isinstance(level, int):
        level = logging.INFO

    renderer = (
        structlog.processors.JSONRenderer()
        if settings.log_format == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    return settings
