from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",  # Ignore extra environment variables
    )

    # Environment
    ENVIRONMENT: str = "development"

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "console"
    ENABLE_PERFORMANCE_LOGGING: bool = False

    # Sentry Configuration (Error Logging)
    SENTRY_DSN: Optional[str] = None

    # Pipeline runtime
    KEYFRAME_BUDGET_MS: float = 2000.0
    PIPELINE_WORKERS: int = 2

    @property
    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.ENVIRONMENT.lower() == "production"

    @property
    def log_format(self) -> str:
        """JSON logs are forced in production; otherwise LOG_FORMAT decides."""
        if self.is_production:
            return "json"
        return self.LOG_FORMAT.lower()


@lru_cache
def get_settings() -> Settings:
    """
    Get cached Settings instance.

    Uses @lru_cache so the environment and the .env file are read once per
    process. Tests that change the environment call
    `get_settings.cache_clear()`.
    """
    return Settings()
