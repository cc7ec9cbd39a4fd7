"""
BCGN Configuration Module
"""
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    # Parallel latent evaluation (1 = single-threaded)
    threads: int = 1

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"

    # Output
    runs_dir: str = "./runs"
    checkpoint_every: int = 500
    log_every: int = 50

    # Gradient check tolerances
    gradcheck_tolerance_f32: float = 1e-3
    gradcheck_tolerance_f64: float = 1e-6

    model_config = SettingsConfigDict(
        env_prefix="BCGN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()
