from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
from pathlib import Path

# Get the project root directory (where .env should be)
PROJECT_ROOT = Path(__file__).parent.parent


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="ACTIVECQ_",
        env_file=PROJECT_ROOT / ".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "activecq"
    app_version: str = "1.0.0"

    # Output (ACTIVECQ_OUT)
    out: str = "results"

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"

    # Numerics
    base_jitter: float = 1e-8
    max_jitter_steps: int = 6
    ig_jitter: float = 1e-8

    # Ground truth
    oracle_mc_n: int = 100_000


@lru_cache()
def get_settings() -> Settings:
    return Settings()
