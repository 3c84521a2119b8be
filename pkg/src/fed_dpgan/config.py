"""Runtime settings for fed-dpgan."""

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    log_level: str = "INFO"
    output_root: str = "runs"
    parallel_clients: bool = False
    max_workers: int = 4
    # Asserts the critic weight-clip invariant after every critic step.
    debug: bool = False

    model_config = SettingsConfigDict(
        env_prefix="FED_DPGAN_",
        env_file=".env.local",
        env_file_encoding="utf-8",
        extra="ignore",
    )


@lru_cache
def get_settings() -> Settings:
    return Settings()
