from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from app.exceptions import InvalidArgumentError

DEFAULT_CONFIG_FILE = "spacetime.env"


class Settings(BaseSettings):
    # Run defaults (overridden by CLI flags)
    METHOD: str = "new_mixed"
    PROBLEM: str = "smooth"
    BETA: float = 0.0
    LEVELS: str = "8,16,32,64,128"
    REF_FACTOR: int = 4
    SOLVER: str = "direct"
    OUT: str = "results.csv"
    JOBS: int = 1

    # Linear solvers
    SOLVER_RTOL: float = 1e-10
    CG_RTOL: float = 1e-10
    CG_MAXITER_FACTOR: float = 10.0

    # Eigen solvers
    EIGEN_TOL: float = 1e-10
    POWER_TOL: float = 1e-8
    POWER_MAXITER: int = 5000
    POWER_SEED: int = 0
    DENSE_EIGEN_LIMIT: int = 2500

    # Quadrature: polynomial degree integrated exactly per direction
    QUAD_ORDER: int = 5

    # Studies
    FULL_INFSUP_MAX_N: int = 16
    STEINBACH_SPATIAL_ELEMENTS: int = 4
    # Final time of the zigzag degradation runs
    STEINBACH_HORIZON: float = 0.03125
    WORST_CASE_FINE_FACTOR: int = 2

    # Output
    CSV_DIGITS: int = 12
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=DEFAULT_CONFIG_FILE,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # init arguments and the key=value file only
        return (init_settings, dotenv_settings)


_config_file: str = DEFAULT_CONFIG_FILE


@lru_cache()
def get_settings() -> Settings:
    return Settings(_env_file=_config_file)


def use_config_file(path: Optional[str]) -> Settings:
    """Make *path* the process-wide configuration file and reload settings."""
    global _config_file
    if path is not None and not Path(path).is_file():
        raise InvalidArgumentError(f"Configuration file '{path}' does not exist.")
    _config_file = path or DEFAULT_CONFIG_FILE
    get_settings.cache_clear()
    return get_settings()
