from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CATUNI_",
        case_sensitive=False,
        extra="ignore",
    )

    APP_NAME: str = "catuni"
    APP_VERSION: str = "0.1.0"
    SCHEMA_VERSION: str = "catuni/1"
    ENVIRONMENT: str = "development"

    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # harmonic_solver
    SOLVER_MAX_ITERATIONS: int = 500
    SOLVER_ENERGY_TOL: float = 1e-10
    SOLVER_DISPLACEMENT_TOL: float = 1e-8
    SOLVER_RELAXATION: str = "sweep"
    SOLVER_INNER_TOL: float = 1e-12
    SOLVER_INNER_MAX_ITER: int = 30
    SOLVER_WORKERS: int = 1
    SOLVER_LOG_EVERY: int = 10
    BUBBLING_ENERGY_FRACTION: float = 0.5
    BUBBLING_AREA_FRACTION: float = 0.01

    # target_surface / geom_kernel
    STEINER_DIVISOR: float = 8.0
    COMPARISON_GRID: int = 17
    COMPARISON_TOL_FACTOR: float = 1e-9
    LOCALITY_FRACTION: float = 0.25
    ANGLE_TOL: float = 1e-9
    DISTANCE_CACHE_ROWS: int = 256

    # tangent_analysis
    TRACE_POINTS: int = 64
    CIRCLE_SAMPLES: int = 128
    MAX_ORDER_RATIO: int = 6
    ROTATION_GRID: int = 24
    FIT_TOL: float = 0.1
    INTEGRALITY_TOL: float = 0.1
    CONFORMAL_K_TOL: float = 0.05
    DEGENERATE_K: float = 0.95
    MIN_RADIUS_CELLS: float = 3.0
    MONOTONICITY_C: float = 0.5

    # qc_degree
    WINDING_TOL: float = 0.1
    FIBER_SEPARATION_CELLS: float = 5.0
    MONOTONICITY_SAMPLES: int = 100
    MOBIUS_TOL: float = 1e-3
    EQUALITY_TOL: float = 0.02
    RASTER_SUBDIVISIONS: int = 12

    # uniformize_cli
    PROBE_ORDER_THRESHOLD: float = 1.2
    PROBE_RANDOM_VERTICES: int = 20
    DEFAULT_SEED: int = 0


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
