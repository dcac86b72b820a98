from typing import Optional

from pydantic import BaseModel

from core.config import Settings as CoreSettings


class TelemetryConfig(BaseModel):
    enabled: bool = False

    prometheus_enabled: bool = True
    prometheus_port: int = 9090

    otel_enabled: bool = False
    otel_endpoint: Optional[str] = None
    otel_service_name: str = "catuni"

    trace_sample_rate: float = 1.0
    track_solver_progress: bool = True


class Settings(CoreSettings):
    TELEMETRY: TelemetryConfig = TelemetryConfig()


def get_telemetry_settings() -> Settings:
    return Settings()
