import structlog
from opentelemetry import metrics, trace
from opentelemetry.exporter.prometheus import PrometheusMetricReader
from opentelemetry.sdk.metrics import MeterProvider
from opentelemetry.sdk.resources import SERVICE_NAME, SERVICE_VERSION, Resource
from opentelemetry.sdk.trace import TracerProvider

from core.telemetry_config import Settings, get_telemetry_settings

logger = structlog.get_logger()


class OpenTelemetrySetup:
    def __init__(self):
        self.tracer_provider = None
        self.meter_provider = None

    def setup(self, settings: Settings | None = None):
        settings = settings or get_telemetry_settings()
        if not (settings.TELEMETRY.enabled and settings.TELEMETRY.otel_enabled):
            logger.debug("otel_disabled")
            return
        if self.tracer_provider is not None:
            return

        resource = Resource(
            attributes={
                SERVICE_NAME: settings.TELEMETRY.otel_service_name,
                SERVICE_VERSION: settings.APP_VERSION,
                "environment": settings.ENVIRONMENT,
            }
        )

        self.tracer_provider = TracerProvider(resource=resource)
        trace.set_tracer_provider(self.tracer_provider)

        if settings.TELEMETRY.prometheus_enabled:
            prometheus_reader = PrometheusMetricReader()
            self.meter_provider = MeterProvider(
                resource=resource, metric_readers=[prometheus_reader]
            )
            metrics.set_meter_provider(self.meter_provider)

        logger.info("otel_configured", service=settings.TELEMETRY.otel_service_name)


otel_setup = OpenTelemetrySetup()
