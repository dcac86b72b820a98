import inspect
import time
from functools import wraps
from typing import Any, Callable, Dict, Optional

import structlog
from opentelemetry import trace
from opentelemetry.trace import Status, StatusCode

from core.exceptions import CatuniError
from utils.telemetry.solver_metrics import solver_metrics

logger = structlog.get_logger()
tracer = trace.get_tracer(__name__)


def traceable(name: Optional[str] = None, metadata: Optional[Dict[str, Any]] = None):
    """Run the wrapped callable inside a span and time it.

    Durations of callables named ``analysis.*`` are also recorded as
    analysis metrics.
    """

    def decorator(func: Callable) -> Callable:
        span_name = name or func.__name__

        def _start(span):
            if metadata:
                for key, value in metadata.items():
                    span.set_attribute(key, str(value))
            return time.perf_counter()

        def _finish_ok(span, start_time):
            duration = time.perf_counter() - start_time
            span.set_attribute("duration_seconds", duration)
            span.set_status(Status(StatusCode.OK))
            if span_name.startswith("analysis."):
                solver_metrics.track_analysis(span_name[len("analysis.") :], duration)

        def _finish_error(span, start_time, error: Exception):
            duration = time.perf_counter() - start_time
            span.set_attribute("duration_seconds", duration)
            span.set_status(Status(StatusCode.ERROR, str(error)))
            span.record_exception(error)
            if isinstance(error, CatuniError):
                span.set_attribute("catuni.module", error.module)
            logger.error(
                "trace_error",
                span_name=span_name,
                error=str(error),
                duration=duration,
            )

        @wraps(func)
        async def async_wrapper(*args, **kwargs):
            with tracer.start_as_current_span(span_name) as span:
                start_time = _start(span)
                try:
                    result = await func(*args, **kwargs)
                except Exception as e:
                    _finish_error(span, start_time, e)
                    raise
                _finish_ok(span, start_time)
                return result

        @wraps(func)
        def sync_wrapper(*args, **kwargs):
            with tracer.start_as_current_span(span_name) as span:
                start_time = _start(span)
                try:
                    result = func(*args, **kwargs)
                except Exception as e:
                    _finish_error(span, start_time, e)
                    raise
                _finish_ok(span, start_time)
                return result

        if inspect.iscoroutinefunction(func):
            return async_wrapper
        return sync_wrapper

    return decorator
