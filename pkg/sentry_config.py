import logging
import os
from typing import Dict, Optional

import sentry_sdk
from sentry_sdk.integrations.logging import LoggingIntegration

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_logging_configured = False


def configure_logging(level: Optional[str] = None) -> int:
    """Apply COMATE_LOG_LEVEL (or `level`) to the root logger once per process"""
    global _logging_configured

    name = (level or os.getenv("COMATE_LOG_LEVEL", "INFO")).upper()
    resolved = logging.getLevelName(name)
    if not isinstance(resolved, int):
        resolved = logging.INFO

    if not _logging_configured:
        logging.basicConfig(level=resolved, format=LOG_FORMAT)
        _logging_configured = True
    logging.getLogger().setLevel(resolved)
    return resolved


def init_sentry() -> bool:
    """Initialize Sentry for CLI runs; returns whether reporting is active"""

    if os.getenv("DISABLE_SENTRY", "false").lower() == "true":
        logging.getLogger(__name__).info("⚠️ Sentry disabled via DISABLE_SENTRY environment variable")
        return False

    sentry_dsn = os.getenv("SENTRY_DSN")
    if not sentry_dsn:
        logging.getLogger(__name__).debug("Sentry DSN not configured, error reporting stays local")
        return False

    environment = os.getenv("ENVIRONMENT", "development")

    # Breadcrumbs from INFO, events from ERROR
    logging_integration = LoggingIntegration(
        level=logging.INFO,
        event_level=logging.ERROR
    )

    sentry_sdk.init(
        dsn=sentry_dsn,
        traces_sample_rate=1.0 if environment == "development" else 0.1,
        environment=environment,
        release=f"comateformer@{os.getenv('COMATE_RELEASE', 'dev')}",
        integrations=[logging_integration],
        before_send=filter_errors,
    )
    sentry_sdk.set_tag("component", "cli")
    sentry_sdk.set_tag("service", "comateformer")

    logging.getLogger(__name__).info(f"✅ Sentry initialized for {environment} environment")
    return True


def filter_errors(event, hint):
    """Drop expected user-side failures; keep crashes"""

    if "exc_info" in hint:
        exc_type = hint["exc_info"][0]
        if exc_type is not None and exc_type.__name__ in ("UsageError", "KeyboardInterrupt"):
            return None

    return event


# Context helpers
def set_run_context(command: str, **kwargs):
    """Tag the current scope with the CLI command and its arguments"""
    with sentry_sdk.configure_scope() as scope:
        scope.set_tag("command", command)
        for key, value in kwargs.items():
            scope.set_extra(key, value)


def capture_run_error(error: Exception, context: Optional[Dict] = None):
    """Capture a failed run with context"""
    with sentry_sdk.configure_scope() as scope:
        if context:
            for key, value in context.items():
                scope.set_extra(key, value)

        sentry_sdk.capture_exception(error)


# Performance monitoring helpers
def start_span(op: str, description: str):
    return sentry_sdk.start_span(op=op, description=description)


def track_training_epoch(epoch: int, variant: str):
    span = start_span("train.epoch", f"Epoch {epoch} ({variant})")
    span.set_tag("variant", variant)
    return span


def track_ablation_variant(variant: str):
    return start_span("ablation.variant", f"Train and score {variant}")


def track_gradcheck(component: str):
    return start_span("gradcheck.component", f"Finite-difference check of {component}")


def get_logger(name: str):
    """Module logger; Sentry's logging integration picks it up once initialized"""
    return logging.getLogger(name)
