"""`core` package: settings, errors, logging."""
