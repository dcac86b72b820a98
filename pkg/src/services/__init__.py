"""`services` package."""
