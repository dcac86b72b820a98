"""`utils` package."""
