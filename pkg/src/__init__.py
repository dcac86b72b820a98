"""Top-level src package for the project."""
