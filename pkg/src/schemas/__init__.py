"""`schemas` package: structured documents."""
