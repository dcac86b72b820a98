"""`app` package: geometry, solvers, analyses and the command line."""
