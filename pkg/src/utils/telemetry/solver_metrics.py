from typing import Optional

import structlog
from opentelemetry import metrics
from prometheus_client import Counter, Histogram

logger = structlog.get_logger()


class SolverMetrics:
    def __init__(self):
        self.meter = metrics.get_meter(__name__)

        self.solver_runs = Counter(
            "catuni_solver_runs_total",
            "Solver runs by problem kind and outcome",
            ["problem", "outcome"],
        )

        self.solver_sweeps = Counter(
            "catuni_solver_sweeps_total",
            "Relaxation sweeps performed",
            ["problem"],
        )

        self.frechet_noops = Counter(
            "catuni_frechet_noops_total",
            "Vertex updates skipped because of a locality failure",
            ["problem"],
        )

        self.solve_duration = Histogram(
            "catuni_solve_duration_seconds",
            "Solver wall time",
            ["problem"],
            buckets=[0.1, 0.5, 1, 5, 10, 30, 60, 300, 600],
        )

        self.analysis_duration = Histogram(
            "catuni_analysis_duration_seconds",
            "Per-point analysis wall time",
            ["analysis"],
            buckets=[0.01, 0.05, 0.1, 0.5, 1, 5, 10, 30],
        )

        self.verdicts = Counter(
            "catuni_verdicts_total",
            "Acceptance verdicts",
            ["predicate", "outcome"],
        )

    def track_solve(
        self,
        problem: str,
        outcome: str,
        sweeps: int,
        noops: int = 0,
        duration: Optional[float] = None,
    ):
        self.solver_runs.labels(problem=problem, outcome=outcome).inc()
        self.solver_sweeps.labels(problem=problem).inc(sweeps)
        if noops:
            self.frechet_noops.labels(problem=problem).inc(noops)
        if duration is not None:
            self.solve_duration.labels(problem=problem).observe(duration)

    def track_analysis(self, analysis: str, duration: float):
        self.analysis_duration.labels(analysis=analysis).observe(duration)

    def track_verdict(self, predicate: str, passed: bool):
        outcome = "pass" if passed else "fail"
        self.verdicts.labels(predicate=predicate, outcome=outcome).inc()
        logger.debug("verdict_tracked", predicate=predicate, outcome=outcome)


solver_metrics = SolverMetrics()
