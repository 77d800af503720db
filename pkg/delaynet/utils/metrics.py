"""
delaynet/utils/metrics.py

Prometheus metrics definitions for delaynet.

Design Decisions:
- Metrics are defined at module level (singletons) so they can be
  imported anywhere without double-registration.
- Batch runs have no scrape endpoint; `write_metrics` dumps the registry
  in text exposition format for the node-exporter textfile collector.
- Label cardinality is kept low (no M, seed or init labels).
"""

from __future__ import annotations

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

from delaynet.utils.logger import get_logger

logger = get_logger(__name__)

# ── Optimisation ──────────────────────────────────────────────

minimizations_total = Counter(
    name="delaynet_minimizations_total",
    documentation="Inner action minimisations by outcome",
    labelnames=["outcome"],
)

minimizer_iterations = Histogram(
    name="delaynet_minimizer_iterations",
    documentation="Quasi-Newton iterations per inner minimisation",
    buckets=(5, 10, 25, 50, 100, 250, 500, 1000, 2000, float("inf")),
)

anneal_steps_total = Counter(
    name="delaynet_anneal_steps_total",
    documentation="Completed precision annealing steps",
)

dropped_inits_total = Counter(
    name="delaynet_dropped_inits_total",
    documentation="Annealing lineages dropped after persistent non-finite actions",
)

lowest_action_level = Gauge(
    name="delaynet_lowest_action_level",
    documentation="Lowest action level at the most recent annealing step",
)

# ── Analysis ──────────────────────────────────────────────────

lyapunov_skipped_points_total = Counter(
    name="delaynet_lyapunov_skipped_points_total",
    documentation="Trajectory points skipped because the local fit was singular",
)

sweep_cells_total = Counter(
    name="delaynet_sweep_cells_total",
    documentation="Sweep cells by status",
    labelnames=["status"],
)


def write_metrics(path: str) -> None:
    """Write the default registry to `path`; never raises."""
    try:
        write_to_textfile(path, REGISTRY)
    except OSError as exc:
        logger.bind(path=path).warning("Could not write metrics file: {}", exc)
