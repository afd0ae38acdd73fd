"""Scoring of estimated connectivity and topology against ground truth.

The headline metric is the error rate

    ER = (#false edges + #missing edges) / #true edges * 100,

a percentage that can exceed 100 when false estimates outnumber the
truth. Per-bus connectivity errors count the symmetric difference of
neighbor sets; the per-category labels follow the convention that
"false" edges are estimated but not true and "missing" edges are true
but not estimated.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from .errors import ValidationError
from .model import EdgeSet, NeighborSet, canonical_pair


def node_error(true_set: NeighborSet, est_set: NeighborSet) -> int:
    """Size of the symmetric difference of the two neighbor sets."""
    if true_set.target != est_set.target:
        raise ValidationError(
            f"neighbor sets target different buses: {true_set.target} vs {est_set.target}"
        )
    return len(true_set.members ^ est_set.members)


def _as_pairs(edges) -> frozenset[tuple[int, int]]:
    if isinstance(edges, EdgeSet):
        return edges.edges
    return frozenset(canonical_pair(i, k) for i, k in edges)


@dataclass(frozen=True)
class EvaluationReport:
    """Edge-level comparison of an estimate against the truth."""

    error_rate: float  # percent
    false_edges: tuple[tuple[int, int], ...]
    missing_edges: tuple[tuple[int, int], ...]
    per_bus_errors: Mapping[int, int]
    true_edge_count: int
    estimated_edge_count: int
    precision: float
    recall: float
    f1: float
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "error_rate_percent": self.error_rate,
            "true_edge_count": self.true_edge_count,
            "estimated_edge_count": self.estimated_edge_count,
            "false_edges": [list(e) for e in self.false_edges],
            "missing_edges": [list(e) for e in self.missing_edges],
            "per_bus_errors": {str(b): c for b, c in sorted(self.per_bus_errors.items())},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "metadata": dict(self.metadata),
        }


def edge_error_rate(
    true_edges: EdgeSet | Iterable[tuple[int, int]],
    est_edges: EdgeSet | Iterable[tuple[int, int]],
    metadata: Mapping[str, Any] | None = None,
) -> EvaluationReport:
    """Error rate of an estimated edge set, with both error categories."""
    truth = _as_pairs(true_edges)
    est = _as_pairs(est_edges)
    if not truth:
        raise ValidationError("true edge set is empty")
    false = tuple(sorted(est - truth))
    missing = tuple(sorted(truth - est))
    er = 100.0 * (len(false) + len(missing)) / len(truth)
    per_bus: dict[int, int] = {}
    for i, k in list(false) + list(missing):
        per_bus[i] = per_bus.get(i, 0) + 1
        per_bus[k] = per_bus.get(k, 0) + 1
    hits = len(truth & est)
    precision = hits / len(est) if est else 1.0 if not truth else 0.0
    recall = hits / len(truth)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvaluationReport(
        error_rate=er,
        false_edges=false,
        missing_edges=missing,
        per_bus_errors=per_bus,
        true_edge_count=len(truth),
        estimated_edge_count=len(est),
        precision=precision,
        recall=recall,
        f1=f1,
        metadata=dict(metadata or {}),
    )
