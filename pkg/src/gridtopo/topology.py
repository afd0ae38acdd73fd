"""Network-wide topology from per-bus neighbor claims or one joint solve.

The AND rule keeps an edge when both endpoints claim each other, the OR
rule when either does. The AND-OR rule starts from AND and reattaches
buses that lack a neighbor of higher mean voltage magnitude, adding the
best OR-supported edge toward a higher-magnitude bus; load buses are
expected to see at least one such neighbor, so a bus without one is
suspected isolated.

The joint formulation stacks all per-bus regressions into one sparse
system whose directed coefficient pairs are tied into groups: an L1
penalty over all coefficients reproduces the OR rule, a group penalty
over the pairs the AND rule, each with a single network-wide penalty.
"""

from __future__ import annotations

import time
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .connectivity import (
    METHOD_JOINT,
    METHOD_PER_BUS,
    RULE_AND,
    RULE_AND_OR,
    RULE_OR,
    BusEstimate,
    EstimationConfig,
    eligible_buses,
    estimate_bus,
    prescreen_topk,
)
from .errors import ModeMismatchError, ValidationError
from .model import (
    MAGNITUDE,
    PHASOR,
    TAG_AND,
    TAG_AND_OR_ADDED,
    TAG_OR,
    DeltaPanel,
    EdgeSet,
    MeasurementPanel,
    NeighborSet,
    canonical_pair,
    difference_panel,
)
from .solver import GroupedDesign, fit_path, lambda_grid, select_lambda


def _as_mapping(neighbor_sets) -> dict[int, NeighborSet]:
    if isinstance(neighbor_sets, Mapping):
        sets = dict(neighbor_sets)
    else:
        sets = {ns.target: ns for ns in neighbor_sets}
    return sets


def combine_and(neighbor_sets: Iterable[NeighborSet] | Mapping[int, NeighborSet]) -> EdgeSet:
    """Edge {i,k} present iff k claims i and i claims k."""
    sets = _as_mapping(neighbor_sets)
    edges = set()
    for i, ns in sets.items():
        for k in ns.members:
            if k in sets and i in sets[k].members:
                edges.add(canonical_pair(i, k))
    return EdgeSet(edges=frozenset(edges), provenance={e: TAG_AND for e in edges})


def combine_or(neighbor_sets: Iterable[NeighborSet] | Mapping[int, NeighborSet]) -> EdgeSet:
    """Edge {i,k} present iff either endpoint claims the other."""
    sets = _as_mapping(neighbor_sets)
    edges = set()
    for i, ns in sets.items():
        for k in ns.members:
            edges.add(canonical_pair(i, k))
    return EdgeSet(edges=frozenset(edges), provenance={e: TAG_OR for e in edges})


def _magnitude_stat(panel: MeasurementPanel, stat: str) -> dict[int, float]:
    mags = panel.magnitudes()
    agg = np.median(mags, axis=0) if stat == "median" else mags.mean(axis=0)
    return {bus: float(agg[j]) for j, bus in enumerate(panel.bus_ids)}


def _and_or_repair(
    and_pairs: frozenset[tuple[int, int]],
    or_pairs: frozenset[tuple[int, int]],
    buses: Iterable[int],
    level: Mapping[int, float],
    score,
) -> tuple[set[tuple[int, int]], list[int]]:
    """Added edges and isolated buses of the AND-OR repair step.

    For every bus without an AND neighbor of strictly higher magnitude
    level, the best OR-supported edge toward a higher-level bus is added
    (largest ``score(i, other)``, ties toward the smaller bus index). A bus
    with no qualifying candidate is reported isolated unless it holds the
    highest level itself (the feed-in point).
    """
    and_adj: dict[int, set[int]] = {}
    for i, k in and_pairs:
        and_adj.setdefault(i, set()).add(k)
        and_adj.setdefault(k, set()).add(i)
    or_adj: dict[int, set[int]] = {}
    for i, k in or_pairs | and_pairs:
        or_adj.setdefault(i, set()).add(k)
        or_adj.setdefault(k, set()).add(i)

    buses = [b for b in buses if b in level]
    top_level = max((level[b] for b in buses), default=None)
    added: set[tuple[int, int]] = set()
    isolated: list[int] = []
    for i in sorted(buses):
        if any(level.get(k, -np.inf) > level[i] for k in and_adj.get(i, ())):
            continue
        candidates = [
            (-score(i, other), other)
            for other in or_adj.get(i, ())
            if level.get(other, -np.inf) > level[i]
        ]
        if not candidates:
            if top_level is None or level[i] < top_level:
                isolated.append(i)
            continue
        candidates.sort()
        pair = canonical_pair(i, candidates[0][1])
        if pair not in and_pairs:
            added.add(pair)
    return added, isolated


def combine_and_or(
    neighbor_sets: Iterable[NeighborSet] | Mapping[int, NeighborSet],
    panel: MeasurementPanel,
    stat: str = "mean",
) -> EdgeSet:
    """AND edges plus repairs for buses without a higher-magnitude neighbor.

    The guard uses raw voltage magnitudes, not increments: load buses draw
    power, so each should see at least one neighbor of higher average
    magnitude. A bus that does not gets the single best OR-supported edge
    toward a higher-magnitude bus (largest claimed coefficient magnitude,
    ties toward the smaller bus index). Buses with no qualifying candidate
    are left alone and reported in ``isolated_buses``.
    """
    sets = _as_mapping(neighbor_sets)
    level = _magnitude_stat(panel, stat)
    and_set = combine_and(sets)
    or_set = combine_or(sets)

    def score(i: int, other: int) -> float:
        s = 0.0
        if i in sets and other in sets[i].members:
            s = max(s, abs(sets[i].coefficients.get(other, 0.0)))
        if other in sets and i in sets[other].members:
            s = max(s, abs(sets[other].coefficients.get(i, 0.0)))
        return s

    added, isolated = _and_or_repair(and_set.edges, or_set.edges, sets, level, score)
    provenance = {e: TAG_AND for e in and_set.edges}
    provenance.update({e: TAG_AND_OR_ADDED for e in added})
    return EdgeSet(
        edges=frozenset(provenance),
        provenance=provenance,
        isolated_buses=tuple(isolated),
    )


# --- joint formulation ------------------------------------------------------

@dataclass(frozen=True)
class JointDesign:
    """Stacked magnitude regressions of every target bus at once.

    Row block b holds target ``targets[b]``; the column for the directed
    coefficient (i, k) carries the increments of bus k in target i's
    block. ``pair_columns`` maps each unordered pair to its two (or, with
    a restricted pair set, one) column indices.
    """

    design: sp.spmatrix
    response: np.ndarray
    targets: tuple[int, ...]
    column_pairs: tuple[tuple[int, int], ...]
    pair_columns: Mapping[tuple[int, int], tuple[int, ...]]

    def grouped(self, rule: str) -> GroupedDesign:
        """Grouped problem: pair groups for AND, singleton groups for OR."""
        if rule == RULE_AND:
            sizes = []
            for pair in self._pair_order():
                sizes.append(len(self.pair_columns[pair]))
            if any(s not in (1, 2) for s in sizes):
                raise ValidationError("pair groups must have one or two columns")
            return GroupedDesign(
                design=self.design, response=self.response, group_sizes=tuple(sizes)
            )
        if rule == RULE_OR:
            return GroupedDesign(
                design=self.design,
                response=self.response,
                group_sizes=(1,) * self.design.shape[1],
            )
        raise ValidationError(f"joint solve supports 'and'/'or', got {rule!r}")

    def _pair_order(self) -> list[tuple[int, int]]:
        return sorted(self.pair_columns)


def build_joint_design(
    delta: DeltaPanel,
    targets: Sequence[int] | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> JointDesign:
    """Sparse stacked design for the single-solve formulation.

    ``targets`` defaults to every bus except the conventional slack
    (bus 0). With n targets and no pair restriction the design has
    n*T rows and n*(n-1) columns, two per unordered pair, ordered so the
    two directed coefficients of a pair are adjacent. Each row holds at
    most n-1 nonzeros, the increments observed at one time step. Columns
    are not centered, preserving sparsity; increments are near zero-mean.
    """
    if delta.mode != MAGNITUDE:
        raise ModeMismatchError("joint design needs magnitude increments")
    if delta.bus_count < 3:
        raise ValidationError("joint design needs at least 3 buses")
    if targets is None:
        targets = [b for b in delta.bus_ids if b != 0]
    targets = sorted(int(b) for b in targets)
    if len(targets) < 2:
        raise ValidationError("joint design needs at least 2 target buses")
    tset = set(targets)
    if pairs is None:
        wanted = {canonical_pair(i, k) for i in targets for k in targets if i != k}
    else:
        wanted = set()
        for i, k in pairs:
            if i == k or i not in tset or k not in tset:
                raise ValidationError(f"pair ({i},{k}) not between distinct targets")
            wanted.add(canonical_pair(i, k))
    t = delta.T
    block_of = {b: j for j, b in enumerate(targets)}
    col_of_bus = {b: delta.bus_ids.index(b) for b in targets}

    column_pairs: list[tuple[int, int]] = []
    pair_columns: dict[tuple[int, int], tuple[int, ...]] = {}
    rows_idx: list[np.ndarray] = []
    cols_idx: list[np.ndarray] = []
    data: list[np.ndarray] = []
    col = 0
    vals = np.asarray(delta.values, dtype=float)
    for pair in sorted(wanted):
        cols_for_pair = []
        for i, k in (pair, pair[::-1]):
            # directed coefficient (i, k): regressor k inside target i's block
            block = block_of[i]
            rows_idx.append(np.arange(block * t, (block + 1) * t))
            cols_idx.append(np.full(t, col))
            data.append(vals[:, col_of_bus[k]])
            column_pairs.append((i, k))
            cols_for_pair.append(col)
            col += 1
        pair_columns[pair] = tuple(cols_for_pair)
    n_cols = col
    design = sp.csc_matrix(
        (np.concatenate(data), (np.concatenate(rows_idx), np.concatenate(cols_idx))),
        shape=(len(targets) * t, n_cols),
    )
    response = np.concatenate([vals[:, col_of_bus[b]] for b in targets])
    return JointDesign(
        design=design,
        response=response,
        targets=tuple(targets),
        column_pairs=tuple(column_pairs),
        pair_columns=pair_columns,
    )


def _joint_pairs_from_prescreen(
    delta: DeltaPanel, targets: Sequence[int], k: int, slack_id: int = 0
) -> list[tuple[int, int]]:
    """Unordered pairs whose two buses rank in each other's top-k MI lists.

    The feed-in bus, when present, joins every candidate list so its
    branch stays representable.
    """
    cand: dict[int, set[int]] = {}
    pool = list(targets)
    for b in pool:
        res = prescreen_topk(delta, b, k=k, candidates=[c for c in pool if c != b])
        cand[b] = set(res.candidates)
        if slack_id in pool and b != slack_id:
            cand[b].add(slack_id)
    pairs = []
    for i in pool:
        for k2 in cand[i]:
            if i < k2 and i in cand.get(k2, ()):
                pairs.append((i, k2))
    return pairs


def _block_weighted(problem: GroupedDesign, n_blocks: int) -> GroupedDesign:
    """Each target block scaled to unit response standard deviation.

    The stacked blocks have heterogeneous scales (the slack block in
    particular), and the BIC judges all coefficients against one pooled
    residual variance; without weighting, columns in high-variance blocks
    look spuriously significant.
    """
    n = problem.n_rows // n_blocks
    weights = np.ones(problem.n_rows)
    for b in range(n_blocks):
        sl = slice(b * n, (b + 1) * n)
        s = float(np.std(problem.response[sl]))
        if s > 0:
            weights[sl] = 1.0 / s
    design = sp.diags(weights) @ problem.design
    return GroupedDesign(
        design=design.tocsc() if sp.issparse(design) else design,
        response=problem.response * weights,
        group_sizes=problem.group_sizes,
    )


def estimate_topology_joint(
    delta: DeltaPanel,
    rule: str,
    cfg: EstimationConfig | None = None,
) -> EdgeSet:
    """Edges from one network-wide solve of the stacked system.

    rule "or" penalizes every directed coefficient separately and keeps an
    edge when either direction is nonzero; rule "and" ties each pair into
    one group so both directions vanish together. Target blocks are scaled
    to unit response deviation before the solve, and the penalty is
    selected by BIC with a cap of twice the target count by default.
    """
    cfg = cfg or EstimationConfig()
    targets = [b for b in eligible_buses(delta, cfg)]
    pairs = None
    k = cfg.resolve_prescreen_k(delta.bus_count)
    if k is not None and k < len(targets) - 1:
        pairs = _joint_pairs_from_prescreen(delta, targets, k, slack_id=cfg.slack_id)
    joint = build_joint_design(delta, targets=targets, pairs=pairs)
    problem = _block_weighted(joint.grouped(rule), len(joint.targets))
    grid = lambda_grid(problem, n=cfg.n_lambdas, min_ratio=cfg.lambda_min_ratio)
    res = fit_path(problem, grid, tol=cfg.tol, max_iter=cfg.max_iter, bic_gamma=cfg.bic_gamma)
    cap = cfg.sparsity_cap if cfg.sparsity_cap is not None else 2 * len(joint.targets)
    idx = select_lambda(res.trace, cap)
    gamma = res.estimates[idx].gamma
    edges = set()
    for pair, cols in joint.pair_columns.items():
        if any(gamma[c] != 0.0 for c in cols):
            edges.add(pair)
    tag = TAG_AND if rule == RULE_AND else TAG_OR
    return EdgeSet(edges=frozenset(edges), provenance={e: tag for e in edges})


# --- end-to-end orchestration -----------------------------------------------

@dataclass(frozen=True)
class TopologyEstimate:
    """Edge set plus the per-bus report of an estimation run."""

    edges: EdgeSet
    neighbor_sets: Mapping[int, NeighborSet]
    report: Mapping[str, Any] = field(default_factory=dict)


def _estimate_all_buses(
    delta: DeltaPanel, targets: Sequence[int], cfg: EstimationConfig
) -> dict[int, BusEstimate]:
    if cfg.jobs > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda b: estimate_bus(delta, b, cfg), targets))
        return {b: r for b, r in zip(targets, results)}
    return {b: estimate_bus(delta, b, cfg) for b in targets}


def estimate_topology(panel: MeasurementPanel, cfg: EstimationConfig | None = None) -> TopologyEstimate:
    """Full pipeline: difference, per-bus estimation (or joint solve), rule.

    Deterministic for a fixed panel and config. The report carries the
    selected penalty and active-group count per bus, isolated-bus
    warnings, and stage timings.
    """
    cfg = cfg or EstimationConfig()
    t0 = time.perf_counter()
    delta = difference_panel(panel)
    timings = {"difference_s": time.perf_counter() - t0}

    if cfg.method == METHOD_JOINT:
        t1 = time.perf_counter()
        delta_mag = delta if delta.mode == MAGNITUDE else difference_panel(panel.as_magnitude())
        if cfg.rule == RULE_AND_OR:
            and_edges = estimate_topology_joint(delta_mag, RULE_AND, cfg)
            or_edges = estimate_topology_joint(delta_mag, RULE_OR, cfg)
            targets = eligible_buses(delta_mag, cfg)
            edges = _joint_and_or(and_edges, or_edges, targets, panel, cfg.guard_stat)
        else:
            edges = estimate_topology_joint(delta_mag, cfg.rule, cfg)
        timings["estimate_s"] = time.perf_counter() - t1
        report = {
            "method": METHOD_JOINT,
            "rule": cfg.rule,
            "edge_count": len(edges),
            "isolated_buses": list(edges.isolated_buses),
            "timings": timings,
        }
        return TopologyEstimate(edges=edges, neighbor_sets={}, report=report)

    t1 = time.perf_counter()
    targets = eligible_buses(delta, cfg)
    estimates = _estimate_all_buses(delta, targets, cfg)
    timings["estimate_s"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    sets = {b: e.neighbors for b, e in estimates.items()}
    if cfg.rule == RULE_AND:
        edges = combine_and(sets)
    elif cfg.rule == RULE_OR:
        edges = combine_or(sets)
    else:
        edges = combine_and_or(sets, panel, stat=cfg.guard_stat)
    timings["combine_s"] = time.perf_counter() - t2

    per_bus = {
        str(b): {
            "lambda": e.lam,
            "active_groups": e.n_active,
            "converged": e.converged,
            "candidates": list(e.candidates),
        }
        for b, e in sorted(estimates.items())
    }
    report = {
        "method": METHOD_PER_BUS,
        "rule": cfg.rule,
        "edge_count": len(edges),
        "per_bus": per_bus,
        "isolated_buses": list(edges.isolated_buses),
        "warnings": [
            f"bus {b}: estimation did not converge"
            for b, e in sorted(estimates.items())
            if not e.converged
        ],
        "timings": timings,
    }
    return TopologyEstimate(edges=edges, neighbor_sets=sets, report=report)


def _joint_and_or(
    and_edges: EdgeSet,
    or_edges: EdgeSet,
    targets: Sequence[int],
    panel: MeasurementPanel,
    stat: str,
) -> EdgeSet:
    """AND-OR repair applied to joint-solve outputs.

    The grouped solve supplies the AND set, the L1 solve the OR support.
    Per-direction coefficient scores are not available here, so repairs
    break ties by bus index alone.
    """
    level = _magnitude_stat(panel, stat)
    added, isolated = _and_or_repair(
        and_edges.edges, or_edges.edges, targets, level, lambda i, other: 0.0
    )
    prov = {e: TAG_AND for e in and_edges.edges}
    prov.update({e: TAG_AND_OR_ADDED for e in added})
    return EdgeSet(
        edges=frozenset(prov),
        provenance=prov,
        isolated_buses=tuple(isolated),
    )
