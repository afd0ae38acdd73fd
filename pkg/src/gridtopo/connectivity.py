"""Per-bus neighborhood estimation from voltage-increment panels.

Each target bus is regressed on candidate buses. Phasor increments are
stacked into a real design whose two columns per regressor tie the real
and imaginary coefficient parts into one group, so both are zero or
nonzero together; magnitude-only increments reduce to an ordinary lasso
with singleton groups. Penalties are chosen per bus by BIC over a
warm-started path, subject to a sparsity cap.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousColumnWarning,
    ModeMismatchError,
    UndefinedMIError,
    ValidationError,
)
from .model import MAGNITUDE, PHASOR, DeltaPanel, NeighborSet
from .solver import (
    DEFAULT_GRID_RATIO,
    DEFAULT_GRID_SIZE,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    GroupedDesign,
    fit_path,
    lambda_grid,
    select_lambda,
)

# Reported mutual information of perfectly correlated series; keeps
# rankings total.
MI_CAP = 50.0

RULE_AND = "and"
RULE_OR = "or"
RULE_AND_OR = "and-or"

METHOD_PER_BUS = "per-bus"
METHOD_JOINT = "joint"

SLACK_AUTO = "auto"
SLACK_INCLUDE = "include"
SLACK_EXCLUDE = "exclude"


PRESCREEN_AUTO = "auto"


@dataclass(frozen=True)
class EstimationConfig:
    """Knobs of the estimation pipeline.

    ``sparsity_cap`` None means ceil(sqrt(#candidate groups)) + 1 with a
    floor of 3 per bus, and twice the target count for the joint
    formulation. ``slack_policy`` "auto" includes the slack column
    whenever it varies; constant columns never take part. ``prescreen_k``
    "auto" keeps the ceil(sqrt(M)) highest-MI candidates per bus (plus the
    slack column when eligible), an integer pins K, and None disables
    prescreening. ``bic_gamma`` is the extended-BIC multiplicity weight;
    0 would fall back to the classical BIC, which over-selects when many
    candidate buses are scanned.
    """

    rule: str = RULE_AND_OR
    method: str = METHOD_PER_BUS
    n_lambdas: int = DEFAULT_GRID_SIZE
    lambda_min_ratio: float = DEFAULT_GRID_RATIO
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    sparsity_cap: int | None = None
    prescreen_k: int | str | None = PRESCREEN_AUTO
    slack_policy: str = SLACK_AUTO
    slack_id: int = 0
    guard_stat: str = "mean"
    group_real_imag: bool = True
    bic_gamma: float = 1.0
    jobs: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.rule not in (RULE_AND, RULE_OR, RULE_AND_OR):
            raise ValidationError(f"unknown rule {self.rule!r}")
        if self.method not in (METHOD_PER_BUS, METHOD_JOINT):
            raise ValidationError(f"unknown method {self.method!r}")
        if self.slack_policy not in (SLACK_AUTO, SLACK_INCLUDE, SLACK_EXCLUDE):
            raise ValidationError(f"unknown slack policy {self.slack_policy!r}")
        if self.guard_stat not in ("mean", "median"):
            raise ValidationError(f"unknown guard stat {self.guard_stat!r}")
        if isinstance(self.prescreen_k, str) and self.prescreen_k != PRESCREEN_AUTO:
            raise ValidationError(f"unknown prescreen setting {self.prescreen_k!r}")
        if self.bic_gamma < 0:
            raise ValidationError("bic_gamma must be nonnegative")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")

    def resolve_prescreen_k(self, bus_count: int) -> int | None:
        if self.prescreen_k == PRESCREEN_AUTO:
            return math.ceil(math.sqrt(bus_count))
        return self.prescreen_k


def default_sparsity_cap(n_groups: int) -> int:
    # sqrt-scale like the prescreen width, plus headroom so one early
    # spurious entry cannot crowd out a true neighbor at the cap
    return min(n_groups, max(3, math.ceil(math.sqrt(max(n_groups, 1))) + 1))


@dataclass(frozen=True)
class PrescreenResult:
    """Top-K candidate regressors for one target, ranked by MI."""

    target: int
    candidates: tuple[int, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        cands = tuple(int(c) for c in self.candidates)
        if len(set(cands)) != len(cands) or self.target in cands:
            raise ValidationError("candidates must be distinct and exclude the target")
        scores = tuple(float(s) for s in self.scores)
        if len(scores) != len(cands):
            raise ValidationError("one score per candidate required")
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValidationError("scores must be non-increasing")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "scores", scores)


def gaussian_mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """-0.5 * ln(1 - rho^2) with rho the sample correlation, in nats.

    Perfect correlation is capped at ``MI_CAP``. Zero-variance input is an
    error.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValidationError("series lengths differ")
    if x.size < 3:
        raise ValidationError("need at least 3 samples")
    sx = x - x.mean()
    sy = y - y.mean()
    vx = float(sx @ sx)
    vy = float(sy @ sy)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedMIError("mutual information of a constant series is undefined")
    rho2 = float(sx @ sy) ** 2 / (vx * vy)
    if rho2 >= 1.0 - 1e-15:
        return MI_CAP
    return min(-0.5 * math.log1p(-rho2), MI_CAP)


def _mi_series(col: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(col):
        return np.concatenate([col.real, col.imag])
    return np.asarray(col, dtype=float)


def _column_varies(col: np.ndarray) -> bool:
    return bool(np.ptp(col.real) > 0 or (np.iscomplexobj(col) and np.ptp(col.imag) > 0))


def eligible_buses(delta: DeltaPanel, cfg: EstimationConfig) -> list[int]:
    """Buses usable as regression targets/regressors under the config.

    Constant columns are never eligible. The slack column joins only
    under policy "include", or under "auto" when it varies.
    """
    out = []
    for j, bus in enumerate(delta.bus_ids):
        varies = _column_varies(delta.values[:, j])
        if bus == cfg.slack_id:
            if cfg.slack_policy == SLACK_EXCLUDE:
                continue
            if cfg.slack_policy == SLACK_AUTO and not varies:
                continue
            if not varies:
                continue
        elif not varies:
            continue
        out.append(bus)
    return out


def prescreen_topk(
    delta: DeltaPanel,
    target: int,
    k: int | None = None,
    candidates: Sequence[int] | None = None,
) -> PrescreenResult:
    """Rank candidate buses by mutual information with the target column.

    ``k`` defaults to ceil(sqrt(M)). When ``candidates`` is omitted, every
    varying non-target column except the conventional slack (bus 0) is
    considered. Ties break toward the smaller bus index.
    """
    m = delta.bus_count
    if candidates is None:
        candidates = [
            b
            for j, b in enumerate(delta.bus_ids)
            if b != target and b != 0 and _column_varies(delta.values[:, j])
        ]
    else:
        candidates = [int(c) for c in candidates if c != target]
    if k is None:
        k = math.ceil(math.sqrt(m))
    if not 1 <= k <= max(m - 2, 1):
        raise ValidationError(f"k={k} out of range for {m} buses")
    k = min(k, len(candidates))
    tcol = _mi_series(delta.column(target))
    scored = []
    for c in candidates:
        scored.append((gaussian_mutual_information(tcol, _mi_series(delta.column(c))), c))
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[:k]
    return PrescreenResult(
        target=target,
        candidates=tuple(c for _, c in top),
        scores=tuple(s for s, _ in top),
    )


def build_complex_design(
    delta: DeltaPanel, target: int, regressors: Sequence[int]
) -> GroupedDesign:
    """Real-stacked design for phasor increments.

    The response stacks [Re dv_i; Im dv_i]; every regressor bus
    contributes the two columns

        [ Re dv_k   -Im dv_k ]
        [ Im dv_k    Re dv_k ]

    so a complex coefficient b maps to the real pair (Re b, Im b).
    Columns are centered (complex means removed before stacking).
    """
    if delta.mode != PHASOR:
        raise ModeMismatchError("complex design needs a phasor-mode panel")
    regressors = list(regressors)
    if target in regressors:
        raise ValidationError("target cannot be one of its regressors")
    t = delta.T
    zc = delta.column(target)
    zc = zc - zc.mean()
    response = np.concatenate([zc.real, zc.imag])
    cols = np.empty((2 * t, 2 * len(regressors)))
    for j, bus in enumerate(regressors):
        xc = delta.column(bus)
        xc = xc - xc.mean()
        cols[:t, 2 * j] = xc.real
        cols[t:, 2 * j] = xc.imag
        cols[:t, 2 * j + 1] = -xc.imag
        cols[t:, 2 * j + 1] = xc.real
    return GroupedDesign(design=cols, response=response, group_sizes=(2,) * len(regressors))


def build_magnitude_design(
    delta: DeltaPanel, target: int, regressors: Sequence[int]
) -> GroupedDesign:
    """Singleton-group design for magnitude increments (ordinary lasso)."""
    if delta.mode != MAGNITUDE:
        raise ModeMismatchError("magnitude design needs a magnitude-mode panel")
    regressors = list(regressors)
    if target in regressors:
        raise ValidationError("target cannot be one of its regressors")
    zc = delta.column(target).astype(float)
    response = zc - zc.mean()
    cols = np.empty((delta.T, len(regressors)))
    for j, bus in enumerate(regressors):
        xc = delta.column(bus).astype(float)
        cols[:, j] = xc - xc.mean()
    return GroupedDesign(design=cols, response=response, group_sizes=(1,) * len(regressors))


@dataclass(frozen=True)
class BusEstimate:
    """Neighbor set of one bus plus per-bus path diagnostics."""

    neighbors: NeighborSet
    lam: float
    n_active: int
    converged: bool
    candidates: tuple[int, ...]


def _resolve_candidates(
    delta: DeltaPanel, target: int, cfg: EstimationConfig
) -> list[int]:
    """Candidate regressors: the prescreened pool plus the feed-in bus.

    The slack column, when eligible, is always kept as a candidate: its
    fluctuation is deliberately small, so MI ranking alone could drop it
    even though it is the only route to the feeder branch.
    """
    pool = [b for b in eligible_buses(delta, cfg) if b != target]
    k = cfg.resolve_prescreen_k(delta.bus_count)
    if k is not None and k < len(pool):
        res = prescreen_topk(delta, target, k=k, candidates=pool)
        keep = set(res.candidates)
        if cfg.slack_id in pool:
            keep.add(cfg.slack_id)
        return sorted(keep)
    return pool


def _flag_duplicates(design: np.ndarray, regressors, member_set) -> frozenset[int]:
    """Buses whose column exactly duplicates an active member's column."""
    flagged = set()
    cols = np.asarray(design)
    for j, bus in enumerate(regressors):
        if bus in member_set:
            continue
        cj = cols[:, j]
        if not np.any(cj):
            continue
        for j2, bus2 in enumerate(regressors):
            if bus2 in member_set and np.allclose(cj, cols[:, j2], rtol=1e-12, atol=0.0):
                flagged.add(bus)
                flagged.add(bus2)
                break
    return frozenset(flagged)


def _estimate_bus(
    delta: DeltaPanel,
    target: int,
    cfg: EstimationConfig,
    candidates: Sequence[int] | None,
) -> BusEstimate:
    if candidates is None:
        candidates = _resolve_candidates(delta, target, cfg)
    regressors = sorted(int(c) for c in candidates)
    grouped = cfg.group_real_imag
    if not regressors:
        ns = NeighborSet(target=target, members=frozenset())
        return BusEstimate(ns, lam=0.0, n_active=0, converged=True, candidates=())
    if delta.mode == PHASOR:
        problem = build_complex_design(delta, target, regressors)
        if not grouped:
            problem = GroupedDesign(
                design=problem.design,
                response=problem.response,
                group_sizes=(1,) * problem.n_cols,
            )
    else:
        problem = build_magnitude_design(delta, target, regressors)
    grid = lambda_grid(problem, n=cfg.n_lambdas, min_ratio=cfg.lambda_min_ratio)
    res = fit_path(problem, grid, tol=cfg.tol, max_iter=cfg.max_iter, bic_gamma=cfg.bic_gamma)
    cap = cfg.sparsity_cap
    if cap is None:
        cap = default_sparsity_cap(len(regressors))
    idx = select_lambda(res.trace, cap)
    est = res.estimates[idx]

    coeffs: dict[int, complex] = {}
    if delta.mode == PHASOR:
        gamma = est.gamma
        for j, bus in enumerate(regressors):
            re, im = gamma[2 * j], gamma[2 * j + 1]
            if re != 0.0 or im != 0.0:
                coeffs[bus] = complex(re, im)
    else:
        for j, bus in enumerate(regressors):
            if est.gamma[j] != 0.0:
                coeffs[bus] = complex(est.gamma[j], 0.0)
    members = frozenset(coeffs)
    ambiguous = _flag_duplicates(np.asarray(problem.design), _design_buses(regressors, delta.mode, grouped), members)
    if ambiguous:
        warnings.warn(
            f"bus {target}: collinear regressor columns {sorted(ambiguous)}",
            AmbiguousColumnWarning,
            stacklevel=2,
        )
    ns = NeighborSet(
        target=target, members=members, coefficients=coeffs, ambiguous=ambiguous
    )
    return BusEstimate(
        neighbors=ns,
        lam=float(est.lam),
        n_active=est.n_active,
        converged=est.converged,
        candidates=tuple(regressors),
    )


def _design_buses(regressors, mode, grouped) -> list[int]:
    if mode == PHASOR:
        return [b for b in regressors for _ in (0, 1)]
    return list(regressors)


def estimate_neighbors_complex(
    delta: DeltaPanel,
    target: int,
    cfg: EstimationConfig | None = None,
    candidates: Sequence[int] | None = None,
) -> NeighborSet:
    """Neighbor set of one bus from phasor increments via group lasso.

    Fits a BIC-selected penalty on the stacked real design and reassembles
    the complex coefficient of each regressor; membership is exactly the
    nonzero-coefficient set.
    """
    if delta.mode != PHASOR:
        raise ModeMismatchError("phasor-mode panel required")
    cfg = cfg or EstimationConfig()
    return _estimate_bus(delta, target, cfg, candidates).neighbors


def estimate_neighbors_magnitude(
    delta: DeltaPanel,
    target: int,
    cfg: EstimationConfig | None = None,
    candidates: Sequence[int] | None = None,
) -> NeighborSet:
    """Neighbor set of one bus from magnitude increments via plain lasso."""
    if delta.mode == PHASOR:
        raise ModeMismatchError(
            "magnitude-mode panel required; reduce phasors with as_magnitude()"
        )
    cfg = cfg or EstimationConfig()
    return _estimate_bus(delta, target, cfg, candidates).neighbors


def estimate_bus(
    delta: DeltaPanel,
    target: int,
    cfg: EstimationConfig,
    candidates: Sequence[int] | None = None,
) -> BusEstimate:
    """Mode-dispatching per-bus estimation with diagnostics."""
    return _estimate_bus(delta, target, cfg, candidates)
