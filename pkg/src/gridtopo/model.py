"""Core data model: networks, measurement panels, neighbor sets, edge sets.

All electrical quantities are per-unit. Every type in this module is
immutable after construction and safe to share between threads.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import (
    DisconnectedNetworkError,
    InsufficientDataError,
    ValidationError,
)

# Networks smaller than this keep a dense admittance matrix.
DENSE_BUS_LIMIT = 64

PHASOR = "phasor"
MAGNITUDE = "magnitude"


class Branch(NamedTuple):
    """Undirected branch between buses ``i`` and ``k`` with admittance ``y``."""

    i: int
    k: int
    y: complex


def _canonical_pair(i: int, k: int) -> tuple[int, int]:
    return (i, k) if i < k else (k, i)


@dataclass(frozen=True)
class NetworkModel:
    """A connected grid: buses, branches with complex admittance, shunts.

    ``shunts[i]`` is the total shunt admittance b_i of bus ``i``; one half of
    it enters the admittance-matrix diagonal. The slack shunt is ignored.
    """

    bus_count: int
    branches: tuple[Branch, ...]
    slack_id: int = 0
    shunts: tuple[complex, ...] = ()

    def __post_init__(self):
        m = self.bus_count
        if m < 2:
            raise ValidationError(f"need at least 2 buses, got {m}")
        if not 0 <= self.slack_id < m:
            raise ValidationError(f"slack bus {self.slack_id} out of range")
        branches = tuple(Branch(int(b[0]), int(b[1]), complex(b[2])) for b in self.branches)
        object.__setattr__(self, "branches", branches)
        seen: set[tuple[int, int]] = set()
        for b in branches:
            if b.i == b.k:
                raise ValidationError(f"self-loop branch at bus {b.i}")
            if not (0 <= b.i < m and 0 <= b.k < m):
                raise ValidationError(f"branch ({b.i},{b.k}) endpoint out of range")
            pair = _canonical_pair(b.i, b.k)
            if pair in seen:
                raise ValidationError(f"duplicate branch {pair}")
            seen.add(pair)
            if b.y == 0 or not (np.isfinite(b.y.real) and np.isfinite(b.y.imag)):
                raise ValidationError(f"branch {pair} has invalid admittance {b.y}")
        shunts = tuple(complex(s) for s in self.shunts) if self.shunts else (0j,) * m
        if len(shunts) != m:
            raise ValidationError(f"expected {m} shunts, got {len(shunts)}")
        object.__setattr__(self, "shunts", shunts)
        self._check_connected()

    def _check_connected(self):
        adj = self.adjacency()
        seen = {self.slack_id}
        stack = [self.slack_id]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != self.bus_count:
            missing = frozenset(range(self.bus_count)) - seen
            raise DisconnectedNetworkError(missing)

    def adjacency(self) -> dict[int, frozenset[int]]:
        """Neighbor sets keyed by bus index."""
        adj: dict[int, set[int]] = {i: set() for i in range(self.bus_count)}
        for b in self.branches:
            adj[b.i].add(b.k)
            adj[b.k].add(b.i)
        return {i: frozenset(s) for i, s in adj.items()}

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        """Canonical (min, max) pairs of all branches."""
        return frozenset(_canonical_pair(b.i, b.k) for b in self.branches)

    def neighbors(self, i: int) -> frozenset[int]:
        return self.adjacency()[i]

    def two_hop(self, i: int) -> frozenset[int]:
        """Buses exactly two hops from ``i`` (neighbors of neighbors)."""
        adj = self.adjacency()
        direct = adj[i]
        out: set[int] = set()
        for k in direct:
            out |= adj[k]
        return frozenset(out - direct - {i})

    def non_slack(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.bus_count) if i != self.slack_id)


def build_admittance(network: NetworkModel, force_dense: bool | None = None):
    """Assemble the bus admittance matrix Y of ``network``.

    Off-diagonal (i, k) entries are -y_ik for each branch; each diagonal
    entry is the sum of incident branch admittances plus half the bus shunt.
    A branch touching the slack therefore shows up in the neighbor's
    diagonal, which is what makes the slack-reduced matrix invertible.

    Returns a dense complex array below ``DENSE_BUS_LIMIT`` buses and a
    sparse CSR matrix above, unless ``force_dense`` overrides the choice.
    """
    m = network.bus_count
    dense = m < DENSE_BUS_LIMIT if force_dense is None else force_dense
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    diag = np.zeros(m, dtype=complex)
    for b in network.branches:
        rows += [b.i, b.k]
        cols += [b.k, b.i]
        vals += [-b.y, -b.y]
        diag[b.i] += b.y
        diag[b.k] += b.y
    for i in range(m):
        if i != network.slack_id:
            diag[i] += network.shunts[i] / 2.0
    rows += list(range(m))
    cols += list(range(m))
    vals += list(diag)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m, m), dtype=complex)
    return mat.toarray() if dense else mat


def reduced_admittance(network: NetworkModel) -> tuple[np.ndarray | sp.spmatrix, np.ndarray, tuple[int, ...]]:
    """Slack-reduced admittance system.

    Returns ``(Y_rr, coupling, order)`` where ``order`` lists the non-slack
    buses in index order, ``Y_rr`` is Y restricted to them, and ``coupling``
    is the vector of admittances tying each of them to the slack, so that
    ``Y_rr @ v = i + coupling * v_slack``.
    """
    full = build_admittance(network)
    order = network.non_slack()
    idx = np.asarray(order)
    if sp.issparse(full):
        y_rr = full[idx][:, idx].tocsc()
        coupling = -np.asarray(full[idx][:, [network.slack_id]].todense()).ravel()
    else:
        y_rr = full[np.ix_(idx, idx)]
        coupling = -full[idx, network.slack_id]
    return y_rr, coupling, order


def permute_network(network: NetworkModel, perm: Iterable[int]) -> NetworkModel:
    """Relabel buses: bus ``i`` becomes ``perm[i]``."""
    p = list(perm)
    if sorted(p) != list(range(network.bus_count)):
        raise ValidationError("perm is not a permutation of the bus indices")
    shunts = [0j] * network.bus_count
    for i, s in enumerate(network.shunts):
        shunts[p[i]] = s
    return NetworkModel(
        bus_count=network.bus_count,
        branches=tuple(Branch(p[b.i], p[b.k], b.y) for b in network.branches),
        slack_id=p[network.slack_id],
        shunts=tuple(shunts),
    )


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MeasurementPanel:
    """T x M bus-voltage time series.

    ``values`` is complex in phasor mode and positive real in magnitude
    mode. ``bus_ids[j]`` gives the bus index of column ``j``; it defaults to
    the identity, which is what the simulator produces. Loaded files may
    cover a subset of buses.
    """

    mode: str
    values: np.ndarray
    bus_ids: tuple[int, ...] = ()
    timestamps: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in (PHASOR, MAGNITUDE):
            raise ValidationError(f"unknown panel mode {self.mode!r}")
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError("panel values must be a T x M array")
        if v.shape[0] < 2:
            raise InsufficientDataError(f"need T >= 2 samples, got {v.shape[0]}")
        if self.mode == PHASOR:
            v = v.astype(complex)
        else:
            if np.iscomplexobj(v):
                raise ValidationError("magnitude panel must hold real values")
            v = v.astype(float)
            if np.any(v <= 0):
                raise ValidationError("voltage magnitudes must be strictly positive")
        if not np.all(np.isfinite(v.view(float) if np.iscomplexobj(v) else v)):
            raise ValidationError("panel contains non-finite entries")
        object.__setattr__(self, "values", _freeze(v))
        ids = tuple(self.bus_ids) if self.bus_ids else tuple(range(v.shape[1]))
        if len(ids) != v.shape[1] or len(set(ids)) != len(ids):
            raise ValidationError("bus_ids must be distinct and match the column count")
        object.__setattr__(self, "bus_ids", ids)
        if self.timestamps is not None:
            ts = tuple(float(t) for t in self.timestamps)
            if len(ts) != v.shape[0]:
                raise ValidationError("timestamps length must equal T")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValidationError("timestamps must be strictly increasing")
            object.__setattr__(self, "timestamps", ts)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def bus_count(self) -> int:
        return self.values.shape[1]

    def magnitudes(self) -> np.ndarray:
        """|v| for either mode."""
        return np.abs(self.values) if self.mode == PHASOR else np.asarray(self.values)

    def as_magnitude(self) -> "MeasurementPanel":
        """Magnitude view of the panel (identity for magnitude mode)."""
        if self.mode == MAGNITUDE:
            return self
        return MeasurementPanel(
            mode=MAGNITUDE,
            values=np.abs(self.values),
            bus_ids=self.bus_ids,
            timestamps=self.timestamps,
        )


@dataclass(frozen=True)
class DeltaPanel:
    """First differences of a measurement panel; row 0 is identically zero."""

    mode: str
    values: np.ndarray
    bus_ids: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValidationError("delta panel must be T x M with T >= 2")
        if np.any(v[0] != 0):
            raise ValidationError("first row of a delta panel must be zero")
        object.__setattr__(self, "values", _freeze(v))
        ids = tuple(self.bus_ids) if self.bus_ids else tuple(range(v.shape[1]))
        if len(ids) != v.shape[1] or len(set(ids)) != len(ids):
            raise ValidationError("bus_ids must be distinct and match the column count")
        object.__setattr__(self, "bus_ids", ids)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def bus_count(self) -> int:
        return self.values.shape[1]

    def column(self, bus: int) -> np.ndarray:
        return self.values[:, self.bus_ids.index(bus)]


def difference_panel(panel: MeasurementPanel) -> DeltaPanel:
    """Voltage increments v[t] - v[t-1], with the first row set to zero."""
    if panel.T < 2:
        raise InsufficientDataError("differencing needs at least two samples")
    v = panel.values
    out = np.zeros_like(v)
    out[1:] = v[1:] - v[:-1]
    return DeltaPanel(mode=panel.mode, values=out, bus_ids=panel.bus_ids)


@dataclass(frozen=True)
class NeighborSet:
    """Estimated neighbors of one target bus with their coefficients."""

    target: int
    members: frozenset[int]
    coefficients: Mapping[int, complex] = field(default_factory=dict)
    ambiguous: frozenset[int] = frozenset()

    def __post_init__(self):
        members = frozenset(int(m) for m in self.members)
        if self.target in members:
            raise ValidationError(f"bus {self.target} cannot be its own neighbor")
        object.__setattr__(self, "members", members)
        coeffs = {int(k): complex(v) for k, v in dict(self.coefficients).items()}
        if not set(coeffs) <= members:
            raise ValidationError("coefficients present for non-members")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "ambiguous", frozenset(self.ambiguous))


# Provenance tags for estimated edges.
TAG_AND = "AND"
TAG_OR = "OR"
TAG_AND_OR_ADDED = "AND-OR-added"
_TAGS = frozenset({TAG_AND, TAG_OR, TAG_AND_OR_ADDED})


@dataclass(frozen=True)
class EdgeSet:
    """Undirected estimated topology with per-edge rule provenance.

    ``isolated_buses`` lists buses the AND-OR repair could not reattach;
    it is a diagnostic and does not take part in equality of edge sets.
    """

    edges: frozenset[tuple[int, int]]
    provenance: Mapping[tuple[int, int], str] = field(default_factory=dict)
    isolated_buses: tuple[int, ...] = ()

    def __post_init__(self):
        edges = set()
        for i, k in self.edges:
            if i == k:
                raise ValidationError(f"self-loop edge at bus {i}")
            edges.add(_canonical_pair(int(i), int(k)))
        object.__setattr__(self, "edges", frozenset(edges))
        prov = {_canonical_pair(*e): str(t) for e, t in dict(self.provenance).items()}
        if not set(prov) <= self.edges:
            raise ValidationError("provenance refers to unknown edges")
        if not set(prov.values()) <= _TAGS:
            bad = set(prov.values()) - _TAGS
            raise ValidationError(f"unknown provenance tags {bad}")
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "isolated_buses", tuple(int(b) for b in self.isolated_buses))

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, pair) -> bool:
        return _canonical_pair(*pair) in self.edges

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def canonical_pair(i: int, k: int) -> tuple[int, int]:
    """Public alias used by the rule-combination and metrics modules."""
    return _canonical_pair(i, k)
