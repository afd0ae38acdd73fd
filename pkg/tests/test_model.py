"""Core model: admittance assembly, differencing, type invariants."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from gridtopo.errors import (
    DisconnectedNetworkError,
    InsufficientDataError,
    ValidationError,
)
from gridtopo.model import (
    Branch,
    DeltaPanel,
    EdgeSet,
    MeasurementPanel,
    NeighborSet,
    NetworkModel,
    build_admittance,
    difference_panel,
    permute_network,
    reduced_admittance,
)


def two_bus(y=1 + 0j) -> NetworkModel:
    return NetworkModel(bus_count=2, branches=(Branch(0, 1, y),), slack_id=0)


def test_two_bus_admittance_single_branch_rule():
    y = build_admittance(two_bus())
    expected = np.array([[1, -1], [-1, 1]], dtype=complex)
    np.testing.assert_allclose(y, expected)


def test_admittance_matches_displayed_six_bus_mesh():
    # Mesh of six numbered buses hanging off a slack attached to bus 1:
    # edges 1-2, 1-3, 2-4, 3-4, 3-5, 5-6 plus the 0-1 slack tie.
    rng = np.random.default_rng(3)

    def rnd():
        return complex(rng.uniform(1, 5), rng.uniform(-2, 2))

    y01, y12, y13, y24, y34, y35, y56 = (rnd() for _ in range(7))
    shunts = [0j] + [complex(rng.uniform(0, 0.5), 0) for _ in range(6)]
    net = NetworkModel(
        bus_count=7,
        branches=(
            Branch(0, 1, y01),
            Branch(1, 2, y12),
            Branch(1, 3, y13),
            Branch(2, 4, y24),
            Branch(3, 4, y34),
            Branch(3, 5, y35),
            Branch(5, 6, y56),
        ),
        slack_id=0,
        shunts=tuple(shunts),
    )
    full = build_admittance(net)
    sub = full[1:, 1:]
    b = shunts
    expected = np.array(
        [
            [y01 + y12 + y13 + b[1] / 2, -y12, -y13, 0, 0, 0],
            [-y12, y12 + y24 + b[2] / 2, 0, -y24, 0, 0],
            [-y13, 0, y13 + y34 + y35 + b[3] / 2, -y34, -y35, 0],
            [0, -y24, -y34, y24 + y34 + b[4] / 2, 0, 0],
            [0, 0, -y35, 0, y35 + y56 + b[5] / 2, -y56],
            [0, 0, 0, 0, -y56, y56 + b[6] / 2],
        ]
    )
    np.testing.assert_allclose(sub, expected, rtol=1e-14)


def test_admittance_symmetric_and_reduced_nonsingular():
    for net in _sample_networks():
        y = build_admittance(net)
        if sp.issparse(y):
            y = y.toarray()
        np.testing.assert_array_equal(y, y.T)
        y_rr, _, _ = reduced_admittance(net)
        if sp.issparse(y_rr):
            y_rr = y_rr.toarray()
        # factorization must succeed and be well scaled
        np.linalg.cholesky  # noqa: B018 - complex non-hermitian, use LU via solve
        sol = np.linalg.solve(y_rr, np.ones(y_rr.shape[0], dtype=complex))
        assert np.all(np.isfinite(sol.view(float)))


def _sample_networks():
    from gridtopo.simulator import builtin_network

    return [
        two_bus(),
        builtin_network("chain_5"),
        builtin_network("eightbus_radial"),
        builtin_network("eightbus_mesh3"),
        builtin_network("lv_suburban_style"),
        builtin_network("mv_urban_style"),
        builtin_network("composite_large"),
    ]


def test_disconnected_network_lists_component():
    with pytest.raises(DisconnectedNetworkError) as exc:
        NetworkModel(
            bus_count=4,
            branches=(Branch(0, 1, 1 + 0j), Branch(2, 3, 1 + 0j)),
            slack_id=0,
        )
    assert exc.value.component == frozenset({2, 3})


def test_duplicate_branch_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        NetworkModel(
            bus_count=3,
            branches=(Branch(0, 1, 1 + 0j), Branch(1, 0, 2 + 0j), Branch(1, 2, 1 + 0j)),
        )


def test_zero_admittance_rejected():
    with pytest.raises(ValidationError, match="admittance"):
        NetworkModel(bus_count=2, branches=(Branch(0, 1, 0j),))


def test_permuted_network_gives_permuted_matrix():
    net = _sample_networks()[3]
    rng = np.random.default_rng(11)
    perm = rng.permutation(net.bus_count)
    permuted = permute_network(net, perm)
    y = build_admittance(net)
    y2 = build_admittance(permuted)
    p = np.zeros((net.bus_count, net.bus_count))
    p[perm, np.arange(net.bus_count)] = 1.0
    np.testing.assert_allclose(p @ y @ p.T, y2, atol=1e-14)


def test_difference_panel_basics():
    vals = np.array([[1.00, 2.0], [1.02, 2.0], [1.01, 2.0]])
    panel = MeasurementPanel(mode="magnitude", values=vals)
    delta = difference_panel(panel)
    np.testing.assert_allclose(delta.values[:, 0], [0.0, 0.02, -0.01], atol=1e-15)
    np.testing.assert_array_equal(delta.values[:, 1], [0.0, 0.0, 0.0])
    assert delta.mode == "magnitude"
    assert np.all(delta.values[0] == 0)


def test_difference_requires_two_samples():
    with pytest.raises(InsufficientDataError):
        MeasurementPanel(mode="magnitude", values=np.ones((1, 3)))


def test_difference_then_cumsum_roundtrip():
    rng = np.random.default_rng(0)
    vals = 1.0 + 0.01 * rng.standard_normal((50, 4))
    panel = MeasurementPanel(mode="magnitude", values=vals)
    delta = difference_panel(panel)
    rebuilt = np.cumsum(delta.values, axis=0) + vals[0]
    np.testing.assert_allclose(rebuilt, vals, atol=1e-12)


def test_panel_rejects_nonpositive_magnitudes():
    with pytest.raises(ValidationError):
        MeasurementPanel(mode="magnitude", values=np.array([[1.0, -0.5], [1.0, 0.5]]))


def test_panel_is_immutable():
    panel = MeasurementPanel(mode="magnitude", values=np.ones((3, 2)))
    with pytest.raises(ValueError):
        panel.values[0, 0] = 2.0


def test_phasor_panel_magnitude_view():
    vals = np.array([[1 + 1j, 2j], [1 - 1j, -2j], [2 + 0j, 1 + 0j]])
    panel = MeasurementPanel(mode="phasor", values=vals)
    mag = panel.as_magnitude()
    np.testing.assert_allclose(mag.values, np.abs(vals))
    assert mag.bus_ids == panel.bus_ids


def test_neighbor_set_rejects_self_membership():
    with pytest.raises(ValidationError):
        NeighborSet(target=1, members=frozenset({1, 2}))


def test_edge_set_canonicalizes_pairs():
    es = EdgeSet(edges=frozenset({(3, 1), (0, 2)}), provenance={(3, 1): "AND"})
    assert (1, 3) in es
    assert es.provenance[(1, 3)] == "AND"
    with pytest.raises(ValidationError):
        EdgeSet(edges=frozenset({(2, 2)}))


def test_delta_panel_requires_zero_first_row():
    with pytest.raises(ValidationError):
        DeltaPanel(mode="magnitude", values=np.array([[0.1, 0.0], [0.0, 0.0]]))
