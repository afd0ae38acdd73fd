"""Synthetic measurement generation from the linearized grid model.

Voltages are generated directly from the circuit relation Y * dV = dI
plus optional multiplicative meter noise, so every estimation stage can
be validated against exact ground truth. This is the fidelity boundary:
no AC power flow is solved.

Bus loads are modeled as an operating-point current (``base_loads``)
plus a voltage-sensitivity term: each bus carries a shunt admittance
whose draw at nominal voltage is compensated in the operating point.
The shunts damp long-range couplings between voltage increments (they
keep conditional correlations beyond one hop small), while the
compensation keeps mean voltages near 1 pu with a monotone drop away
from the slack bus, which the AND-OR magnitude guard relies on.
"""

from __future__ import annotations

import math
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .connectivity import MI_CAP, gaussian_mutual_information
from .errors import (
    SingularSystemError,
    ValidationError,
)
from .model import (
    MAGNITUDE,
    PHASOR,
    Branch,
    DeltaPanel,
    MeasurementPanel,
    NetworkModel,
    reduced_admittance,
)

# Per-unit branch impedances of the bundled network styles.
LV_IMPEDANCE = 0.0019 + 0.001j
MV_IMPEDANCE = 0.0844 + 0.0444j
# Chains scale their branch impedance with length so the nominal voltage
# profile stays positive under the default loads.
CHAIN_IMPEDANCE_TOTAL = 0.3 + 0.15j

# Ratio of bus shunt admittance to the mean incident branch admittance.
SHUNT_SCALE = 8.0

# Admittance multiplier of slack-incident branches (feeder ties are
# stiffer than distribution branches).
SLACK_TIE_STIFFNESS = 1.0

# Auto slack fluctuation targets this partial correlation between the
# slack column and its adjacent bus's regression: strong enough to make
# the feeder branch statistically identifiable, weak enough that the
# slack's second-order footprint on the adjacent bus's neighbors stays
# well below the selection threshold.
SLACK_TARGET_RHO = 0.22

# AR(1) persistence of the current deviations. Near 1, the current
# increments are close to i.i.d. (which the neighborhood regressions
# assume) while the levels stay stationary around the base loads; plain
# i.i.d. levels would give MA(1) increments whose negative lag-1
# autocorrelation miscalibrates the selection.
INJECTION_PERSISTENCE = 0.98

_BUILTIN_NAMES = (
    "eightbus_radial",
    "eightbus_mesh3",
    "chain_N",
    "lv_suburban_style",
    "mv_urban_style",
    "composite_large",
)

_EIGHTBUS_TREE = ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (2, 6), (6, 7))
_EIGHTBUS_CHORDS = ((1, 6), (4, 7), (5, 7))


def _lv_suburban_edges() -> tuple[tuple[int, int], ...]:
    trunk = [(i, i + 1) for i in range(12)]
    lat_a = [(4, 13), (13, 14), (14, 15)]
    lat_b = [(8, 16), (16, 17), (17, 18), (18, 19)]
    lat_c = [(11, 20), (20, 21), (21, 22), (22, 23)]
    return tuple(trunk + lat_a + lat_b + lat_c)


def _mv_urban_edges() -> tuple[tuple[int, int], ...]:
    feeder1 = [(0, 1)] + [(i, i + 1) for i in range(1, 8)]
    feeder2 = [(0, 9)] + [(i, i + 1) for i in range(9, 16)]
    laterals = [(3, 17), (17, 18), (12, 19)]
    return tuple(feeder1 + feeder2 + laterals)


def _composite_edges(n_chains: int = 7, chain_len: int = 17):
    edges = []
    for c in range(n_chains):
        first = 1 + c * chain_len
        edges.append((0, first))
        for j in range(chain_len - 1):
            edges.append((first + j, first + j + 1))
        edges.append((first + 4, first + 9))  # one loop per chain
    bus_count = 1 + n_chains * chain_len
    return tuple(edges), bus_count


def _with_shunts(
    bus_count: int,
    edges: Sequence[tuple[int, int]],
    impedance: complex,
    slack_id: int,
    shunt_scale: float,
) -> NetworkModel:
    y = 1.0 / complex(impedance)
    branches = []
    incident = np.zeros(bus_count, dtype=complex)
    degree = np.zeros(bus_count)
    for i, k in edges:
        # feeder ties are stiffer than distribution branches
        y_branch = y * SLACK_TIE_STIFFNESS if slack_id in (i, k) else y
        branches.append(Branch(i, k, y_branch))
        incident[i] += y_branch
        incident[k] += y_branch
        degree[i] += 1
        degree[k] += 1
    shunts = np.zeros(bus_count, dtype=complex)
    nonzero = degree > 0
    shunts[nonzero] = 2.0 * shunt_scale * incident[nonzero] / degree[nonzero]
    shunts[slack_id] = 0j
    return NetworkModel(
        bus_count=bus_count,
        branches=tuple(branches),
        slack_id=slack_id,
        shunts=tuple(shunts),
    )


def builtin_network(
    name: str,
    impedance: complex | None = None,
    shunt_scale: float | None = None,
) -> NetworkModel:
    """One of the bundled synthetic networks; bus 0 is always the slack.

    ``chain_N`` takes a literal length, e.g. ``chain_30`` is a 30-bus path.
    ``impedance`` and ``shunt_scale`` override the per-style defaults.
    """
    scale = SHUNT_SCALE if shunt_scale is None else float(shunt_scale)
    m = re.fullmatch(r"chain_(\d+)", name)
    if m:
        n = int(m.group(1))
        if n < 2:
            raise ValidationError("chain needs at least 2 buses")
        edges = tuple((i, i + 1) for i in range(n - 1))
        z = CHAIN_IMPEDANCE_TOTAL / n if impedance is None else impedance
        return _with_shunts(n, edges, z, 0, scale)
    if name == "eightbus_radial":
        z = LV_IMPEDANCE if impedance is None else impedance
        return _with_shunts(8, _EIGHTBUS_TREE, z, 0, scale)
    if name == "eightbus_mesh3":
        z = LV_IMPEDANCE if impedance is None else impedance
        return _with_shunts(8, _EIGHTBUS_TREE + _EIGHTBUS_CHORDS, z, 0, scale)
    if name == "lv_suburban_style":
        z = LV_IMPEDANCE if impedance is None else impedance
        return _with_shunts(24, _lv_suburban_edges(), z, 0, scale)
    if name == "mv_urban_style":
        z = MV_IMPEDANCE if impedance is None else impedance
        return _with_shunts(20, _mv_urban_edges(), z, 0, scale)
    if name == "composite_large":
        z = LV_IMPEDANCE if impedance is None else impedance
        edges, bus_count = _composite_edges()
        return _with_shunts(bus_count, edges, z, 0, scale)
    raise ValidationError(
        f"unknown network {name!r}; expected one of {', '.join(_BUILTIN_NAMES)}"
    )


def add_loops(
    network: NetworkModel,
    pairs: Sequence[tuple[int, int]],
    admittance: complex | None = None,
) -> NetworkModel:
    """Network with extra branches closing loops; keeps shunts as stored."""
    if admittance is None:
        admittance = complex(np.mean([b.y for b in network.branches]))
    extra = tuple(Branch(i, k, admittance) for i, k in pairs)
    return NetworkModel(
        bus_count=network.bus_count,
        branches=network.branches + extra,
        slack_id=network.slack_id,
        shunts=network.shunts,
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Inputs of one synthetic measurement scenario.

    ``injection_sigma`` and ``base_loads`` accept a scalar or one value
    per bus (per-unit current; loads are negative). ``slack_sigma`` is the
    standard deviation of the slack-voltage fluctuation; ``None`` scales it
    automatically to the median bus-level response, 0 pins the slack.
    """

    network: str | Path | NetworkModel
    T: int = 2000
    injection_sigma: float | Sequence[float] = 0.01
    base_loads: float | Sequence[float] = -0.05
    noise_level: float = 0.0
    seed: int = 0
    mode: str = MAGNITUDE
    slack_sigma: float | None = None
    injection_persistence: float = INJECTION_PERSISTENCE

    def __post_init__(self):
        if self.T < 2:
            raise ValidationError("scenario needs T >= 2")
        if self.noise_level < 0:
            raise ValidationError("noise_level must be nonnegative")
        if self.mode not in (PHASOR, MAGNITUDE):
            raise ValidationError(f"unknown mode {self.mode!r}")
        sig = np.atleast_1d(np.asarray(self.injection_sigma, dtype=float))
        if np.any(sig <= 0):
            raise ValidationError("injection_sigma must be positive")
        if self.slack_sigma is not None and self.slack_sigma < 0:
            raise ValidationError("slack_sigma must be nonnegative")
        if not 0.0 <= self.injection_persistence < 1.0:
            raise ValidationError("injection_persistence must be in [0, 1)")


def resolve_network(spec: str | Path | NetworkModel) -> NetworkModel:
    if isinstance(spec, NetworkModel):
        return spec
    if isinstance(spec, Path):
        from .io import load_network

        return load_network(spec)
    if isinstance(spec, str):
        try:
            return builtin_network(spec)
        except ValidationError:
            p = Path(spec)
            if p.exists():
                from .io import load_network

                return load_network(p)
            raise
    raise ValidationError(f"cannot interpret network spec {spec!r}")


def _per_bus(value, bus_count: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(bus_count, float(arr))
    if arr.shape != (bus_count,):
        raise ValidationError(f"{name} must be scalar or length {bus_count}")
    return arr


def synth_injections(cfg: ScenarioConfig, network: NetworkModel | None = None) -> np.ndarray:
    """T x M i.i.d. complex Gaussian current-injection innovations.

    Real and imaginary parts each carry half the variance so the complex
    modulus has standard deviation ``injection_sigma``. With the default
    persistence near 1, these innovations match the current increments in
    scale and distribution. Reproducible for a fixed seed. The slack
    column is drawn too but ignored by the solver.
    """
    net = resolve_network(cfg.network) if network is None else network
    m = net.bus_count
    sigma = _per_bus(cfg.injection_sigma, m, "injection_sigma")
    rng = np.random.default_rng(cfg.seed)
    scale = sigma / np.sqrt(2.0)
    re = rng.standard_normal((cfg.T, m)) * scale
    im = rng.standard_normal((cfg.T, m)) * scale
    return re + 1j * im


def _auto_slack_sigma(network: NetworkModel, cfg: ScenarioConfig) -> float:
    """Slack fluctuation scaled to a target partial correlation.

    Inside a slack-adjacent bus's regression, the slack column competes
    with that bus's idiosyncratic residual (its own injection over its
    diagonal admittance). Requiring partial correlation rho gives

        sigma_slack = rho/sqrt(1-rho^2) * sigma_inj / (sqrt(2) |y_tie|)

    independent of the diagonal. The weakest tie sets the scale when the
    slack feeds several buses.
    """
    sigma = _per_bus(cfg.injection_sigma, network.bus_count, "injection_sigma")
    rho = SLACK_TARGET_RHO
    worst = 0.0
    for b in network.branches:
        if network.slack_id in (b.i, b.k):
            other = b.k if b.i == network.slack_id else b.i
            worst = max(worst, sigma[other] / abs(b.y))
    if worst == 0.0:
        raise ValidationError("slack bus has no incident branch")
    return rho / math.sqrt(1.0 - rho * rho) * worst / math.sqrt(2.0)


def _operating_profile(network: NetworkModel, base: np.ndarray, order) -> np.ndarray:
    """Nominal non-slack voltages of the shunt-free line network at 1 pu.

    Shunt draw is later compensated at these voltages, so the mean profile
    keeps the physical cumulative drop away from the feed-in point even
    though the fluctuation dynamics see the shunted matrix.
    """
    bare = NetworkModel(
        bus_count=network.bus_count,
        branches=network.branches,
        slack_id=network.slack_id,
        shunts=(0j,) * network.bus_count,
    )
    y0, coupling0, order0 = reduced_admittance(bare)
    assert order0 == order
    rhs = base + coupling0
    if sp.issparse(y0):
        vbar = spla.spsolve(y0.tocsc(), rhs)
    else:
        vbar = np.linalg.solve(y0, rhs)
    return np.asarray(vbar, dtype=complex)


def _persist(innovations: np.ndarray, phi: float) -> np.ndarray:
    """Stationary AR(1) accumulation of i.i.d. innovations along axis 0."""
    if phi == 0.0:
        return innovations
    out = np.empty_like(innovations)
    out[0] = innovations[0] / np.sqrt(1.0 - phi * phi)
    for t in range(1, innovations.shape[0]):
        out[t] = phi * out[t - 1] + innovations[t]
    return out


def solve_voltages(
    network: NetworkModel,
    injections: np.ndarray,
    cfg: ScenarioConfig,
) -> MeasurementPanel:
    """Bus voltages for currents fluctuating around the operating point.

    Current deviations follow a stationary AR(1) driven by the given
    innovations, so absolute currents are base + noise while current
    increments are close to i.i.d. The slack voltage is 1 pu plus a
    fluctuation built the same way; non-slack voltages solve the
    slack-reduced system at every step, so panel increments satisfy
    Y_reduced dV = dI for the current increments.
    """
    m = network.bus_count
    inj = np.asarray(injections, dtype=complex)
    if inj.shape != (cfg.T, m):
        raise ValidationError(f"injections must be {cfg.T} x {m}")
    y_rr, coupling, order = reduced_admittance(network)
    idx = list(order)
    base = _per_bus(cfg.base_loads, m, "base_loads").astype(complex)[idx]
    vbar = _operating_profile(network, base, order)
    comp = np.asarray([network.shunts[i] / 2.0 for i in order], dtype=complex) * vbar

    slack_sigma = cfg.slack_sigma
    if slack_sigma is None:
        slack_sigma = _auto_slack_sigma(network, cfg)
    rng = np.random.default_rng((cfg.seed, 1))
    phi = cfg.injection_persistence
    v_slack = 1.0 + _persist(slack_sigma * rng.standard_normal(cfg.T), phi)

    deviations = _persist(inj[:, idx], phi)
    rhs = deviations + base[None, :] + comp[None, :] + np.outer(v_slack, coupling)
    try:
        if sp.issparse(y_rr):
            lu = spla.splu(y_rr.tocsc())
            sol = lu.solve(rhs.T.astype(complex))
        else:
            sol = np.linalg.solve(y_rr, rhs.T)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"reduced admittance is singular: {exc}") from exc

    values = np.empty((cfg.T, m), dtype=complex)
    values[:, idx] = sol.T
    values[:, network.slack_id] = v_slack
    if np.any(np.abs(values) <= 0):
        raise ValidationError("scenario produced non-positive voltage magnitudes")
    if cfg.mode == MAGNITUDE:
        return MeasurementPanel(mode=MAGNITUDE, values=np.abs(values))
    return MeasurementPanel(mode=PHASOR, values=values)


def add_meter_noise(panel: MeasurementPanel, level: float, seed) -> MeasurementPanel:
    """Multiply every magnitude reading by (1 + e), e ~ N(0, level^2).

    Phasor readings keep their angle. ``level`` 0 returns the panel as is.
    """
    if level < 0:
        raise ValidationError("noise level must be nonnegative")
    if level == 0:
        return panel
    rng = np.random.default_rng(seed)
    factor = 1.0 + level * rng.standard_normal(panel.values.shape)
    return MeasurementPanel(
        mode=panel.mode,
        values=panel.values * factor,
        bus_ids=panel.bus_ids,
        timestamps=panel.timestamps,
    )


@dataclass(frozen=True)
class ScenarioRun:
    config: ScenarioConfig
    network: NetworkModel
    injections: np.ndarray
    panel: MeasurementPanel

    @property
    def truth(self) -> frozenset[tuple[int, int]]:
        return self.network.edges


def run_scenario(cfg: ScenarioConfig) -> ScenarioRun:
    """Generate one ground-truthed measurement panel."""
    network = resolve_network(cfg.network)
    injections = synth_injections(cfg, network)
    panel = solve_voltages(network, injections, cfg)
    if cfg.noise_level > 0:
        panel = add_meter_noise(panel, cfg.noise_level, (cfg.seed, 2))
    return ScenarioRun(config=cfg, network=network, injections=injections, panel=panel)


# --- statistical diagnostics ----------------------------------------------

def _real_series(col: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(col):
        return np.concatenate([col.real, col.imag])
    return np.asarray(col, dtype=float)


def diagnostic_mi_matrix(delta: DeltaPanel) -> np.ndarray:
    """Pairwise Gaussian mutual information between increment columns.

    Degenerate (constant) columns yield 0 off-diagonal; the diagonal is
    the documented cap.
    """
    m = delta.bus_count
    out = np.zeros((m, m))
    cols = [_real_series(delta.values[:, j]) for j in range(m)]
    variances = [float(np.var(c)) for c in cols]
    for i in range(m):
        out[i, i] = MI_CAP
        for k in range(i + 1, m):
            if variances[i] == 0.0 or variances[k] == 0.0:
                val = 0.0
            else:
                val = gaussian_mutual_information(cols[i], cols[k])
            out[i, k] = out[k, i] = val
    return out


def diagnostic_autocorr(series: np.ndarray, maxlag: int) -> np.ndarray:
    """Sample autocorrelation r(0..maxlag) with per-lag 1/(T-l) scaling."""
    x = np.asarray(series, dtype=float).ravel()
    t = x.size
    if maxlag >= t:
        raise ValidationError("maxlag must be smaller than the series length")
    x = x - x.mean()
    c0 = float(x @ x) / t
    if c0 == 0.0:
        raise ValidationError("zero-variance series has no autocorrelation")
    out = np.empty(maxlag + 1)
    out[0] = 1.0
    for lag in range(1, maxlag + 1):
        c = float(x[:-lag] @ x[lag:]) / (t - lag)
        out[lag] = c / c0
    return out


def conditional_correlation(delta: DeltaPanel, network: NetworkModel) -> np.ndarray:
    """Partial correlations of increment columns given true neighborhoods.

    Entry [i, k] conditions the pair on the columns of N(i) minus k, so
    adjacent pairs keep their direct dependence visible. The matrix is not
    symmetric because rows choose the conditioning set. Phasor panels must
    be reduced to magnitudes first.
    """
    if delta.mode == PHASOR:
        raise ValidationError("conditional correlations expect magnitude increments")
    vals = np.asarray(delta.values, dtype=float)
    if vals.shape[0] < vals.shape[1] + 2:
        raise ValidationError("too few samples for the conditioning-set size")
    m = delta.bus_count
    cov = np.cov(vals, rowvar=False)
    adj = network.adjacency()
    id_to_col = {b: j for j, b in enumerate(delta.bus_ids)}
    out = np.eye(m)
    for i_col, i_bus in enumerate(delta.bus_ids):
        cond_all = [id_to_col[b] for b in sorted(adj[i_bus]) if b in id_to_col]
        for k_col in range(m):
            if k_col == i_col:
                continue
            cond = [c for c in cond_all if c != k_col]
            out[i_col, k_col] = _partial_corr(cov, i_col, k_col, cond)
    return out


def _partial_corr(cov: np.ndarray, i: int, k: int, cond: list[int]) -> float:
    if not cond:
        denom = np.sqrt(cov[i, i] * cov[k, k])
        return float(cov[i, k] / denom) if denom > 0 else 0.0
    s_cc = cov[np.ix_(cond, cond)]
    try:
        chol = np.linalg.cholesky(s_cc)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"rank-deficient conditioning block for pair ({i},{k})"
        ) from exc
    s_ci = np.linalg.solve(chol, cov[cond, i])
    s_ck = np.linalg.solve(chol, cov[cond, k])
    vik = cov[i, k] - s_ci @ s_ck
    vii = cov[i, i] - s_ci @ s_ci
    vkk = cov[k, k] - s_ck @ s_ck
    if vii <= 0 or vkk <= 0:
        return 0.0
    return float(vik / np.sqrt(vii * vkk))
